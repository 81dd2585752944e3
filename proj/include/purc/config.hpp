#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "purc/detail/csv.hpp"
#include "purc/error.hpp"

namespace purc {

/// Small TOML subset used for run configuration:
///
///   # comment
///   key = "text" | 1.5 | true | ["a", "b"] | [1, 2.5]
///   [section]          -> later keys are stored as "section.key"
///
/// Arrays are single-line and homogeneous. Nothing else (inline tables,
/// multi-line strings, dates) is accepted.
class Config {
 public:
  using Value = std::variant<bool, double, std::string, std::vector<double>,
                             std::vector<std::string>>;

  static Config parse(std::istream& in, const std::string& source) {
    Config c;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = source + ":" + std::to_string(lineno);
      const std::string s = trimmed(strip_comment(line));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ParseError(where + ": unterminated section header");
        section = trimmed(s.substr(1, s.size() - 2));
        if (section.empty()) throw ParseError(where + ": empty section name");
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
      const std::string key = trimmed(s.substr(0, eq));
      if (key.empty()) throw ParseError(where + ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full)) throw ParseError(where + ": duplicate key '" + full + "'");
      c.values_[full] = parse_value(trimmed(s.substr(eq + 1)), where);
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config file " + path);
    return parse(in, path);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, Value v) { values_[key] = std::move(v); }
  const std::map<std::string, Value>& values() const { return values_; }

  template <class T>
  T get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("config is missing '" + key + "'");
    if (auto* v = std::get_if<T>(&it->second)) return *v;
    // An empty array parses as a list of numbers; let it stand in for strings.
    if constexpr (std::is_same_v<T, std::vector<std::string>>)
      if (auto* d = std::get_if<std::vector<double>>(&it->second); d && d->empty()) return {};
    throw UsageError("config key '" + key + "' has the wrong type");
  }
  template <class T>
  T get(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  /// Canonical text: sections grouped, keys sorted, numbers in shortest
  /// round-trip form. parse(to_string()) reproduces the same values.
  std::string to_string() const {
    std::ostringstream os;
    std::string current;
    // Top-level keys first, so they are not captured by a section.
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& [key, v] : values_) {
        const auto dot = key.find('.');
        if ((dot == std::string::npos) != (pass == 0)) continue;
        std::string name = key;
        if (dot != std::string::npos) {
          const std::string sec = key.substr(0, dot);
          name = key.substr(dot + 1);
          if (sec != current) {
            os << "\n[" << sec << "]\n";
            current = sec;
          }
        }
        os << name << " = " << format(v) << '\n';
      }
    return os.str();
  }

 private:
  std::map<std::string, Value> values_;

  static std::string trimmed(const std::string& s) { return std::string(detail::trim(s)); }

  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  static std::string unquote(const std::string& s, const std::string& where) {
    if (s.size() < 2 || s.front() != '"' || s.back() != '"')
      throw ParseError(where + ": expected a quoted string, got '" + s + "'");
    const std::string body = s.substr(1, s.size() - 2);
    if (body.find('"') != std::string::npos || body.find('\\') != std::string::npos)
      throw ParseError(where + ": escapes are not supported in strings");
    return body;
  }

  static double number(const std::string& s, const std::string& where) {
    return detail::parse_double(s, where);
  }

  static Value parse_value(const std::string& s, const std::string& where) {
    if (s.empty()) throw ParseError(where + ": missing value");
    if (s == "true") return true;
    if (s == "false") return false;
    if (s.front() == '"') return unquote(s, where);
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError(where + ": arrays must fit on one line");
      const std::string body = trimmed(s.substr(1, s.size() - 2));
      if (body.empty()) return std::vector<double>{};
      std::vector<std::string> items;
      std::string cur;
      bool quoted = false;
      for (char ch : body) {
        if (ch == '"') quoted = !quoted;
        if (ch == ',' && !quoted) {
          items.push_back(trimmed(cur));
          cur.clear();
        } else {
          cur += ch;
        }
      }
      if (!trimmed(cur).empty()) items.push_back(trimmed(cur));
      if (items.front().front() == '"') {
        std::vector<std::string> out;
        for (const auto& it : items) out.push_back(unquote(it, where));
        return out;
      }
      std::vector<double> out;
      for (const auto& it : items) out.push_back(number(it, where));
      return out;
    }
    return number(s, where);
  }

  static std::string num(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    std::string s(buf, end);
    // Keep a decimal point or exponent so the value reads back as a float.
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
  }

  static std::string format(const Value& v) {
    struct {
      std::string operator()(bool b) const { return b ? "true" : "false"; }
      std::string operator()(double d) const { return num(d); }
      std::string operator()(const std::string& s) const { return '"' + s + '"'; }
      std::string operator()(const std::vector<double>& xs) const {
        std::string out = "[";
        for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + num(xs[i]);
        return out + "]";
      }
      std::string operator()(const std::vector<std::string>& xs) const {
        std::string out = "[";
        for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", \"" : "\"") + xs[i] + '"';
        return out + "]";
      }
    } visitor;
    return std::visit(visitor, v);
  }
};

/// 64-bit FNV-1a, used to fingerprint configurations in run manifests.
inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace purc
