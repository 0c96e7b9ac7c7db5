#pragma once

#include "myo/common.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace myo {

/// Flat `key = value` document. `#` starts a comment; blank lines are ignored.
struct KvDoc {
  std::map<std::string, std::string> values;
  std::map<std::string, int> line_of;
  std::string source = "<string>";

  bool has(const std::string& key) const { return values.count(key) != 0; }
};

inline std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string_view::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return std::string(s.substr(a, b - a + 1));
}

inline KvDoc parse_kv(const std::string& text, const std::string& source = "<string>") {
  KvDoc doc;
  doc.source = source;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(n) + ": expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(n) + ": empty key");
    if (doc.values.count(key))
      throw ConfigError(source + ":" + std::to_string(n) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(doc.line_of[key]) + ")");
    doc.values[key] = value;
    doc.line_of[key] = n;
  }
  return doc;
}

inline KvDoc read_kv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv(ss.str(), path.string());
}

enum class KvType { Int, Real, Bool, String, IntList, RealList };

inline std::string_view kv_type_name(KvType t) {
  switch (t) {
    case KvType::Int: return "int";
    case KvType::Real: return "real";
    case KvType::Bool: return "bool";
    case KvType::String: return "string";
    case KvType::IntList: return "int list";
    case KvType::RealList: return "real list";
  }
  return "?";
}

struct KvField {
  std::string key;
  KvType type;
  std::string default_value;  // empty = no default
  std::string doc;
};

using KvSchema = std::vector<KvField>;

namespace kv_detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t pos = 0;
      out = static_cast<T>(std::stod(s, &pos));
      return pos == s.size();
    } catch (const std::exception&) {
      return false;
    }
  } else {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
  }
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "0" || s == "no") return out = false, true;
  return false;
}

inline bool type_checks(KvType t, const std::string& v) {
  long long i;
  double d;
  bool b;
  switch (t) {
    case KvType::Int: return parse_number(v, i);
    case KvType::Real: return parse_number(v, d);
    case KvType::Bool: return parse_bool(v, b);
    case KvType::String: return true;
    case KvType::IntList:
      for (const auto& x : split_list(v))
        if (!parse_number(x, i)) return false;
      return true;
    case KvType::RealList:
      for (const auto& x : split_list(v))
        if (!parse_number(x, d)) return false;
      return true;
  }
  return false;
}

}  // namespace kv_detail

/// Rejects unknown keys and values that do not parse as the declared type.
inline void validate_kv(const KvDoc& doc, const KvSchema& schema) {
  std::map<std::string, const KvField*> index;
  for (const auto& f : schema) index[f.key] = &f;
  for (const auto& [key, value] : doc.values) {
    const auto it = index.find(key);
    const std::string where = doc.source + ":" + std::to_string(doc.line_of.at(key));
    if (it == index.end()) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!kv_detail::type_checks(it->second->type, value))
      throw ConfigError(where + ": field '" + key + "' expects " + std::string(kv_type_name(it->second->type)) +
                        ", got '" + value + "'");
  }
}

/// Typed access to a validated document, falling back to schema defaults.
class KvReader {
 public:
  KvReader(KvDoc doc, KvSchema schema) : doc_(std::move(doc)), schema_(std::move(schema)) {
    validate_kv(doc_, schema_);
    for (const auto& f : schema_) fields_[f.key] = &f;
  }
  KvReader(const KvReader&) = delete;
  KvReader& operator=(const KvReader&) = delete;

  bool has(const std::string& key) const { return doc_.has(key); }

  std::string str(const std::string& key) const { return raw(key); }

  long long integer(const std::string& key) const {
    long long v = 0;
    if (!kv_detail::parse_number(raw(key), v)) bad(key);
    return v;
  }

  double real(const std::string& key) const {
    double v = 0;
    if (!kv_detail::parse_number(raw(key), v)) bad(key);
    return v;
  }

  bool boolean(const std::string& key) const {
    bool v = false;
    if (!kv_detail::parse_bool(raw(key), v)) bad(key);
    return v;
  }

  std::vector<long long> int_list(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& s : kv_detail::split_list(raw(key))) {
      long long v = 0;
      if (!kv_detail::parse_number(s, v)) bad(key);
      out.push_back(v);
    }
    return out;
  }

  std::vector<double> real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : kv_detail::split_list(raw(key))) {
      double v = 0;
      if (!kv_detail::parse_number(s, v)) bad(key);
      out.push_back(v);
    }
    return out;
  }

 private:
  std::string raw(const std::string& key) const {
    const auto it = doc_.values.find(key);
    if (it != doc_.values.end()) return it->second;
    const auto f = fields_.find(key);
    if (f == fields_.end()) throw std::invalid_argument("key not in schema: " + key);
    const KvType t = f->second->type;
    if (f->second->default_value.empty() && (t == KvType::Int || t == KvType::Real || t == KvType::Bool))
      throw ConfigError("missing required field '" + key + "'");
    return f->second->default_value;
  }

  [[noreturn]] void bad(const std::string& key) const {
    throw ConfigError("field '" + key + "' has an invalid value");
  }

  KvDoc doc_;
  KvSchema schema_;
  std::map<std::string, const KvField*> fields_;
};

/// Schema rendered as an annotated config file with every default.
inline std::string render_schema(const KvSchema& schema) {
  std::string out;
  for (const auto& f : schema) {
    out += "# " + f.doc + " (" + std::string(kv_type_name(f.type)) + ")\n";
    out += (f.default_value.empty() ? "# " : "") + f.key + " = " + f.default_value + "\n";
  }
  return out;
}

}  // namespace myo
