#pragma once

// Run configuration: a single JSON document, loadable from JSON or from a
// TOML subset, with field-path-labelled access and bit-stable emission of
// CSV/JSON artifacts (every float printed with 17 significant digits).

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gwhf/errors.hpp"
#include "gwhf/util.hpp"
#include "json.hpp"

namespace gwhf {

using Json = nlohmann::json;

namespace detail {

// ---- TOML subset parser -> Json ------------------------------------------
//
// Supported: '#' comments, [table] and [dotted.table] headers, bare or
// "quoted" (possibly dotted) keys, basic strings with \" \\ \n \t \r
// escapes, booleans, integers (underscore separators allowed), floats
// (inf/nan included), and arrays -- nested, multiline, trailing comma.
// Rejected with a line-numbered error: dates, inline tables, literal or
// multiline strings, arrays of tables.
struct TomlParser {
  const std::string& s;
  size_t i = 0;
  int line = 1;
  Json root = Json::object();
  Json* table = nullptr;

  explicit TomlParser(const std::string& text) : s(text), table(&root) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw InvalidInput("toml line " + std::to_string(line) + ": " + msg);
  }

  bool eof() const { return i >= s.size(); }
  char peek() const { return eof() ? '\0' : s[i]; }
  char get() {
    const char c = s[i++];
    if (c == '\n') ++line;
    return c;
  }

  void skip_blank(bool cross_lines) {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r') {
        get();
      } else if (c == '#') {
        while (!eof() && peek() != '\n') get();
      } else if (c == '\n' && cross_lines) {
        get();
      } else {
        break;
      }
    }
  }

  void expect_line_end() {
    skip_blank(false);
    if (eof()) return;
    if (peek() != '\n') fail(std::string("unexpected character '") + peek() + "' after value");
    get();
  }

  std::string bare_or_quoted_key() {
    if (peek() == '"') return basic_string();
    std::string k;
    while (!eof()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')
        k.push_back(get());
      else
        break;
    }
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> dotted_key() {
    std::vector<std::string> parts{bare_or_quoted_key()};
    skip_blank(false);
    while (peek() == '.') {
      get();
      skip_blank(false);
      parts.push_back(bare_or_quoted_key());
      skip_blank(false);
    }
    return parts;
  }

  static std::string joined(const std::vector<std::string>& parts) {
    std::string p;
    for (const auto& k : parts) {
      if (!p.empty()) p += '.';
      p += k;
    }
    return p;
  }

  Json* descend(Json& from, const std::vector<std::string>& parts, size_t count) {
    Json* cur = &from;
    for (size_t q = 0; q < count; ++q) {
      if (!cur->contains(parts[q])) (*cur)[parts[q]] = Json::object();
      cur = &(*cur)[parts[q]];
      if (!cur->is_object()) fail("'" + joined(parts) + "' redefines a non-table value");
    }
    return cur;
  }

  std::string basic_string() {
    get();  // opening quote
    if (peek() == '"' && i + 1 < s.size() && s[i + 1] == '"')
      fail("multiline strings are not supported (toml subset)");
    std::string out;
    while (!eof()) {
      char c = get();
      if (c == '"') return out;
      if (c == '\n') fail("unterminated string");
      if (c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = get();
        switch (e) {
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          default: fail(std::string("unsupported escape '\\") + e + "'");
        }
      } else {
        out.push_back(c);
      }
    }
    fail("unterminated string");
  }

  Json scalar_token() {
    std::string tok;
    while (!eof()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' ||
          c == '_')
        tok.push_back(get());
      else
        break;
    }
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return Json(true);
    if (tok == "false") return Json(false);
    std::string t;
    for (char c : tok)
      if (c != '_') t.push_back(c);
    const bool floaty = t.find_first_of(".eE") != std::string::npos ||
                        t.find("inf") != std::string::npos || t.find("nan") != std::string::npos;
    try {
      size_t used = 0;
      if (!floaty) {
        const long long v = std::stoll(t, &used);
        if (used == t.size()) return Json(v);
      }
      const double v = std::stod(t, &used);
      if (used == t.size()) return Json(v);
    } catch (const std::exception&) {
    }
    fail("unsupported value '" + tok + "' (toml subset: strings, booleans, numbers, arrays)");
  }

  Json value() {
    skip_blank(false);
    const char c = peek();
    if (c == '"') return Json(basic_string());
    if (c == '\'') fail("literal strings are not supported (toml subset)");
    if (c == '{') fail("inline tables are not supported (toml subset)");
    if (c == '[') {
      get();
      Json arr = Json::array();
      skip_blank(true);
      while (peek() != ']') {
        arr.push_back(value());
        skip_blank(true);
        if (peek() == ',') {
          get();
          skip_blank(true);
        } else if (peek() != ']') {
          fail("expected ',' or ']' in array");
        }
      }
      get();
      return arr;
    }
    return scalar_token();
  }

  Json parse() {
    while (true) {
      skip_blank(true);
      if (eof()) break;
      if (peek() == '[') {
        get();
        if (peek() == '[') fail("arrays of tables are not supported (toml subset)");
        skip_blank(false);
        const std::vector<std::string> parts = dotted_key();
        skip_blank(false);
        if (peek() != ']') fail("expected ']' to close the table header");
        get();
        table = descend(root, parts, parts.size());
        expect_line_end();
      } else {
        const std::vector<std::string> parts = dotted_key();
        skip_blank(false);
        if (peek() != '=') fail("expected '=' after key '" + joined(parts) + "'");
        get();
        Json* owner = descend(*table, parts, parts.size() - 1);
        const std::string& leaf = parts.back();
        if (owner->contains(leaf)) fail("duplicate key '" + joined(parts) + "'");
        (*owner)[leaf] = value();
        expect_line_end();
      }
    }
    return std::move(root);
  }
};

}  // namespace detail

inline Json toml_to_json(const std::string& text) { return detail::TomlParser(text).parse(); }

/// Parse configuration text as JSON when it plainly is one, else as TOML.
/// A config document is always a table, so '{' alone selects JSON; a leading
/// '[' is a TOML table header.
inline Json parse_config_text(const std::string& text, const std::string& origin) {
  const size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return Json::parse(text);
    } catch (const Json::exception& e) {
      throw InvalidInput("config '" + origin + "': invalid json: " + e.what());
    }
  }
  try {
    return toml_to_json(text);
  } catch (const InvalidInput& e) {
    throw InvalidInput("config '" + origin + "': " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Json load_config(const std::string& path) {
  return parse_config_text(read_text_file(path), path);
}

// ---- field-path access -----------------------------------------------------

inline const Json* find_path(const Json& j, const std::string& path) {
  const Json* cur = &j;
  size_t start = 0;
  while (start <= path.size()) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!cur->is_object() || !cur->contains(key)) return nullptr;
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return cur;
}

inline const Json& need_path(const Json& j, const std::string& path) {
  const Json* p = find_path(j, path);
  if (!p) throw InvalidInput("config: missing field '" + path + "'");
  return *p;
}

inline double need_number(const Json& j, const std::string& path) {
  const Json& v = need_path(j, path);
  if (!v.is_number()) throw InvalidInput("config: field '" + path + "' must be a number");
  return v.get<double>();
}

inline double opt_number(const Json& j, const std::string& path, double fallback) {
  return find_path(j, path) ? need_number(j, path) : fallback;
}

inline double need_positive(const Json& j, const std::string& path) {
  const double v = need_number(j, path);
  if (!(v > 0.0)) throw InvalidInput("config: field '" + path + "' must be positive");
  return v;
}

inline long long need_integer(const Json& j, const std::string& path) {
  const Json& v = need_path(j, path);
  if (!v.is_number_integer()) throw InvalidInput("config: field '" + path + "' must be an integer");
  return v.get<long long>();
}

inline long long opt_integer(const Json& j, const std::string& path, long long fallback) {
  return find_path(j, path) ? need_integer(j, path) : fallback;
}

inline std::string need_string(const Json& j, const std::string& path) {
  const Json& v = need_path(j, path);
  if (!v.is_string()) throw InvalidInput("config: field '" + path + "' must be a string");
  return v.get<std::string>();
}

inline std::string opt_string(const Json& j, const std::string& path,
                              const std::string& fallback) {
  return find_path(j, path) ? need_string(j, path) : fallback;
}

inline bool opt_bool(const Json& j, const std::string& path, bool fallback) {
  const Json* p = find_path(j, path);
  if (!p) return fallback;
  if (!p->is_boolean()) throw InvalidInput("config: field '" + path + "' must be a boolean");
  return p->get<bool>();
}

inline std::vector<double> need_number_list(const Json& j, const std::string& path) {
  const Json& v = need_path(j, path);
  if (!v.is_array()) throw InvalidInput("config: field '" + path + "' must be an array");
  std::vector<double> out;
  for (const Json& x : v) {
    if (!x.is_number())
      throw InvalidInput("config: field '" + path + "' must contain only numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

/// Flat or row-nested numeric matrix under one field.
inline std::vector<double> need_matrix(const Json& j, const std::string& path, int n) {
  const Json& v = need_path(j, path);
  if (!v.is_array()) throw InvalidInput("config: field '" + path + "' must be an array");
  std::vector<double> out;
  for (const Json& row : v) {
    if (row.is_array())
      for (const Json& x : row) out.push_back(x.get<double>());
    else if (row.is_number())
      out.push_back(row.get<double>());
    else
      throw InvalidInput("config: field '" + path + "' must be a numeric matrix");
  }
  if (static_cast<int>(out.size()) != n * n)
    throw InvalidInput("config: field '" + path + "' must hold " + std::to_string(n) + "x" +
                       std::to_string(n) + " entries");
  return out;
}

// ---- hashing and artifact emission ----------------------------------------

inline std::uint64_t fnv64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Hash of the effective configuration document.  nlohmann keeps object
/// keys sorted, so semantically identical TOML and JSON inputs hash alike.
inline std::string config_hash(const Json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv64(j.dump())));
  return std::string(buf);
}

/// Serialize with objects sorted, arrays in order, and every float at 17
/// significant digits; used for all JSON artifacts.
inline void emit_json(const Json& j, std::string& out, int indent = 0) {
  const std::string pad(static_cast<size_t>(indent) * 2, ' ');
  const std::string pad1(static_cast<size_t>(indent + 1) * 2, ' ');
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad1 + Json(it.key()).dump() + ": ";
        emit_json(it.value(), out, indent + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      bool scalars = true;
      for (const Json& x : j)
        if (x.is_structured()) scalars = false;
      out += scalars ? "[" : "[\n";
      bool first = true;
      for (const Json& x : j) {
        if (!first) out += scalars ? ", " : ",\n";
        first = false;
        if (!scalars) out += pad1;
        emit_json(x, out, indent + 1);
      }
      out += scalars ? "]" : "\n" + pad + "]";
      return;
    }
    case Json::value_t::number_float:
      out += fmt17(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

inline std::string emit_json(const Json& j) {
  std::string out;
  emit_json(j, out);
  out += "\n";
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write file '" + path + "'");
  out << content;
  if (!out) throw InvalidInput("failed writing file '" + path + "'");
}

/// CSV buffer: config-hash comment line, one header row, fmt17 data rows.
struct Csv {
  std::string buf;

  explicit Csv(const std::string& hash) { buf = "# config " + hash + "\n"; }

  void header(const std::vector<std::string>& cols) {
    for (size_t q = 0; q < cols.size(); ++q) {
      if (q) buf += ',';
      buf += cols[q];
    }
    buf += '\n';
  }

  /// One row; entries past `present` are left empty (trailing slice rows).
  void row(const std::vector<double>& vals, size_t present = SIZE_MAX) {
    for (size_t q = 0; q < vals.size(); ++q) {
      if (q) buf += ',';
      if (q < present) buf += fmt17(vals[q]);
    }
    buf += '\n';
  }
};

/// Effective run configuration: the merged document (file plus command-line
/// overrides) along with the environment-only settings that never take part
/// in hashing (where artifacts go, how many workers run).
struct RunConfig {
  Json doc = Json::object();
  std::string command;
  std::string out_dir = ".";
  int threads = 1;
  std::string hash;  // set by finalize()

  void finalize() { hash = config_hash(doc); }

  std::string artifact(const std::string& name) const {
    if (name.empty() || name.front() == '/') return name;
    return out_dir == "." || out_dir.empty() ? name : out_dir + "/" + name;
  }
};

}  // namespace gwhf
