#include "glbm/toml.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "glbm/errors.hpp"

namespace glbm::toml {

std::string Value::type_name() const {
  switch (data.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "float";
    case 3: return "string";
    case 4: return "array";
    default: return "table";
  }
}

namespace {

class Parser {
 public:
  explicit Parser(const std::string& s) : s_(s) {}

  Table run() {
    Table root;
    Table* cur = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        const bool array = peek(1) == '[';
        pos_ += array ? 2 : 1;
        skip_ws();
        const std::vector<std::string> path = key_path();
        skip_ws();
        if (!consume(']') || (array && !consume(']'))) fail("expected ']' after table name");
        end_of_line();
        cur = array ? &array_table(root, path) : &open_table(root, path);
        continue;
      }
      const int line = line_;
      const std::vector<std::string> path = key_path();
      skip_ws();
      if (!consume('=')) fail("expected '=' after key");
      skip_ws();
      Value v = value();
      v.line = line;
      insert(*cur, path, std::move(v), line);
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(line_) + ": " + what);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek(std::size_t k = 0) const { return pos_ + k < s_.size() ? s_[pos_ + k] : '\0'; }
  bool consume(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) ++pos_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }
  void skip_ws_comments_newlines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\n') {
        ++pos_;
        ++line_;
      } else {
        break;
      }
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (eof()) return;
    if (peek() != '\n') fail(std::string("unexpected character '") + peek() + "'");
    ++pos_;
    ++line_;
  }

  static bool bare_char(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  }

  std::string key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const std::size_t b = pos_;
    while (!eof() && bare_char(peek())) ++pos_;
    if (pos_ == b) fail("expected a key");
    return s_.substr(b, pos_ - b);
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> out{key()};
    while (true) {
      skip_ws();
      if (!consume('.')) break;
      skip_ws();
      out.push_back(key());
    }
    return out;
  }

  std::string basic_string() {
    ++pos_;
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out += c;
        continue;
      }
      const char e = s_[pos_++];
      switch (e) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case 'r': out += '\r'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: fail(std::string("unsupported escape '\\") + e + "'");
      }
    }
    return out;
  }

  std::string literal_string() {
    ++pos_;
    const std::size_t b = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (!consume('\'')) fail("unterminated literal string");
    return s_.substr(b, pos_ - 1 - b);
  }

  Value value() {
    Value v;
    v.line = line_;
    const char c = peek();
    if (c == '"') {
      v.data = basic_string();
    } else if (c == '\'') {
      v.data = literal_string();
    } else if (c == '[') {
      v.data = array();
    } else if (c == '{') {
      v.data = inline_table();
    } else if (s_.compare(pos_, 4, "true") == 0 && !bare_char(peek(4))) {
      pos_ += 4;
      v.data = true;
    } else if (s_.compare(pos_, 5, "false") == 0 && !bare_char(peek(5))) {
      pos_ += 5;
      v.data = false;
    } else {
      number(v);
    }
    return v;
  }

  void number(Value& v) {
    const std::size_t b = pos_;
    while (!eof() && (bare_char(peek()) || peek() == '.' || peek() == '+')) ++pos_;
    std::string tok = s_.substr(b, pos_ - b);
    if (tok.empty()) fail("expected a value");
    std::string clean;
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok[i] == '_') {
        if (i == 0 || i + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[i - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[i + 1])))
          fail("misplaced '_' in number '" + tok + "'");
        continue;
      }
      clean += tok[i];
    }
    std::string body = clean;
    double sign = 1.0;
    if (!body.empty() && (body[0] == '+' || body[0] == '-')) {
      sign = body[0] == '-' ? -1.0 : 1.0;
      body = body.substr(1);
    }
    if (body == "inf") {
      v.data = sign * std::numeric_limits<double>::infinity();
      return;
    }
    if (body == "nan") {
      v.data = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    const char* first = clean.data() + (clean[0] == '+' ? 1 : 0);
    const char* last = clean.data() + clean.size();
    if (is_float) {
      double d = 0.0;
      auto r = std::from_chars(first, last, d);
      if (r.ec != std::errc() || r.ptr != last) fail("invalid number '" + tok + "'");
      v.data = d;
    } else {
      std::int64_t i = 0;
      auto r = std::from_chars(first, last, i);
      if (r.ec != std::errc() || r.ptr != last) fail("invalid value '" + tok + "'");
      v.data = i;
    }
  }

  Array array() {
    ++pos_;
    Array out;
    while (true) {
      skip_ws_comments_newlines();
      if (consume(']')) return out;
      out.push_back(value());
      skip_ws_comments_newlines();
      if (consume(',')) continue;
      if (consume(']')) return out;
      fail("expected ',' or ']' in array");
    }
  }

  Table inline_table() {
    ++pos_;
    Table out;
    skip_ws();
    if (consume('}')) return out;
    while (true) {
      skip_ws();
      const int line = line_;
      const auto path = key_path();
      skip_ws();
      if (!consume('=')) fail("expected '=' in inline table");
      skip_ws();
      Value v = value();
      insert(out, path, std::move(v), line);
      skip_ws();
      if (consume(',')) continue;
      if (consume('}')) return out;
      fail("expected ',' or '}' in inline table");
    }
  }

  static std::string join(const std::vector<std::string>& p, std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += (i ? "." : "") + p[i];
    return s;
  }

  Table& descend(Table& root, const std::vector<std::string>& path, std::size_t n) {
    Table* t = &root;
    for (std::size_t i = 0; i < n; ++i) {
      auto it = t->find(path[i]);
      if (it == t->end()) {
        Value v;
        v.data = Table{};
        v.line = line_;
        it = t->emplace(path[i], std::move(v)).first;
      }
      if (it->second.is_array() && !it->second.as_array().empty() && it->second.as_array().back().is_table()) {
        t = &std::get<Array>(it->second.data).back().as_table();
        continue;
      }
      if (!it->second.is_table()) fail("key '" + join(path, i + 1) + "' is not a table");
      t = &it->second.as_table();
    }
    return *t;
  }

  Table& open_table(Table& root, const std::vector<std::string>& path) {
    const std::string name = join(path, path.size());
    if (!defined_.insert(name).second) fail("table [" + name + "] defined twice");
    return descend(root, path, path.size());
  }

  Table& array_table(Table& root, const std::vector<std::string>& path) {
    Table& parent = descend(root, path, path.size() - 1);
    auto it = parent.find(path.back());
    if (it == parent.end()) {
      Value v;
      v.data = Array{};
      v.line = line_;
      it = parent.emplace(path.back(), std::move(v)).first;
    }
    if (!it->second.is_array()) fail("key '" + join(path, path.size()) + "' is not an array of tables");
    Value t;
    t.data = Table{};
    t.line = line_;
    auto& arr = std::get<Array>(it->second.data);
    arr.push_back(std::move(t));
    return arr.back().as_table();
  }

  void insert(Table& t, const std::vector<std::string>& path, Value v, int line) {
    Table& parent = descend(t, path, path.size() - 1);
    if (parent.count(path.back())) {
      line_ = line;
      fail("duplicate key '" + join(path, path.size()) + "'");
    }
    parent.emplace(path.back(), std::move(v));
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::set<std::string> defined_;
};

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

bool bare_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-'))
      return false;
  return true;
}

std::string inline_value(const Value& v) {
  if (v.is_bool()) return v.as_bool() ? "true" : "false";
  if (v.is_int()) return std::to_string(v.as_int());
  if (v.is_float()) {
    const double d = std::get<double>(v.data);
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, d);
    std::string s(buf, r.ptr);
    if (s.find_first_of(".eE") == std::string::npos) s += ".0";
    return s;
  }
  if (v.is_string()) return quote(v.as_string());
  if (v.is_array()) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.as_array().size(); ++i) s += (i ? ", " : "") + inline_value(v.as_array()[i]);
    return s + "]";
  }
  std::string s = "{";
  bool first = true;
  for (const auto& [k, x] : v.as_table()) {
    s += (first ? " " : ", ") + (bare_key(k) ? k : quote(k)) + " = " + inline_value(x);
    first = false;
  }
  return s + " }";
}

void dump_table(std::ostringstream& os, const Table& t, const std::string& prefix) {
  for (const auto& [k, v] : t)
    if (!v.is_table()) os << (bare_key(k) ? k : quote(k)) << " = " << inline_value(v) << "\n";
  for (const auto& [k, v] : t) {
    if (!v.is_table()) continue;
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    os << "\n[" << name << "]\n";
    dump_table(os, v.as_table(), name);
  }
}

}  // namespace

Table parse(const std::string& text) { return Parser(text).run(); }

std::string dump(const Table& t) {
  std::ostringstream os;
  dump_table(os, t, "");
  return os.str();
}

}  // namespace glbm::toml
