#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace glbm::toml {

struct Value;
using Array = std::vector<Value>;
using Table = std::map<std::string, Value>;

/// A parsed TOML value with the line it was defined on.
struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array, Table> data;
  int line = 0;

  bool is_bool() const { return std::holds_alternative<bool>(data); }
  bool is_int() const { return std::holds_alternative<std::int64_t>(data); }
  bool is_float() const { return std::holds_alternative<double>(data); }
  bool is_number() const { return is_int() || is_float(); }
  bool is_string() const { return std::holds_alternative<std::string>(data); }
  bool is_array() const { return std::holds_alternative<Array>(data); }
  bool is_table() const { return std::holds_alternative<Table>(data); }

  bool as_bool() const { return std::get<bool>(data); }
  std::int64_t as_int() const { return std::get<std::int64_t>(data); }
  double as_double() const { return is_int() ? static_cast<double>(as_int()) : std::get<double>(data); }
  const std::string& as_string() const { return std::get<std::string>(data); }
  const Array& as_array() const { return std::get<Array>(data); }
  const Table& as_table() const { return std::get<Table>(data); }
  Table& as_table() { return std::get<Table>(data); }

  std::string type_name() const;
};

/// Parses the supported subset: comments, bare/quoted/dotted keys, [tables],
/// [[arrays of tables]], basic and literal strings, integers, floats
/// (including inf/nan), booleans, multi-line arrays and inline tables.
/// Throws ParseError("line N: ...").
Table parse(const std::string& text);

/// Serialises a table back to TOML text (tables after scalars, sorted keys).
std::string dump(const Table& t);

}  // namespace glbm::toml
