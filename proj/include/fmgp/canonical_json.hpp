#pragma once

#include "fmgp/common.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fmgp::io {

/// Machine-diffable JSON output: object keys sorted, doubles printed with 17
/// significant digits, no whitespace. Values are pre-encoded fragments.
class JsonObject;

std::string json_escape(const std::string& s);
std::string json_number(double v);
std::string json_number(std::int64_t v);
std::string json_string(const std::string& s);

class JsonArray {
 public:
  void push_raw(std::string encoded) { items_.push_back(std::move(encoded)); }
  void push(double v) { push_raw(json_number(v)); }
  void push(std::int64_t v) { push_raw(json_number(v)); }
  void push(const std::string& s) { push_raw(json_string(s)); }
  std::string str() const;

 private:
  std::vector<std::string> items_;
};

class JsonObject {
 public:
  void put_raw(const std::string& key, std::string encoded) { fields_.emplace_back(key, std::move(encoded)); }
  void put(const std::string& key, double v) { put_raw(key, json_number(v)); }
  void put(const std::string& key, std::int64_t v) { put_raw(key, json_number(v)); }
  void put(const std::string& key, int v) { put_raw(key, json_number(static_cast<std::int64_t>(v))); }
  void put(const std::string& key, const std::string& s) { put_raw(key, json_string(s)); }
  void put(const std::string& key, const char* s) { put_raw(key, json_string(s)); }
  void put(const std::string& key, bool v) { put_raw(key, v ? "true" : "false"); }
  void put(const std::string& key, const JsonArray& a) { put_raw(key, a.str()); }
  void put(const std::string& key, const JsonObject& o) { put_raw(key, o.str()); }

  /// Emits fields sorted by key.
  std::string str() const;

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

}  // namespace fmgp::io
