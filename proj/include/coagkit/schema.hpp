#pragma once

// Validator for the subset of JSON Schema (draft-07) used by the shipped
// config and summary schemas: type, enum, const, properties, required,
// additionalProperties, items, min/maxItems, minimum, maximum,
// exclusiveMinimum, exclusiveMaximum, minLength and local "$ref"s.

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"

namespace coagkit {

struct SchemaIssue {
  std::string path;  // JSON pointer into the instance, "" for the root
  std::string message;
};

class SchemaValidator {
 public:
  using json = nlohmann::json;

  explicit SchemaValidator(json schema) : root_(std::move(schema)) {
    if (!root_.is_object()) throw InvalidArgument("schema must be a JSON object");
  }

  std::vector<SchemaIssue> validate(const json& instance) const {
    std::vector<SchemaIssue> out;
    check(root_, instance, "", out, 0);
    return out;
  }

 private:
  const json& resolve(const json& s) const {
    const auto it = s.find("$ref");
    if (it == s.end()) return s;
    const std::string ref = it->get<std::string>();
    if (ref.rfind("#/", 0) != 0) throw InvalidArgument("only local $ref is supported: " + ref);
    const json* node = &root_;
    try {
      node = &root_.at(json::json_pointer(ref.substr(1)));
    } catch (const json::exception&) {
      throw InvalidArgument("dangling $ref " + ref);
    }
    return resolve(*node);
  }

  static bool has_type(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "number") return v.is_number();
    if (t == "integer") {
      if (v.is_number_integer()) return true;
      if (v.is_number_float()) {
        const double d = v.get<double>();
        return std::isfinite(d) && d == std::floor(d);
      }
      return false;
    }
    return false;
  }

  static std::string escape(const std::string& key) {
    std::string r;
    for (char c : key) {
      if (c == '~') r += "~0";
      else if (c == '/') r += "~1";
      else r += c;
    }
    return r;
  }

  void check(const json& raw, const json& v, const std::string& path, std::vector<SchemaIssue>& out, int depth) const {
    if (depth > 64) throw InvalidArgument("schema recursion too deep");
    const json& s = resolve(raw);
    auto fail = [&](std::string msg) { out.push_back({path, std::move(msg)}); };

    if (auto it = s.find("type"); it != s.end()) {
      bool ok = false;
      if (it->is_string()) ok = has_type(v, it->get<std::string>());
      else
        for (const auto& t : *it) ok = ok || has_type(v, t.get<std::string>());
      if (!ok) {
        fail("expected type " + it->dump() + ", got " + std::string(v.type_name()));
        return;
      }
    }
    if (auto it = s.find("const"); it != s.end() && *it != v) fail("must equal " + it->dump());
    if (auto it = s.find("enum"); it != s.end()) {
      bool found = false;
      for (const auto& e : *it) found = found || e == v;
      if (!found) fail("must be one of " + it->dump());
    }
    if (v.is_number()) {
      const double d = v.get<double>();
      if (auto it = s.find("minimum"); it != s.end() && d < it->get<double>()) fail("must be >= " + it->dump());
      if (auto it = s.find("maximum"); it != s.end() && d > it->get<double>()) fail("must be <= " + it->dump());
      if (auto it = s.find("exclusiveMinimum"); it != s.end() && !(d > it->get<double>()))
        fail("must be > " + it->dump());
      if (auto it = s.find("exclusiveMaximum"); it != s.end() && !(d < it->get<double>()))
        fail("must be < " + it->dump());
    }
    if (v.is_string())
      if (auto it = s.find("minLength"); it != s.end() && v.get<std::string>().size() < it->get<std::size_t>())
        fail("must have length >= " + it->dump());
    if (v.is_array()) {
      if (auto it = s.find("minItems"); it != s.end() && v.size() < it->get<std::size_t>())
        fail("must have at least " + it->dump() + " items");
      if (auto it = s.find("maxItems"); it != s.end() && v.size() > it->get<std::size_t>())
        fail("must have at most " + it->dump() + " items");
      if (auto it = s.find("items"); it != s.end())
        for (std::size_t i = 0; i < v.size(); ++i) check(*it, v[i], path + "/" + std::to_string(i), out, depth + 1);
    }
    if (v.is_object()) {
      if (auto it = s.find("required"); it != s.end())
        for (const auto& key : *it)
          if (!v.contains(key.get<std::string>())) fail("missing required key '" + key.get<std::string>() + "'");
      const auto props = s.find("properties");
      const auto extra = s.find("additionalProperties");
      for (auto kv = v.begin(); kv != v.end(); ++kv) {
        const std::string child = path + "/" + escape(kv.key());
        if (props != s.end() && props->contains(kv.key())) {
          check(props->at(kv.key()), kv.value(), child, out, depth + 1);
        } else if (extra != s.end()) {
          if (extra->is_boolean()) {
            if (!extra->get<bool>()) out.push_back({child, "unknown key '" + kv.key() + "'"});
          } else {
            check(*extra, kv.value(), child, out, depth + 1);
          }
        }
      }
    }
  }

  json root_;
};

inline std::string format_issues(const std::vector<SchemaIssue>& issues) {
  std::string s;
  for (const auto& i : issues) s += (i.path.empty() ? std::string("/") : i.path) + ": " + i.message + "\n";
  return s;
}

} // namespace coagkit
