// Copyright 2026 The robfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "robfeat/schema.hpp"

#include <cmath>
#include <map>

#include "robfeat/error.hpp"
#include "robfeat/schemas_embedded.hpp"

namespace robfeat {

namespace {

using Json = nlohmann::json;

const std::map<std::string, Json>& registry() {
  static const std::map<std::string, Json> reg = [] {
    std::map<std::string, Json> r;
    for (const auto& [id, text] : embedded_schemas()) r[id] = Json::parse(text);
    return r;
  }();
  return reg;
}

const Json& resolve(const std::string& ref, const std::string& current) {
  const auto hash = ref.find('#');
  const std::string doc_id = hash == 0 ? current : ref.substr(0, hash);
  const auto it = registry().find(doc_id);
  if (it == registry().end()) fail(ErrorCode::kInternal, "schema: unknown document " + doc_id);
  const Json* node = &it->second;
  const std::string path = hash == std::string::npos ? "" : ref.substr(hash + 1);
  std::size_t pos = 0;
  while (pos < path.size()) {
    auto next = path.find('/', pos);
    if (next == std::string::npos) next = path.size();
    const std::string key = path.substr(pos, next - pos);
    pos = next + 1;
    if (key.empty()) continue;
    if (!node->contains(key)) fail(ErrorCode::kInternal, "schema: bad reference " + ref);
    node = &(*node)[key];
  }
  return *node;
}

std::string ref_doc(const std::string& ref, const std::string& current) {
  const auto hash = ref.find('#');
  return hash == 0 ? current : ref.substr(0, hash);
}

bool type_matches(const Json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  if (t == "number") return v.is_number();
  if (t == "integer") {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>();
  }
  return false;
}

void check(const Json& v, const Json& schema, const std::string& path, const std::string& doc) {
  if (schema.contains("$ref")) {
    const std::string ref = schema["$ref"];
    check(v, resolve(ref, doc), path, ref_doc(ref, doc));
    return;
  }
  const std::string where = path.empty() ? "<root>" : path;
  if (schema.contains("type")) {
    const Json& t = schema["type"];
    bool ok = false;
    if (t.is_string()) {
      ok = type_matches(v, t.get<std::string>());
    } else {
      for (const auto& alt : t) ok = ok || type_matches(v, alt.get<std::string>());
    }
    if (!ok) fail(ErrorCode::kConfig, "config key '" + where + "': expected type " + t.dump());
  }
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& e : schema["enum"]) ok = ok || e == v;
    if (!ok) {
      fail(ErrorCode::kConfig,
           "config key '" + where + "': value " + v.dump() + " not in " + schema["enum"].dump());
    }
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (schema.contains("minimum") && x < schema["minimum"].get<double>()) {
      fail(ErrorCode::kConfig, "config key '" + where + "': below minimum");
    }
    if (schema.contains("maximum") && x > schema["maximum"].get<double>()) {
      fail(ErrorCode::kConfig, "config key '" + where + "': above maximum");
    }
    if (schema.contains("exclusiveMinimum") && !(x > schema["exclusiveMinimum"].get<double>())) {
      fail(ErrorCode::kConfig, "config key '" + where + "': must exceed " +
                                   schema["exclusiveMinimum"].dump());
    }
    if (schema.contains("exclusiveMaximum") && !(x < schema["exclusiveMaximum"].get<double>())) {
      fail(ErrorCode::kConfig, "config key '" + where + "': must be below " +
                                   schema["exclusiveMaximum"].dump());
    }
  }
  if (v.is_object()) {
    const Json props = schema.value("properties", Json::object());
    if (schema.contains("required")) {
      for (const auto& r : schema["required"]) {
        if (!v.contains(r.get<std::string>())) {
          fail(ErrorCode::kConfig, "config key '" + (path.empty() ? "" : path + ".") +
                                       r.get<std::string>() + "': required key missing");
        }
      }
    }
    const bool closed = schema.contains("additionalProperties") &&
                        schema["additionalProperties"].is_boolean() &&
                        !schema["additionalProperties"].get<bool>();
    for (const auto& [key, val] : v.items()) {
      const std::string sub = path.empty() ? key : path + "." + key;
      if (props.contains(key)) {
        check(val, props[key], sub, doc);
      } else if (closed) {
        fail(ErrorCode::kConfig, "config key '" + sub + "': unknown key");
      }
    }
  }
  if (v.is_array()) {
    if (schema.contains("minItems") && v.size() < schema["minItems"].get<std::size_t>()) {
      fail(ErrorCode::kConfig, "config key '" + where + "': too few items");
    }
    if (schema.contains("items")) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        check(v[i], schema["items"], path + "[" + std::to_string(i) + "]", doc);
      }
    }
  }
}

}  // namespace

void validate_schema(const nlohmann::json& doc, const std::string& schema_id) {
  const auto it = registry().find(schema_id);
  if (it == registry().end()) fail(ErrorCode::kInternal, "no shipped schema '" + schema_id + "'");
  check(doc, it->second, "", schema_id);
}

const std::string& schema_text(const std::string& schema_id) {
  for (const auto& [id, text] : embedded_schemas()) {
    if (id == schema_id) return text;
  }
  fail(ErrorCode::kInternal, "no shipped schema '" + schema_id + "'");
}

}  // namespace robfeat
