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

#pragma once

#include <string>

#include <json.hpp>

namespace robfeat {

/// Validates `doc` against the shipped schema with the given id. Supports the
/// JSON Schema keywords the shipped schemas use: type, properties, required,
/// additionalProperties (false), enum, minimum, maximum, exclusiveMinimum,
/// exclusiveMaximum, items, minItems and $ref into definitions. Throws a
/// config error naming the offending key path.
void validate_schema(const nlohmann::json& doc, const std::string& schema_id);

/// Raw text of a shipped schema.
const std::string& schema_text(const std::string& schema_id);

}  // namespace robfeat
