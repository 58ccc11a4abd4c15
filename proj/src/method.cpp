// Copyright 2026 The vibre Authors.
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

#include "vibre/method.hpp"

#include <stdexcept>

namespace vibre {

std::string_view method_name(Method method) {
  switch (method) {
    case Method::kVanilla: return "vanilla";
    case Method::kEntityMask: return "entity_mask";
    case Method::kEntitySubstitution: return "entity_substitution";
    case Method::kVib: return "vib";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::kVanilla, Method::kEntityMask, Method::kEntitySubstitution, Method::kVib}) {
    if (method_name(m) == name) return m;
  }
  throw std::invalid_argument("unknown method '" + std::string(name) +
                              "' (expected vanilla, entity_mask, entity_substitution or vib)");
}

Example inference_view(const Example& ex, Method method) {
  return method == Method::kEntityMask ? apply_entity_mask_baseline(ex) : ex;
}

}  // namespace vibre
