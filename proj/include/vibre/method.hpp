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

#ifndef VIBRE_METHOD_HPP_
#define VIBRE_METHOD_HPP_

#include <string>
#include <string_view>

#include "vibre/corpus.hpp"

namespace vibre {

/// Training recipe: plain fine-tuning, the two entity-rewriting baselines,
/// or the variational bottleneck on entity tokens.
enum class Method { kVanilla, kEntityMask, kEntitySubstitution, kVib };

std::string_view method_name(Method method);

/// Throws std::invalid_argument naming the accepted values.
Method parse_method(std::string_view name);

/// The view of an evaluation example the method's model sees; only the
/// entity-mask baseline rewrites inputs at test time.
Example inference_view(const Example& ex, Method method);

}  // namespace vibre

#endif  // VIBRE_METHOD_HPP_
