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

#ifndef VIBRE_GRAD_CHECK_HPP_
#define VIBRE_GRAD_CHECK_HPP_

#include <cstddef>
#include <functional>
#include <vector>

#include "vibre/tensor.hpp"

namespace vibre {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar-valued f against central
/// differences for every element of every parameter.
///
/// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// f must be deterministic: freeze any noise it consumes.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                           double step = 1e-5);

}  // namespace vibre

#endif  // VIBRE_GRAD_CHECK_HPP_
