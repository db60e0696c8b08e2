/*
 * Copyright 2026 The hmbound Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <functional>

#include "hmbound/field.hpp"

/// Thin wrappers over the GSL multidimensional minimizers.
namespace hmbound::optim {

struct Result {
  VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Nelder-Mead simplex (nmsimplex2).
Result nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0, double step,
                   int max_iter = 2000, double size_tol = 1e-8);

/// Objective returning the value and, when `grad` is non-null, filling it.
using GradientObjective = std::function<double(const VectorXd& x, VectorXd* grad)>;

/// Quasi-Newton BFGS (vector_bfgs2). Stops on small gradient norm, on
/// `max_iter`, or when the line search cannot make progress.
Result bfgs(const GradientObjective& f, const VectorXd& x0, int max_iter = 200, double grad_tol = 1e-5,
            double initial_step = 0.1);

}  // namespace hmbound::optim
