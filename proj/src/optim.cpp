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

#include "hmbound/optim.hpp"

#include <cmath>
#include <limits>

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

namespace hmbound::optim {
namespace {

VectorXd to_eigen(const gsl_vector* v) {
  VectorXd out(v->size);
  for (std::size_t i = 0; i < v->size; ++i) out[i] = gsl_vector_get(v, i);
  return out;
}

struct GslVector {
  explicit GslVector(const VectorXd& x) : v(gsl_vector_alloc(x.size())) {
    for (Index i = 0; i < x.size(); ++i) gsl_vector_set(v, i, x[i]);
  }
  ~GslVector() { gsl_vector_free(v); }
  GslVector(const GslVector&) = delete;
  GslVector& operator=(const GslVector&) = delete;
  gsl_vector* v;
};

double finite_or_huge(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::max() / 4; }

// GSL aborts on errors unless the handler is replaced; the library reports
// failures through return codes instead.
struct ErrorHandlerGuard {
  ErrorHandlerGuard() : old(gsl_set_error_handler_off()) {}
  ~ErrorHandlerGuard() { gsl_set_error_handler(old); }
  gsl_error_handler_t* old;
};

}  // namespace

Result nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0, double step,
                   int max_iter, double size_tol) {
  ErrorHandlerGuard guard;
  const std::size_t n = static_cast<std::size_t>(x0.size());
  Result result{x0, finite_or_huge(f(x0)), 0, false};
  if (n == 0) {
    result.converged = true;
    return result;
  }
  auto call = [](const gsl_vector* x, void* params) -> double {
    const auto* fn = static_cast<const std::function<double(const VectorXd&)>*>(params);
    return finite_or_huge((*fn)(to_eigen(x)));
  };
  gsl_multimin_function func{call, n, const_cast<std::function<double(const VectorXd&)>*>(&f)};
  GslVector x(x0);
  GslVector steps(VectorXd::Constant(x0.size(), step));
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &func, x.v, steps.v);
  int status = GSL_CONTINUE;
  int iter = 0;
  while (status == GSL_CONTINUE && iter < max_iter) {
    ++iter;
    if (gsl_multimin_fminimizer_iterate(s)) break;
    status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), size_tol);
  }
  result.x = to_eigen(s->x);
  result.value = s->fval;
  result.iterations = iter;
  result.converged = status == GSL_SUCCESS;
  gsl_multimin_fminimizer_free(s);
  return result;
}

Result bfgs(const GradientObjective& f, const VectorXd& x0, int max_iter, double grad_tol, double initial_step) {
  ErrorHandlerGuard guard;
  const std::size_t n = static_cast<std::size_t>(x0.size());
  Result result{x0, 0.0, 0, false};
  if (n == 0) {
    result.value = f(x0, nullptr);
    result.converged = true;
    return result;
  }
  auto fn = [](const gsl_vector* x, void* params) -> double {
    const auto* obj = static_cast<const GradientObjective*>(params);
    return finite_or_huge((*obj)(to_eigen(x), nullptr));
  };
  auto dfn = [](const gsl_vector* x, void* params, gsl_vector* g) {
    const auto* obj = static_cast<const GradientObjective*>(params);
    VectorXd grad(x->size);
    (*obj)(to_eigen(x), &grad);
    for (std::size_t i = 0; i < x->size; ++i) gsl_vector_set(g, i, std::isfinite(grad[i]) ? grad[i] : 0.0);
  };
  auto fdfn = [](const gsl_vector* x, void* params, double* value, gsl_vector* g) {
    const auto* obj = static_cast<const GradientObjective*>(params);
    VectorXd grad(x->size);
    *value = finite_or_huge((*obj)(to_eigen(x), &grad));
    for (std::size_t i = 0; i < x->size; ++i) gsl_vector_set(g, i, std::isfinite(grad[i]) ? grad[i] : 0.0);
  };
  gsl_multimin_function_fdf func{fn, dfn, fdfn, n, const_cast<GradientObjective*>(&f)};
  GslVector x(x0);
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, n);
  gsl_multimin_fdfminimizer_set(s, &func, x.v, initial_step, 0.1);
  int status = GSL_CONTINUE;
  int iter = 0;
  while (status == GSL_CONTINUE && iter < max_iter) {
    ++iter;
    if (gsl_multimin_fdfminimizer_iterate(s)) break;
    status = gsl_multimin_test_gradient(s->gradient, grad_tol);
  }
  result.x = to_eigen(s->x);
  result.value = s->f;
  result.iterations = iter;
  result.converged = status == GSL_SUCCESS;
  gsl_multimin_fdfminimizer_free(s);
  return result;
}

}  // namespace hmbound::optim
