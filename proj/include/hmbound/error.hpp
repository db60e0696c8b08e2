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

#include <stdexcept>
#include <string>

namespace hmbound {

/// Base class of every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI for its error JSON and exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

#define HMBOUND_DEFINE_ERROR(Name, tag)                           \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(what) {}       \
    const char* kind() const noexcept override { return tag; }    \
  };

HMBOUND_DEFINE_ERROR(ShapeError, "shape")
HMBOUND_DEFINE_ERROR(FactorizationError, "factorization")
HMBOUND_DEFINE_ERROR(RankError, "rank")
HMBOUND_DEFINE_ERROR(DataError, "data")
HMBOUND_DEFINE_ERROR(ConfigError, "config")
HMBOUND_DEFINE_ERROR(ConstraintError, "constraint")
HMBOUND_DEFINE_ERROR(BoundsError, "bounds")
HMBOUND_DEFINE_ERROR(ConsistencyError, "consistency")
HMBOUND_DEFINE_ERROR(ModelAssumptionError, "model_assumption")
HMBOUND_DEFINE_ERROR(PreconditionError, "precondition")
HMBOUND_DEFINE_ERROR(IndexError, "index")
HMBOUND_DEFINE_ERROR(EnsembleSizeError, "ensemble_size")
HMBOUND_DEFINE_ERROR(FitError, "fit")
HMBOUND_DEFINE_ERROR(EmptyNroyError, "empty_nroy")
HMBOUND_DEFINE_ERROR(IoError, "io")

#undef HMBOUND_DEFINE_ERROR

}  // namespace hmbound
