# Copyright 2026 The hmbound Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Python bindings for hmbound: bases, emulators, implausibility and the pipeline."""

from ._core import (
    Basis,
    Error,
    GpEmulator,
    Pipeline,
    chi2_bound,
    chi2_quantile,
    evaluate_bound,
    implausibility,
    jth_max,
    optimal_rotation,
    project,
    recon_error,
    reconstruct,
    scaled_implausibility,
    svd_basis,
)

__all__ = [
    "Basis",
    "Error",
    "GpEmulator",
    "Pipeline",
    "chi2_bound",
    "chi2_quantile",
    "evaluate_bound",
    "implausibility",
    "jth_max",
    "optimal_rotation",
    "project",
    "recon_error",
    "reconstruct",
    "scaled_implausibility",
    "svd_basis",
]
