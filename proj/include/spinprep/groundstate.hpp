// Copyright 2026 The spinprep Authors.
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

#include <cmath>
#include <complex>

#include <Eigen/Dense>

#include "errors.hpp"
#include "hilbert.hpp"

namespace spinprep {

struct GroundStateResult {
    double energy = 0.0;
    CVector state;
    double gap = 0.0;
};

inline constexpr double kDegeneracyTolerance = 1e-10;

/// Rotates `psi` so that its largest-magnitude amplitude is real and positive.
/// Ties resolve to the lowest index, which makes the map idempotent.
inline void fix_phase(CVector &psi) {
    if (psi.size() == 0) {
        return;
    }
    Eigen::Index pivot = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < psi.size(); ++i) {
        const double mag = std::abs(psi(i));
        if (mag > best * (1.0 + 1e-12)) {
            best = mag;
            pivot = i;
        }
    }
    if (best <= 0.0) {
        return;
    }
    const Complex phase = std::conj(psi(pivot)) / best;
    psi *= phase;
    psi(pivot) = Complex{best, 0.0};
}

/**
 * Lowest eigenpair of a Hermitian matrix from a full dense
 * eigendecomposition.
 *
 * Throws DegenerateGroundState when E1 - E0 < 1e-10; the error still carries
 * E0 and the gap.
 */
inline auto ground_state(const CMatrix &h) -> GroundStateResult {
    detail::require(h.rows() == h.cols() && h.rows() >= 2,
                    "ground_state needs a square matrix of dimension >= 2");
    detail::require(h.rows() <= (Eigen::Index{1} << kMaxSites),
                    "dimension exceeds 2^14");
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    detail::require(hermiticity_error(h) < 1e-12 * scale,
                    "ground_state input is not Hermitian");

    const Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition failed");
    }
    const auto &values = solver.eigenvalues();
    GroundStateResult result;
    result.energy = values(0);
    result.gap = values(1) - values(0);
    if (result.gap < kDegeneracyTolerance) {
        throw DegenerateGroundState(result.energy, result.gap);
    }
    result.state = solver.eigenvectors().col(0);
    result.state.normalize();
    fix_phase(result.state);
    return result;
}

/// Ground state of the field-free Hamiltonian of `spec`.
inline auto ground_state(const ModelSpec &spec) -> GroundStateResult {
    return ground_state(coupling_hamiltonian(spec));
}

} // namespace spinprep
