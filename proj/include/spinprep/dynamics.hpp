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
/**
 * @file
 * Piecewise-constant time evolution.
 *
 * Slice k (zero-based here) holds fields[k] fixed on [k tau, (k+1) tau) with
 * tau = T / K. Each slice is exponentiated exactly through the
 * eigendecomposition of its Hamiltonian; the eigendata is kept around so the
 * gradient code can reuse it.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "hilbert.hpp"

namespace spinprep {

/// Total time plus one FieldSlice per time slice. tau is always derived.
struct ControlSchedule {
    double total_time = 1.0;
    std::vector<FieldSlice> fields;

    [[nodiscard]] auto n_slices() const -> std::size_t { return fields.size(); }
    [[nodiscard]] auto tau() const -> double {
        return total_time / static_cast<double>(fields.size());
    }
    [[nodiscard]] auto n_sites() const -> int {
        return fields.empty() ? 0 : static_cast<int>(fields.front().rows());
    }

    void validate(int expected_sites) const {
        detail::require(!fields.empty(), "schedule has no slices");
        detail::require(std::isfinite(total_time) && total_time > 0.0,
                        "total_time must be positive and finite");
        for (const auto &slice : fields) {
            detail::require(slice.rows() == expected_sites,
                            "schedule slice has wrong site count");
            detail::require(slice.allFinite(),
                            "schedule contains NaN or Inf");
        }
    }
};

/// Constant fields: every slice equal to `slice`.
inline auto constant_schedule(double total_time, std::size_t n_slices,
                              const FieldSlice &slice) -> ControlSchedule {
    return {total_time, std::vector<FieldSlice>(n_slices, slice)};
}

inline auto zero_schedule(double total_time, std::size_t n_slices,
                          int n_sites) -> ControlSchedule {
    return constant_schedule(total_time, n_slices,
                             FieldSlice::Zero(n_sites, 3));
}

/// H = V diag(values) V^dagger.
struct EigenData {
    Eigen::VectorXd values;
    CMatrix vectors;
};

inline auto eigen_decompose(const CMatrix &h) -> EigenData {
    const Eigen::SelfAdjointEigenSolver<CMatrix> solver(h);
    if (solver.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition did not converge");
    }
    return {solver.eigenvalues(), solver.eigenvectors()};
}

/// exp(-i tau lambda) for every eigenvalue.
inline auto phase_factors(const EigenData &eig, double tau) -> CVector {
    CVector phases(eig.values.size());
    for (Eigen::Index a = 0; a < eig.values.size(); ++a) {
        phases(a) = std::polar(1.0, -tau * eig.values(a));
    }
    return phases;
}

/// V diag(exp(-i tau lambda)) V^dagger.
inline auto unitary_from_eigen(const EigenData &eig, double tau) -> CMatrix {
    const CVector phases = phase_factors(eig, tau);
    return eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
}

/// exp(-i tau H) psi without forming the matrix exponential.
inline auto apply_step(const EigenData &eig, double tau, const CVector &psi)
    -> CVector {
    CVector coeffs = eig.vectors.adjoint() * psi;
    coeffs.array() *= phase_factors(eig, tau).array();
    return eig.vectors * coeffs;
}

/// exp(+i tau H) psi, the adjoint step.
inline auto apply_step_adjoint(const EigenData &eig, double tau,
                               const CVector &psi) -> CVector {
    CVector coeffs = eig.vectors.adjoint() * psi;
    coeffs.array() *= phase_factors(eig, tau).array().conjugate();
    return eig.vectors * coeffs;
}

struct StepResult {
    CMatrix unitary;
    EigenData eig;
};

/// exp(-i tau H) via the eigendecomposition of H.
inline auto step_unitary(const CMatrix &h, double tau) -> StepResult {
    detail::require(h.rows() == h.cols(), "step_unitary needs a square matrix");
    detail::require(std::isfinite(tau), "tau must be finite");
    const double scale =
        h.size() == 0 ? 1.0 : std::max(1.0, h.cwiseAbs().maxCoeff());
    detail::require(hermiticity_error(h) < 1e-12 * scale,
                    "step_unitary input is not Hermitian");
    StepResult out;
    out.eig = eigen_decompose(h);
    out.unitary = unitary_from_eigen(out.eig, tau);
    return out;
}

/// |<a|b>|, clamped into [0, 1].
inline auto fidelity(const CVector &a, const CVector &b) -> double {
    detail::require(a.size() == b.size(), "fidelity: dimension mismatch");
    return std::min(1.0, std::abs(a.dot(b)));
}

/// States psi_0 .. psi_K and, once filled, f(k tau) for each of them.
struct Trajectory {
    std::vector<CVector> states;
    std::vector<double> fidelities;
};

namespace detail {

inline void check_evolution_inputs(const ControlSchedule &schedule,
                                   const ModelSpec &spec) {
    require(spec.n_sites >= 1 && spec.n_sites <= kMaxSites,
            "n_sites out of range");
    schedule.validate(spec.n_sites);
}

inline void check_state(const CVector &psi, Eigen::Index dim,
                        const std::string &name) {
    require(psi.size() == dim, name + " has dimension " +
                                   std::to_string(psi.size()) +
                                   ", expected " + std::to_string(dim));
    require(std::abs(psi.norm() - 1.0) < 1e-8, name + " is not normalized");
}

inline void check_finite(const CVector &psi, std::size_t slice) {
    if (!psi.allFinite()) {
        throw NumericalError("non-finite state during evolution",
                             static_cast<std::ptrdiff_t>(slice));
    }
}

/// Forward pass keeping every state and every slice's eigendata.
struct ForwardPass {
    std::vector<CVector> states;
    std::vector<EigenData> eigs;
};

inline auto forward_pass(const ControlSchedule &schedule, const ModelSpec &spec,
                         const CVector &psi0) -> ForwardPass {
    const double tau = schedule.tau();
    const CMatrix coupling = coupling_hamiltonian(spec);
    ForwardPass pass;
    pass.states.reserve(schedule.n_slices() + 1);
    pass.eigs.reserve(schedule.n_slices());
    pass.states.push_back(psi0);
    for (std::size_t k = 0; k < schedule.n_slices(); ++k) {
        CMatrix h = coupling;
        add_field_terms(h, schedule.fields[k]);
        if (!h.allFinite()) {
            throw NumericalError("non-finite Hamiltonian",
                                 static_cast<std::ptrdiff_t>(k));
        }
        pass.eigs.push_back(eigen_decompose(h));
        pass.states.push_back(apply_step(pass.eigs.back(), tau, pass.states.back()));
        check_finite(pass.states.back(), k);
    }
    return pass;
}

} // namespace detail

/// Evolves psi0 through every slice, retaining all K + 1 states.
inline auto evolve(const ControlSchedule &schedule, const ModelSpec &spec,
                   const CVector &psi0) -> Trajectory {
    detail::check_evolution_inputs(schedule, spec);
    detail::check_state(psi0, spec.dimension(), "initial state");
    const double tau = schedule.tau();
    const CMatrix coupling = coupling_hamiltonian(spec);
    Trajectory traj;
    traj.states.reserve(schedule.n_slices() + 1);
    traj.states.push_back(psi0);
    for (std::size_t k = 0; k < schedule.n_slices(); ++k) {
        CMatrix h = coupling;
        add_field_terms(h, schedule.fields[k]);
        const EigenData eig = eigen_decompose(h);
        traj.states.push_back(apply_step(eig, tau, traj.states.back()));
        detail::check_finite(traj.states.back(), k);
    }
    return traj;
}

/// Only the final state psi(T).
inline auto evolve_final(const ControlSchedule &schedule, const ModelSpec &spec,
                         const CVector &psi0) -> CVector {
    return evolve(schedule, spec, psi0).states.back();
}

/// evolve() plus f(k tau) = |<target|psi_k>| for k = 0..K.
inline auto fidelity_trajectory(const ControlSchedule &schedule,
                                const ModelSpec &spec, const CVector &psi0,
                                const CVector &target) -> Trajectory {
    detail::check_state(target, spec.dimension(), "target state");
    Trajectory traj = evolve(schedule, spec, psi0);
    traj.fidelities.reserve(traj.states.size());
    for (const auto &psi : traj.states) {
        traj.fidelities.push_back(fidelity(target, psi));
    }
    return traj;
}

/// G(T) = U_K ... U_1.
inline auto evolve_unitary(const ControlSchedule &schedule,
                           const ModelSpec &spec) -> CMatrix {
    detail::check_evolution_inputs(schedule, spec);
    const double tau = schedule.tau();
    const CMatrix coupling = coupling_hamiltonian(spec);
    CMatrix g = CMatrix::Identity(spec.dimension(), spec.dimension());
    for (std::size_t k = 0; k < schedule.n_slices(); ++k) {
        CMatrix h = coupling;
        add_field_terms(h, schedule.fields[k]);
        const CMatrix u = unitary_from_eigen(eigen_decompose(h), tau);
        g = (u * g).eval();
        if (!g.allFinite()) {
            throw NumericalError("non-finite propagator",
                                 static_cast<std::ptrdiff_t>(k));
        }
    }
    return g;
}

/// Trajectory records (k, t = k tau, f) for export.
struct TrajectoryPoint {
    std::size_t k;
    double time;
    double fidelity;
};

inline auto trajectory_points(const Trajectory &traj, double tau)
    -> std::vector<TrajectoryPoint> {
    std::vector<TrajectoryPoint> points;
    points.reserve(traj.fidelities.size());
    for (std::size_t k = 0; k < traj.fidelities.size(); ++k) {
        points.push_back({k, static_cast<double>(k) * tau, traj.fidelities[k]});
    }
    return points;
}

} // namespace spinprep
