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
 * Losses, exact schedule gradients and the Adam update.
 *
 * The gradient of any loss with respect to h[k][n][a] is assembled from one
 * forward pass (states or propagator prefixes plus per-slice eigendata) and
 * one backward pass. For slice k the derivative of exp(-i tau H_k) along
 * S^a_n is expressed in the eigenbasis of H_k,
 *
 *     dU = V (Gamma o (V^dagger D V)) V^dagger,
 *     Gamma_ab = (e^{-i tau l_a} - e^{-i tau l_b}) / (l_a - l_b),
 *
 * so every scalar of the form tr(C dU) reduces to sum_ij D_ij Q_ij with
 * Q = conj(V) (C~^T o Gamma) V^T and C~ = V^dagger C V. Since S^a_n has one
 * entry per column, each of the 3N components costs O(d^2) once Q's left
 * factor is formed.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "dynamics.hpp"
#include "errors.hpp"
#include "hilbert.hpp"

namespace spinprep {

enum class LossKind { NLF, OneMinusF, GateFrobenius };

inline auto to_string(LossKind kind) -> std::string {
    switch (kind) {
    case LossKind::NLF:
        return "nlf";
    case LossKind::OneMinusF:
        return "one_minus_f";
    case LossKind::GateFrobenius:
        return "gate_frobenius";
    }
    return "unknown";
}

inline auto loss_kind_from_string(std::string_view name) -> LossKind {
    if (name == "nlf") {
        return LossKind::NLF;
    }
    if (name == "one_minus_f") {
        return LossKind::OneMinusF;
    }
    if (name == "gate_frobenius") {
        return LossKind::GateFrobenius;
    }
    throw ContractViolation("unknown loss kind '" + std::string(name) + "'");
}

/// Lower bound applied to f (and to F_G) inside logs and divisions.
inline constexpr double kFidelityClamp = 1e-12;

/// d/dh[k][n][a] of a loss; same shape as ControlSchedule::fields.
using GradientTensor = std::vector<FieldSlice>;

/// Loss of a state-preparation run given the fidelity f.
inline auto loss_value(LossKind kind, double f) -> double {
    detail::require(f >= -1e-9 && f <= 1.0 + 1e-9,
                    "fidelity " + std::to_string(f) + " outside [0, 1]");
    switch (kind) {
    case LossKind::NLF:
        return -std::log(std::max(f, kFidelityClamp));
    case LossKind::OneMinusF:
        return 1.0 - f;
    case LossKind::GateFrobenius:
        break;
    }
    throw ContractViolation("gate loss needs matrices, not a fidelity");
}

/// Target unitary for gate synthesis. With `phase_invariant` the loss is
/// min_phi || e^{i phi} G - G_tar ||_F instead of the plain difference.
struct GateTarget {
    CMatrix gate;
    bool phase_invariant = false;
};

namespace detail {

struct GateResidual {
    Complex phase{1.0, 0.0};
    CMatrix residual;
    double norm = 0.0;
};

inline auto gate_residual(const CMatrix &g, const GateTarget &target)
    -> GateResidual {
    require(g.rows() == target.gate.rows() && g.cols() == target.gate.cols(),
            "gate loss: dimension mismatch");
    GateResidual out;
    if (target.phase_invariant) {
        const Complex overlap = (target.gate.adjoint() * g).trace();
        if (std::abs(overlap) > 0.0) {
            out.phase = std::conj(overlap) / std::abs(overlap);
        }
    }
    out.residual = out.phase * g - target.gate;
    out.norm = out.residual.norm();
    return out;
}

} // namespace detail

/// Frobenius norm of G - G_tar (or its phase-minimised variant).
inline auto gate_loss(const CMatrix &g, const GateTarget &target) -> double {
    return detail::gate_residual(g, target).norm;
}

inline auto loss_value(LossKind kind, const CMatrix &g, const CMatrix &target)
    -> double {
    detail::require(kind == LossKind::GateFrobenius,
                    "matrix loss requires LossKind::GateFrobenius");
    return gate_loss(g, GateTarget{target, false});
}

/// |tr(G_tar^dagger G)| / d.
inline auto gate_fidelity(const CMatrix &g, const CMatrix &target) -> double {
    detail::require(g.rows() == target.rows(), "gate fidelity: dimension mismatch");
    return std::min(1.0, std::abs((target.adjoint() * g).trace()) /
                             static_cast<double>(g.rows()));
}

/**
 * Gamma_ab = (e^{-i tau l_a} - e^{-i tau l_b}) / (l_a - l_b), with the
 * diagonal limit -i tau e^{-i tau l_a}.
 *
 * Evaluated as -i tau e^{-i tau (l_a + l_b)/2} sinc(tau (l_a - l_b)/2), which
 * is the same function without cancellation for nearly equal eigenvalues.
 */
inline auto divided_difference_kernel(const EigenData &eig, double tau)
    -> CMatrix {
    const Eigen::Index dim = eig.values.size();
    CVector half(dim);
    for (Eigen::Index a = 0; a < dim; ++a) {
        half(a) = std::polar(1.0, -0.5 * tau * eig.values(a));
    }
    CMatrix gamma(dim, dim);
    const Complex prefactor{0.0, -tau};
    for (Eigen::Index b = 0; b < dim; ++b) {
        for (Eigen::Index a = 0; a < dim; ++a) {
            const double x = 0.5 * tau * (eig.values(a) - eig.values(b));
            const double sinc = std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0
                                                    : std::sin(x) / x;
            gamma(a, b) = prefactor * half(a) * half(b) * sinc;
        }
    }
    return gamma;
}

/// d/dtheta exp(-i tau (H + theta D)) at theta = 0, with H given by `eig`.
inline auto expm_directional_derivative(const EigenData &eig,
                                        const CMatrix &direction, double tau)
    -> CMatrix {
    const Eigen::Index dim = eig.values.size();
    detail::require(direction.rows() == dim && direction.cols() == dim,
                    "direction has wrong dimension");
    const CMatrix rotated = eig.vectors.adjoint() * direction * eig.vectors;
    const CMatrix inner =
        divided_difference_kernel(eig, tau).cwiseProduct(rotated);
    return eig.vectors * inner * eig.vectors.adjoint();
}

namespace detail {

using RowMajorCMatrix =
    Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/**
 * Returns Re tr(C dU/dh[n][a]) for every site and axis of one slice, given
 * weights = (V^dagger C V)^T o Gamma.
 */
inline auto contract_slice(const EigenData &eig, const CMatrix &weights,
                           int n_sites) -> FieldSlice {
    const RowMajorCMatrix left = eig.vectors.conjugate() * weights;
    const RowMajorCMatrix right = eig.vectors;
    FieldSlice grad(n_sites, 3);
    for (int site = 1; site <= n_sites; ++site) {
        for (Axis axis : kAxes) {
            Complex acc{0.0, 0.0};
            for_each_site_entry(
                site, axis, n_sites,
                [&](Eigen::Index r, Eigen::Index c, Complex v) {
                    acc += v * left.row(r).cwiseProduct(right.row(c)).sum();
                });
            grad(site - 1, static_cast<int>(axis)) = acc.real();
        }
    }
    return grad;
}

inline void check_gradient(const FieldSlice &grad, std::size_t slice) {
    if (!grad.allFinite()) {
        throw NumericalError("non-finite gradient",
                             static_cast<std::ptrdiff_t>(slice));
    }
}

inline auto zero_like(const ControlSchedule &schedule) -> GradientTensor {
    return GradientTensor(schedule.n_slices(),
                          FieldSlice::Zero(schedule.n_sites(), 3));
}

} // namespace detail

struct LossAndGradient {
    double loss = 0.0;
    double fidelity = 0.0;
    GradientTensor grad;
};

/// Loss and fidelity of a state-preparation schedule, forward pass only.
inline auto schedule_loss(const ControlSchedule &schedule, const ModelSpec &spec,
                          const CVector &psi0, const CVector &target,
                          LossKind kind) -> LossAndGradient {
    detail::require(kind != LossKind::GateFrobenius,
                    "state loss cannot be GateFrobenius");
    detail::check_state(target, spec.dimension(), "target state");
    const CVector final_state = evolve_final(schedule, spec, psi0);
    const double f = fidelity(target, final_state);
    return {loss_value(kind, f), f, {}};
}

/// Exact gradient of NLF or 1 - f with respect to every field component.
inline auto schedule_gradient(const ControlSchedule &schedule,
                              const ModelSpec &spec, const CVector &psi0,
                              const CVector &target, LossKind kind)
    -> LossAndGradient {
    detail::require(kind != LossKind::GateFrobenius,
                    "state gradient cannot use GateFrobenius");
    detail::check_evolution_inputs(schedule, spec);
    detail::check_state(psi0, spec.dimension(), "initial state");
    detail::check_state(target, spec.dimension(), "target state");

    const double tau = schedule.tau();
    const detail::ForwardPass pass = detail::forward_pass(schedule, spec, psi0);
    const Complex overlap = target.dot(pass.states.back());
    const double magnitude = std::max(std::abs(overlap), kFidelityClamp);
    const double f = std::min(1.0, std::abs(overlap));

    // dF = Re(weight * dc) with c = <target|psi_K>.
    Complex weight = -std::conj(overlap) / magnitude;
    if (kind == LossKind::NLF) {
        weight /= magnitude;
    }

    LossAndGradient out{loss_value(kind, f), f, {}};
    out.grad.resize(schedule.n_slices());
    CVector adjoint = target;
    for (std::size_t k = schedule.n_slices(); k-- > 0;) {
        const EigenData &eig = pass.eigs[k];
        const CVector a = eig.vectors.adjoint() * adjoint;
        const CVector b = eig.vectors.adjoint() * pass.states[k];
        CMatrix weights = divided_difference_kernel(eig, tau);
        weights.array().colwise() *= a.conjugate().array();
        weights.array().rowwise() *= b.transpose().array();
        weights *= weight;
        out.grad[k] = detail::contract_slice(eig, weights, spec.n_sites);
        detail::check_gradient(out.grad[k], k);
        adjoint = apply_step_adjoint(eig, tau, adjoint);
    }
    return out;
}

/// Gate loss of a schedule, forward pass only. `fidelity` holds the gate
/// fidelity |tr(G_tar^dagger G)| / d.
inline auto schedule_loss(const ControlSchedule &schedule, const ModelSpec &spec,
                          const GateTarget &target) -> LossAndGradient {
    const CMatrix g = evolve_unitary(schedule, spec);
    return {gate_loss(g, target), gate_fidelity(g, target.gate), {}};
}

/// Exact gradient of the gate loss with respect to every field component.
inline auto schedule_gradient(const ControlSchedule &schedule,
                              const ModelSpec &spec, const GateTarget &target)
    -> LossAndGradient {
    detail::check_evolution_inputs(schedule, spec);
    const Eigen::Index dim = spec.dimension();
    detail::require(target.gate.rows() == dim && target.gate.cols() == dim,
                    "target gate has wrong dimension");
    const double tau = schedule.tau();
    const std::size_t n_slices = schedule.n_slices();
    const CMatrix coupling = coupling_hamiltonian(spec);

    // prefixes[k] = U_k ... U_1, prefixes[0] = I.
    std::vector<EigenData> eigs;
    std::vector<CMatrix> unitaries;
    std::vector<CMatrix> prefixes;
    eigs.reserve(n_slices);
    unitaries.reserve(n_slices);
    prefixes.reserve(n_slices + 1);
    prefixes.push_back(CMatrix::Identity(dim, dim));
    for (std::size_t k = 0; k < n_slices; ++k) {
        CMatrix h = coupling;
        add_field_terms(h, schedule.fields[k]);
        eigs.push_back(eigen_decompose(h));
        unitaries.push_back(unitary_from_eigen(eigs.back(), tau));
        prefixes.push_back(unitaries.back() * prefixes.back());
        if (!prefixes.back().allFinite()) {
            throw NumericalError("non-finite propagator",
                                 static_cast<std::ptrdiff_t>(k));
        }
    }

    const auto residual = detail::gate_residual(prefixes.back(), target);
    const double norm = std::max(residual.norm, kFidelityClamp);
    // dF = Re tr(seed dG); the optimal phase is stationary so it drops out.
    CMatrix suffix = residual.phase * residual.residual.adjoint() / norm;

    LossAndGradient out{residual.norm,
                        gate_fidelity(prefixes.back(), target.gate), {}};
    out.grad.resize(n_slices);
    for (std::size_t k = n_slices; k-- > 0;) {
        const EigenData &eig = eigs[k];
        const CMatrix rotated =
            eig.vectors.adjoint() * (prefixes[k] * suffix) * eig.vectors;
        const CMatrix weights =
            rotated.transpose().cwiseProduct(divided_difference_kernel(eig, tau));
        out.grad[k] = detail::contract_slice(eig, weights, spec.n_sites);
        detail::check_gradient(out.grad[k], k);
        suffix = (suffix * unitaries[k]).eval();
    }
    return out;
}

/// Central differences of an arbitrary schedule -> loss functional.
template <class LossFn>
auto finite_difference_gradient(const ControlSchedule &schedule, LossFn &&loss,
                                double step) -> GradientTensor {
    detail::require(step > 0.0, "finite-difference step must be positive");
    GradientTensor grad = detail::zero_like(schedule);
    ControlSchedule probe = schedule;
    for (std::size_t k = 0; k < schedule.n_slices(); ++k) {
        for (Eigen::Index n = 0; n < schedule.fields[k].rows(); ++n) {
            for (int a = 0; a < 3; ++a) {
                const double original = schedule.fields[k](n, a);
                probe.fields[k](n, a) = original + step;
                const double plus = loss(probe);
                probe.fields[k](n, a) = original - step;
                const double minus = loss(probe);
                probe.fields[k](n, a) = original;
                grad[k](n, a) = (plus - minus) / (2.0 * step);
            }
        }
    }
    return grad;
}

inline auto finite_difference_gradient(const ControlSchedule &schedule,
                                       const ModelSpec &spec,
                                       const CVector &psi0,
                                       const CVector &target, LossKind kind,
                                       double step) -> GradientTensor {
    return finite_difference_gradient(
        schedule,
        [&](const ControlSchedule &s) {
            return schedule_loss(s, spec, psi0, target, kind).loss;
        },
        step);
}

inline auto finite_difference_gradient(const ControlSchedule &schedule,
                                       const ModelSpec &spec,
                                       const GateTarget &target, double step)
    -> GradientTensor {
    return finite_difference_gradient(
        schedule,
        [&](const ControlSchedule &s) {
            return schedule_loss(s, spec, target).loss;
        },
        step);
}

struct AdamHyperparameters {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    long step = 0;
    GradientTensor first_moment;
    GradientTensor second_moment;
    AdamHyperparameters hyper;

    static auto fresh(const std::vector<FieldSlice> &params,
                      AdamHyperparameters hyper = {}) -> OptimizerState {
        OptimizerState state;
        state.hyper = hyper;
        for (const auto &slice : params) {
            state.first_moment.push_back(FieldSlice::Zero(slice.rows(), 3));
            state.second_moment.push_back(FieldSlice::Zero(slice.rows(), 3));
        }
        return state;
    }
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(std::vector<FieldSlice> &params,
                      const GradientTensor &grad, OptimizerState &state) {
    detail::require(params.size() == grad.size() &&
                        params.size() == state.first_moment.size() &&
                        params.size() == state.second_moment.size(),
                    "adam_step: slice count mismatch");
    const auto &hp = state.hyper;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(hp.beta1, t);
    const double correction2 = 1.0 - std::pow(hp.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        detail::require(params[k].rows() == grad[k].rows(),
                        "adam_step: site count mismatch");
        auto m = state.first_moment[k].array();
        auto v = state.second_moment[k].array();
        const auto g = grad[k].array();
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g.square();
        params[k].array() -= hp.learning_rate * (m / correction1) /
                             ((v / correction2).sqrt() + hp.epsilon);
    }
}

} // namespace spinprep
