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
 * Field-optimization protocols.
 *
 *  - GTO: every slice updated simultaneously against the loss at time T.
 *  - STO: slices optimized greedily one after another, slice k against the
 *    loss at time k tau with earlier slices frozen.
 *  - FGTO: GTO at K = 1, then repeated K -> 2K fine-graining, each stage
 *    seeded by duplicating the previous stage's fields.
 *
 * Every run returns the best schedule seen (lowest loss), not the last one.
 */
#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "control.hpp"
#include "dynamics.hpp"
#include "errors.hpp"
#include "hilbert.hpp"

namespace spinprep {

enum class Protocol { STO, GTO, FGTO };

inline auto to_string(Protocol protocol) -> std::string {
    switch (protocol) {
    case Protocol::STO:
        return "STO";
    case Protocol::GTO:
        return "GTO";
    case Protocol::FGTO:
        return "FGTO";
    }
    return "unknown";
}

inline auto protocol_from_string(std::string_view name) -> Protocol {
    if (name == "STO") {
        return Protocol::STO;
    }
    if (name == "GTO") {
        return Protocol::GTO;
    }
    if (name == "FGTO") {
        return Protocol::FGTO;
    }
    throw ContractViolation("unknown protocol '" + std::string(name) + "'");
}

/// How GTO seeds its fields: fresh normal draws, or the output of an STO run.
enum class InitMode { Random, Sto };

struct ProtocolConfig {
    Protocol protocol = Protocol::FGTO;
    double total_time = 6.0;
    /// Final slice count; a power of two for FGTO.
    std::size_t n_slices = 16;
    /// Epochs per stage for FGTO, per slice for STO, in total for GTO.
    int epochs = 200;
    std::uint64_t seed = 0;
    double init_scale = 1.0;
    LossKind loss = LossKind::NLF;
    AdamHyperparameters adam;
    InitMode init_mode = InitMode::Random;
    /// Only used by synthesize_gate.
    bool phase_invariant_gate = true;
};

/// Number of FGTO stages minus one, i.e. log2(K); nullopt if K is not 2^m.
inline auto fine_grain_depth(std::size_t n_slices) -> std::optional<int> {
    if (n_slices == 0 || (n_slices & (n_slices - 1)) != 0) {
        return std::nullopt;
    }
    int depth = 0;
    while ((std::size_t{1} << depth) < n_slices) {
        ++depth;
    }
    return depth;
}

/// GTO epoch budget equal to FGTO's total over all stages.
inline auto matched_epochs(int epochs_per_stage, std::size_t n_slices) -> int {
    const auto depth = fine_grain_depth(n_slices);
    detail::require(depth.has_value(), "matched_epochs needs K = 2^m");
    return epochs_per_stage * (*depth + 1);
}

struct StageRecord {
    std::size_t n_slices = 0;
    double fidelity = 0.0;
    double loss = 0.0;
    std::size_t epochs = 0;
};

struct RunResult {
    double fidelity = 0.0;
    double loss = 0.0;
    std::vector<double> history;
    ControlSchedule schedule;
    /// One entry per FGTO stage; a single entry for GTO/STO.
    std::vector<StageRecord> stages;
    double wall_seconds = 0.0;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
};

/// 64-bit FNV-1a, used for stable config fingerprints.
inline auto fnv1a64(std::string_view text) -> std::uint64_t {
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

inline auto describe(const ProtocolConfig &config, const ModelSpec &spec)
    -> std::string {
    std::ostringstream out;
    out.precision(17);
    out << "protocol=" << to_string(config.protocol)
        << ";T=" << config.total_time << ";K=" << config.n_slices
        << ";epochs=" << config.epochs << ";seed=" << config.seed
        << ";scale=" << config.init_scale << ";loss=" << to_string(config.loss)
        << ";eta=" << config.adam.learning_rate
        << ";beta1=" << config.adam.beta1 << ";beta2=" << config.adam.beta2
        << ";eps=" << config.adam.epsilon
        << ";init=" << (config.init_mode == InitMode::Sto ? "sto" : "random")
        << ";phase_invariant_gate=" << config.phase_invariant_gate
        << ";model=" << to_string(spec.model) << ";N=" << spec.n_sites
        << ";J=" << spec.couplings[0] << ',' << spec.couplings[1] << ','
        << spec.couplings[2];
    return out.str();
}

/// K x N x 3 i.i.d. standard normal entries times `scale`, from a seeded
/// mt19937_64 in (k, n, axis) order.
inline auto init_fields(std::size_t n_slices, int n_sites, std::uint64_t seed,
                        double scale) -> std::vector<FieldSlice> {
    detail::require(scale >= 0.0 && std::isfinite(scale),
                    "init scale must be non-negative");
    detail::require(n_sites >= 1, "n_sites must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<FieldSlice> fields(n_slices, FieldSlice(n_sites, 3));
    for (auto &slice : fields) {
        for (int n = 0; n < n_sites; ++n) {
            for (int a = 0; a < 3; ++a) {
                slice(n, a) = scale * normal(rng);
            }
        }
    }
    return fields;
}

/// K -> 2K with fields[2k] = fields[2k+1] = old fields[k]; T is unchanged.
inline auto fine_grain(const ControlSchedule &schedule) -> ControlSchedule {
    ControlSchedule out;
    out.total_time = schedule.total_time;
    out.fields.reserve(2 * schedule.n_slices());
    for (const auto &slice : schedule.fields) {
        out.fields.push_back(slice);
        out.fields.push_back(slice);
    }
    return out;
}

namespace detail {

struct StageResult {
    ControlSchedule best;
    double best_loss = std::numeric_limits<double>::infinity();
};

/**
 * Adam loop shared by every protocol. `with_gradient(schedule)` returns a
 * LossAndGradient, `loss_only(schedule)` the same without the gradient.
 * The loss before each update is appended to `history`; the schedule after
 * the last update is scored with `loss_only` as a final candidate.
 */
template <class GradientFn, class LossFn>
auto optimize_stage(ControlSchedule schedule, int epochs,
                    const AdamHyperparameters &hyper, GradientFn &&with_gradient,
                    LossFn &&loss_only, std::vector<double> &history,
                    std::size_t epoch_offset) -> StageResult {
    StageResult result;
    OptimizerState state = OptimizerState::fresh(schedule.fields, hyper);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        LossAndGradient lg;
        try {
            lg = with_gradient(schedule);
        } catch (const NumericalError &err) {
            throw NumericalError(
                std::string(err.what()) + " at epoch " +
                    std::to_string(epoch_offset + static_cast<std::size_t>(epoch)),
                err.slice());
        }
        history.push_back(lg.loss);
        if (lg.loss < result.best_loss) {
            result.best_loss = lg.loss;
            result.best = schedule;
        }
        adam_step(schedule.fields, lg.grad, state);
    }
    const double last = loss_only(schedule).loss;
    if (last < result.best_loss) {
        result.best_loss = last;
        result.best = schedule;
    }
    return result;
}

inline void check_protocol_inputs(const ProtocolConfig &config,
                                  const ModelSpec &spec) {
    spec.validate();
    require(config.total_time > 0.0 && std::isfinite(config.total_time),
            "total_time must be positive");
    require(config.n_slices >= 1, "n_slices must be positive");
    require(config.epochs >= 0, "epochs must be non-negative");
}

inline auto elapsed_since(std::chrono::steady_clock::time_point start)
    -> double {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
}

} // namespace detail

/// Scores `schedule` at time T and fills fidelity, loss and schedule.
inline void finalize_state_run(RunResult &result, ControlSchedule schedule,
                               const ModelSpec &spec, const CVector &psi0,
                               const CVector &target, LossKind kind) {
    const auto scored = schedule_loss(schedule, spec, psi0, target, kind);
    result.fidelity = scored.fidelity;
    result.loss = scored.loss;
    result.schedule = std::move(schedule);
}

namespace detail {

inline auto gto_stage(const ControlSchedule &initial, int epochs,
                      const ProtocolConfig &config, const ModelSpec &spec,
                      const CVector &psi0, const CVector &target,
                      std::vector<double> &history) -> StageResult {
    return optimize_stage(
        initial, epochs, config.adam,
        [&](const ControlSchedule &s) {
            return schedule_gradient(s, spec, psi0, target, config.loss);
        },
        [&](const ControlSchedule &s) {
            return schedule_loss(s, spec, psi0, target, config.loss);
        },
        history, history.size());
}

} // namespace detail

/// Greedy slice-by-slice optimization.
inline auto run_sto(const ProtocolConfig &config, const ModelSpec &spec,
                    const CVector &target, const CVector &psi0) -> RunResult {
    detail::require(config.protocol == Protocol::STO ||
                        config.init_mode == InitMode::Sto,
                    "run_sto called with a non-STO config");
    detail::check_protocol_inputs(config, spec);
    const auto start = std::chrono::steady_clock::now();

    ControlSchedule schedule{
        config.total_time,
        init_fields(config.n_slices, spec.n_sites, config.seed, config.init_scale)};
    const double tau = schedule.tau();
    const std::size_t n_slices = schedule.n_slices();

    RunResult result;
    result.seed = config.seed;
    result.config_hash = fnv1a64(describe(config, spec));
    result.history.reserve(n_slices * static_cast<std::size_t>(config.epochs));

    CVector psi = psi0;
    for (std::size_t k = 0; k < n_slices; ++k) {
        const ControlSchedule single{tau, {schedule.fields[k]}};
        const auto stage = detail::gto_stage(single, config.epochs, config, spec,
                                             psi, target, result.history);
        schedule.fields[k] = stage.best.fields.front();
        psi = evolve_final(stage.best, spec, psi);
    }

    finalize_state_run(result, std::move(schedule), spec, psi0, target,
                       config.loss);
    result.stages.push_back(
        {n_slices, result.fidelity, result.loss, result.history.size()});
    result.wall_seconds = detail::elapsed_since(start);
    return result;
}

/// All slices optimized simultaneously from a random (or STO) start.
inline auto run_gto(const ProtocolConfig &config, const ModelSpec &spec,
                    const CVector &target, const CVector &psi0) -> RunResult {
    detail::require(config.protocol == Protocol::GTO,
                    "run_gto called with a non-GTO config");
    detail::check_protocol_inputs(config, spec);
    const auto start = std::chrono::steady_clock::now();

    RunResult result;
    result.seed = config.seed;
    result.config_hash = fnv1a64(describe(config, spec));

    ControlSchedule initial;
    if (config.init_mode == InitMode::Sto) {
        RunResult seeded = run_sto(config, spec, target, psi0);
        initial = std::move(seeded.schedule);
        result.history = std::move(seeded.history);
    } else {
        initial = {config.total_time,
                   init_fields(config.n_slices, spec.n_sites, config.seed,
                               config.init_scale)};
    }
    auto stage = detail::gto_stage(initial, config.epochs, config, spec, psi0,
                                   target, result.history);
    finalize_state_run(result, std::move(stage.best), spec, psi0, target,
                       config.loss);
    result.stages.push_back({config.n_slices, result.fidelity, result.loss,
                             static_cast<std::size_t>(config.epochs)});
    result.wall_seconds = detail::elapsed_since(start);
    return result;
}

/// Fine-grained time optimization: K = 1, 2, 4, ..., config.n_slices with
/// config.epochs per stage.
inline auto run_fgto(const ProtocolConfig &config, const ModelSpec &spec,
                     const CVector &target, const CVector &psi0) -> RunResult {
    detail::require(config.protocol == Protocol::FGTO,
                    "run_fgto called with a non-FGTO config");
    detail::check_protocol_inputs(config, spec);
    const auto depth = fine_grain_depth(config.n_slices);
    detail::require(depth.has_value(), "FGTO needs n_slices = 2^m");
    const auto start = std::chrono::steady_clock::now();

    RunResult result;
    result.seed = config.seed;
    result.config_hash = fnv1a64(describe(config, spec));

    ControlSchedule schedule{
        config.total_time,
        init_fields(1, spec.n_sites, config.seed, config.init_scale)};
    for (int level = 0; level <= *depth; ++level) {
        if (level > 0) {
            schedule = fine_grain(schedule);
        }
        auto stage = detail::gto_stage(schedule, config.epochs, config, spec,
                                       psi0, target, result.history);
        schedule = std::move(stage.best);
        const auto scored =
            schedule_loss(schedule, spec, psi0, target, config.loss);
        result.stages.push_back({schedule.n_slices(), scored.fidelity,
                                 scored.loss,
                                 static_cast<std::size_t>(config.epochs)});
    }
    finalize_state_run(result, std::move(schedule), spec, psi0, target,
                       config.loss);
    result.wall_seconds = detail::elapsed_since(start);
    return result;
}

/// Dispatches on config.protocol.
inline auto run_protocol(const ProtocolConfig &config, const ModelSpec &spec,
                         const CVector &target, const CVector &psi0)
    -> RunResult {
    switch (config.protocol) {
    case Protocol::STO:
        return run_sto(config, spec, target, psi0);
    case Protocol::GTO:
        return run_gto(config, spec, target, psi0);
    case Protocol::FGTO:
        return run_fgto(config, spec, target, psi0);
    }
    throw ContractViolation("unknown protocol");
}

// Two-qubit targets; site 1 (the most significant bit) is the CNOT control.

inline auto swap_gate() -> CMatrix {
    CMatrix g = CMatrix::Zero(4, 4);
    g(0, 0) = g(1, 2) = g(2, 1) = g(3, 3) = 1.0;
    return g;
}

inline auto sqrt_swap_gate() -> CMatrix {
    CMatrix g = CMatrix::Zero(4, 4);
    g(0, 0) = g(3, 3) = 1.0;
    g(1, 1) = g(2, 2) = Complex{0.5, 0.5};
    g(1, 2) = g(2, 1) = Complex{0.5, -0.5};
    return g;
}

inline auto cnot_gate() -> CMatrix {
    CMatrix g = CMatrix::Zero(4, 4);
    g(0, 0) = g(1, 1) = g(2, 3) = g(3, 2) = 1.0;
    return g;
}

inline auto named_gate(std::string_view name) -> CMatrix {
    if (name == "SWAP") {
        return swap_gate();
    }
    if (name == "SQRT_SWAP") {
        return sqrt_swap_gate();
    }
    if (name == "CNOT") {
        return cnot_gate();
    }
    throw ContractViolation("unknown gate '" + std::string(name) + "'");
}

/// GTO on the gate loss of the two-site propagator G(T).
inline auto synthesize_gate(const ProtocolConfig &config, const ModelSpec &spec,
                            const CMatrix &target_gate) -> RunResult {
    detail::check_protocol_inputs(config, spec);
    detail::require(spec.n_sites == 2, "gate synthesis is defined for N = 2");
    detail::require(target_gate.rows() == 4 && target_gate.cols() == 4,
                    "target gate must be 4 x 4");
    detail::require(
        (target_gate.adjoint() * target_gate - CMatrix::Identity(4, 4))
                .cwiseAbs()
                .maxCoeff() < 1e-9,
        "target gate is not unitary");
    const auto start = std::chrono::steady_clock::now();
    const GateTarget target{target_gate, config.phase_invariant_gate};

    RunResult result;
    result.seed = config.seed;
    result.config_hash = fnv1a64(describe(config, spec));
    const ControlSchedule initial{
        config.total_time,
        init_fields(config.n_slices, spec.n_sites, config.seed, config.init_scale)};
    auto stage = detail::optimize_stage(
        initial, config.epochs, config.adam,
        [&](const ControlSchedule &s) { return schedule_gradient(s, spec, target); },
        [&](const ControlSchedule &s) { return schedule_loss(s, spec, target); },
        result.history, 0);
    const auto scored = schedule_loss(stage.best, spec, target);
    result.loss = scored.loss;
    result.fidelity = scored.fidelity;
    result.schedule = std::move(stage.best);
    result.stages.push_back({config.n_slices, result.fidelity, result.loss,
                             static_cast<std::size_t>(config.epochs)});
    result.wall_seconds = detail::elapsed_since(start);
    return result;
}

/// Smallest grid index from which every later value is <= threshold.
inline auto locate_knee(const std::vector<double> &values, double threshold)
    -> std::optional<std::size_t> {
    std::optional<std::size_t> knee;
    for (std::size_t i = values.size(); i-- > 0;) {
        if (values[i] > threshold) {
            break;
        }
        knee = i;
    }
    return knee;
}

struct ScalingFit {
    double mu = 0.0;
    double nu = 0.0;
    std::size_t used = 0;
    /// Points dropped because 1 - f <= kFitSaturation.
    std::vector<std::pair<double, double>> excluded;
};

/// Fidelities this close to 1 carry only round-off in ln(1 - f).
inline constexpr double kFitSaturation = 1e-12;

/// Least squares of ln(1 - f) = ln(mu) + nu N over the unsaturated points.
inline auto fit_exponential_scaling(
    const std::vector<std::pair<double, double>> &points) -> ScalingFit {
    ScalingFit fit;
    double sx = 0.0;
    double sy = 0.0;
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto &[n, f] : points) {
        if (!(1.0 - f > kFitSaturation)) {
            fit.excluded.emplace_back(n, f);
            continue;
        }
        const double y = std::log(1.0 - f);
        sx += n;
        sy += y;
        sxx += n * n;
        sxy += n * y;
        ++fit.used;
    }
    if (fit.used < 2) {
        throw ContractViolation("scaling fit needs at least two unsaturated points");
    }
    const double m = static_cast<double>(fit.used);
    const double denom = m * sxx - sx * sx;
    detail::require(std::abs(denom) > 1e-12 * std::max(1.0, m * sxx),
                    "scaling fit needs two distinct N values");
    fit.nu = (m * sxy - sx * sy) / denom;
    fit.mu = std::exp((sy - fit.nu * sx) / m);
    return fit;
}

} // namespace spinprep
