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
 * Spin-1/2 operators and dense Hamiltonians for open nearest-neighbour chains.
 *
 * Basis convention: site 1 is the most significant bit of the basis index and
 * bit value 0 is spin up, so basis state 0 is the all-up product state.
 * Spin operators are S = sigma / 2.
 */
#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "errors.hpp"

namespace spinprep {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

/// Per-site field strengths, one row per site, columns x, y, z.
using FieldSlice = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline constexpr int kMaxSites = 14;

enum class Axis : int { X = 0, Y = 1, Z = 2 };
inline constexpr std::array<Axis, 3> kAxes{Axis::X, Axis::Y, Axis::Z};

enum class Model { Heisenberg, XY, Ising };

inline auto to_string(Model model) -> std::string {
    switch (model) {
    case Model::Heisenberg:
        return "heisenberg";
    case Model::XY:
        return "xy";
    case Model::Ising:
        return "ising";
    }
    return "unknown";
}

inline auto model_from_string(std::string_view name) -> Model {
    if (name == "heisenberg") {
        return Model::Heisenberg;
    }
    if (name == "xy") {
        return Model::XY;
    }
    if (name == "ising") {
        return Model::Ising;
    }
    throw ContractViolation("unknown model '" + std::string(name) + "'");
}

/// Which interaction, how many sites, and the per-axis couplings J^x, J^y, J^z.
struct ModelSpec {
    Model model = Model::Heisenberg;
    int n_sites = 2;
    std::array<double, 3> couplings{1.0, 1.0, 1.0};

    static auto heisenberg(int n, double j = 1.0) -> ModelSpec {
        return {Model::Heisenberg, n, {j, j, j}};
    }
    static auto xy(int n, double j = 1.0) -> ModelSpec {
        return {Model::XY, n, {j, j, 0.0}};
    }
    static auto ising(int n, double j = 1.0) -> ModelSpec {
        return {Model::Ising, n, {0.0, 0.0, j}};
    }
    /// Default couplings (unit strength) for the given model.
    static auto make(Model model, int n, double j = 1.0) -> ModelSpec {
        switch (model) {
        case Model::XY:
            return xy(n, j);
        case Model::Ising:
            return ising(n, j);
        case Model::Heisenberg:
            break;
        }
        return heisenberg(n, j);
    }

    [[nodiscard]] auto dimension() const -> Eigen::Index {
        return Eigen::Index{1} << n_sites;
    }

    /// Checks the coupling pattern against the model kind and the size cap.
    void validate() const {
        detail::require(n_sites >= 2 && n_sites <= kMaxSites,
                        "n_sites must lie in [2, " +
                            std::to_string(kMaxSites) + "]");
        const auto [jx, jy, jz] = couplings;
        for (double j : couplings) {
            detail::require(std::isfinite(j), "couplings must be finite");
        }
        switch (model) {
        case Model::Heisenberg:
            detail::require(jx == jy && jy == jz && jx != 0.0,
                            "heisenberg requires Jx = Jy = Jz != 0");
            break;
        case Model::XY:
            detail::require(jz == 0.0 && jx == jy && jx != 0.0,
                            "xy requires Jz = 0 and Jx = Jy != 0");
            break;
        case Model::Ising:
            detail::require(jx == 0.0 && jy == 0.0 && jz != 0.0,
                            "ising requires Jx = Jy = 0 and Jz != 0");
            break;
        }
    }

    friend auto operator==(const ModelSpec &, const ModelSpec &)
        -> bool = default;
};

namespace detail {

inline auto bit_of(int site, int n_sites) -> Eigen::Index {
    return Eigen::Index{1} << (n_sites - site);
}

inline void check_site(int site, int n_sites) {
    if (n_sites < 1 || n_sites > kMaxSites) {
        throw ContractViolation("chain length out of range");
    }
    if (site < 1 || site > n_sites) {
        throw IndexError("site " + std::to_string(site) + " outside [1, " +
                         std::to_string(n_sites) + "]");
    }
}

} // namespace detail

/**
 * Visits the non-zero entries of S^axis on `site` (1-based) as
 * `visit(row, col, value)`. Every column holds exactly one entry, at row
 * `col ^ mask` where mask is the site bit for x/y and 0 for z.
 */
template <class Visitor>
void for_each_site_entry(int site, Axis axis, int n_sites, Visitor &&visit) {
    detail::check_site(site, n_sites);
    const Eigen::Index bit = detail::bit_of(site, n_sites);
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    for (Eigen::Index col = 0; col < dim; ++col) {
        const bool down = (col & bit) != 0;
        switch (axis) {
        case Axis::X:
            visit(col ^ bit, col, Complex{0.5, 0.0});
            break;
        case Axis::Y:
            visit(col ^ bit, col, down ? Complex{0.0, -0.5} : Complex{0.0, 0.5});
            break;
        case Axis::Z:
            visit(col, col, Complex{down ? -0.5 : 0.5, 0.0});
            break;
        }
    }
}

/// Dense I (x) ... (x) S^axis (x) ... (x) I with S^axis at `site` (1-based).
inline auto site_operator(int site, Axis axis, int n_sites) -> CMatrix {
    detail::check_site(site, n_sites);
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    CMatrix op = CMatrix::Zero(dim, dim);
    for_each_site_entry(site, axis, n_sites,
                        [&](Eigen::Index r, Eigen::Index c, Complex v) {
                            op(r, c) += v;
                        });
    return op;
}

/// Sum of S^z over all sites.
inline auto total_sz(int n_sites) -> CMatrix {
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    CMatrix op = CMatrix::Zero(dim, dim);
    for (int site = 1; site <= n_sites; ++site) {
        for_each_site_entry(site, Axis::Z, n_sites,
                            [&](Eigen::Index r, Eigen::Index c, Complex v) {
                                op(r, c) += v;
                            });
    }
    return op;
}

/// The all-up product state (basis index 0).
inline auto all_up_state(int n_sites) -> CVector {
    CVector psi = CVector::Zero(Eigen::Index{1} << n_sites);
    psi(0) = 1.0;
    return psi;
}

/// Adds the single-site field terms sum_n sum_a h[n][a] S^a_n into `h`.
inline void add_field_terms(CMatrix &h, const FieldSlice &fields) {
    const int n_sites = static_cast<int>(fields.rows());
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    for (Eigen::Index col = 0; col < dim; ++col) {
        for (int site = 1; site <= n_sites; ++site) {
            const Eigen::Index bit = detail::bit_of(site, n_sites);
            const bool down = (col & bit) != 0;
            const double hx = fields(site - 1, 0);
            const double hy = fields(site - 1, 1);
            const double hz = fields(site - 1, 2);
            h(col, col) += down ? -0.5 * hz : 0.5 * hz;
            h(col ^ bit, col) +=
                Complex{0.5 * hx, down ? -0.5 * hy : 0.5 * hy};
        }
    }
}

/// Field-only Hamiltonian sum_n sum_a h[n][a] S^a_n.
inline auto field_hamiltonian(const FieldSlice &fields) -> CMatrix {
    const auto n_sites = static_cast<int>(fields.rows());
    detail::require(n_sites >= 1 && n_sites <= kMaxSites,
                    "field slice has invalid site count");
    const Eigen::Index dim = Eigen::Index{1} << n_sites;
    CMatrix h = CMatrix::Zero(dim, dim);
    add_field_terms(h, fields);
    return h;
}

/// Field-free coupling part sum_bonds sum_a J^a S^a_n S^a_{n+1}.
inline auto coupling_hamiltonian(const ModelSpec &spec) -> CMatrix {
    const int n = spec.n_sites;
    detail::require(n >= 1 && n <= kMaxSites, "n_sites out of range");
    const Eigen::Index dim = spec.dimension();
    const auto [jx, jy, jz] = spec.couplings;
    CMatrix h = CMatrix::Zero(dim, dim);
    for (Eigen::Index col = 0; col < dim; ++col) {
        for (int site = 1; site < n; ++site) {
            const Eigen::Index b1 = detail::bit_of(site, n);
            const Eigen::Index b2 = detail::bit_of(site + 1, n);
            const bool aligned = ((col & b1) != 0) == ((col & b2) != 0);
            h(col, col) += aligned ? 0.25 * jz : -0.25 * jz;
            h(col ^ b1 ^ b2, col) += 0.25 * jx + (aligned ? -0.25 : 0.25) * jy;
        }
    }
    return h;
}

/**
 * Full Hamiltonian H = sum_bonds sum_a J^a S^a_n S^a_{n+1}
 *                    + sum_n sum_a h[n][a] S^a_n.
 *
 * Only shapes and finiteness are checked here; the coupling pattern of
 * `spec.model` is enforced by ModelSpec::validate().
 */
inline auto build_hamiltonian(const ModelSpec &spec, const FieldSlice &fields)
    -> CMatrix {
    detail::require(spec.n_sites >= 1 && spec.n_sites <= kMaxSites,
                    "n_sites out of range");
    detail::require(fields.rows() == spec.n_sites,
                    "field slice has " + std::to_string(fields.rows()) +
                        " rows, expected " + std::to_string(spec.n_sites));
    detail::require(fields.allFinite(), "field slice contains NaN or Inf");
    CMatrix h = coupling_hamiltonian(spec);
    add_field_terms(h, fields);
    return h;
}

/// Max-norm distance of `h` from its adjoint.
inline auto hermiticity_error(const CMatrix &h) -> double {
    if (h.size() == 0) {
        return 0.0;
    }
    return (h - h.adjoint()).cwiseAbs().maxCoeff();
}

} // namespace spinprep
