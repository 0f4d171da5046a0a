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
 * Exception types shared by all spinprep modules.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spinprep {

/// A precondition on shapes, ranges or structure of an argument was violated.
class ContractViolation : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Site or slice index outside its valid range.
class IndexError : public std::out_of_range {
  public:
    using std::out_of_range::out_of_range;
};

/// A NaN or Inf showed up during evolution or differentiation.
class NumericalError : public std::runtime_error {
  public:
    NumericalError(const std::string &what, std::ptrdiff_t slice = -1)
        : std::runtime_error(slice >= 0 ? what + " (slice " +
                                              std::to_string(slice) + ")"
                                        : what),
          slice_(slice) {}

    /// Zero-based slice index where the failure was detected, or -1.
    [[nodiscard]] auto slice() const -> std::ptrdiff_t { return slice_; }

  private:
    std::ptrdiff_t slice_;
};

/// The lowest eigenvalue is (numerically) degenerate, so the ground state is
/// not unique. Carries the spectrum bottom so callers can still report it.
class DegenerateGroundState : public std::runtime_error {
  public:
    DegenerateGroundState(double energy, double gap)
        : std::runtime_error("degenerate ground state: gap " +
                             std::to_string(gap) + " below tolerance"),
          energy_(energy), gap_(gap) {}

    [[nodiscard]] auto energy() const -> double { return energy_; }
    [[nodiscard]] auto gap() const -> double { return gap_; }

  private:
    double energy_;
    double gap_;
};

namespace detail {
inline void require(bool condition, const std::string &message) {
    if (!condition) {
        throw ContractViolation(message);
    }
}
} // namespace detail

} // namespace spinprep
