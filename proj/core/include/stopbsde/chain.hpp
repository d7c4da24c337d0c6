#pragma once

// Rate matrices use the column convention throughout: entry (j, i) is the
// rate of jumping FROM state i TO state j, so every column sums to zero and
// the transpose is the usual row-convention generator.

#include "stopbsde/common.hpp"

#include <functional>
#include <iosfwd>
#include <limits>
#include <span>
#include <vector>

namespace stopbsde {

/// One structural defect found while validating a candidate rate matrix.
struct RateDiagnostic {
  ErrorCode code;
  std::size_t row = 0;     // j (destination) for entry defects
  std::size_t column = 0;  // i (origin)
  double value = 0.0;      // offending entry, or the column residual
  std::string message() const;
};

class RateMatrix {
 public:
  /// Column sums within this bound are accepted as is.
  static constexpr double kColumnTolerance = 1e-12;
  /// Column sums within this bound are absorbed into the diagonal.
  static constexpr double kRenormalizeTolerance = 1e-9;

  RateMatrix() = default;

  /// Validates `q` and returns it as a rate matrix. Throws Error with the
  /// first diagnostic on failure.
  static RateMatrix validate(Matrix q);

  std::size_t size() const noexcept { return static_cast<std::size_t>(q_.rows()); }
  const Matrix& matrix() const noexcept { return q_; }

  /// Rate of jumping from `from` to `to`.
  double rate(StateIndex to, StateIndex from) const { return q_(to, from); }
  double operator()(StateIndex to, StateIndex from) const { return q_(to, from); }
  /// Total rate of leaving `x`, i.e. -q(x, x).
  double exit_rate(StateIndex x) const { return -q_(x, x); }
  double max_exit_rate() const;

  RateMatrix scaled(double factor) const;

 private:
  explicit RateMatrix(Matrix q) : q_(std::move(q)) {}
  Matrix q_;
};

/// All structural defects of `q`: non-finite entries, negative off-diagonal
/// rates and column sums outside the renormalization band.
std::vector<RateDiagnostic> diagnose_rate_matrix(const Matrix& q);

RateMatrix validate_rate_matrix(const Matrix& q);

/// A ⪯_γ B: B - γA is a rate matrix whose diagonal is at most -γ.
/// Columns flagged in `skip` (absorbed states, whose rates never act) are
/// exempt when the mask is non-empty.
bool gamma_controlled(const RateMatrix& a, const RateMatrix& b, double gamma,
                      const std::vector<bool>& skip = {});

/// A ∼_γ B: gamma_controlled in both directions.
bool gamma_equivalent(const RateMatrix& a, const RateMatrix& b, double gamma,
                      const std::vector<bool>& skip = {});

/// Largest γ in (0, 1] with a ∼_γ b for every b in `bs`, by bisection to 1e-9.
/// Returns 1 for an empty list and 0 when no positive γ works.
double max_gamma(const RateMatrix& a, std::span<const RateMatrix> bs,
                 const std::vector<bool>& skip = {});

/// ‖z‖²_M at state x: Σ_{j≠x} (z_j - z_x)² q(j, x).
double seminorm_sq(const RateMatrix& a, StateIndex x, const Vector& z);

/// States from which `target` can be reached along positive rates.
/// Target states themselves are reported as reaching.
std::vector<bool> reaches_target(const RateMatrix& a, const StateSet& target);

/// Realization of the chain up to absorption in a target set or a horizon.
struct ChainPath {
  std::vector<double> jump_times;
  std::vector<StateIndex> states;  // states.size() == jump_times.size() + 1
  double terminal_time = 0.0;
  bool hit_target = false;

  StateIndex final_state() const { return states.back(); }
};

/// Returns the rate matrix active while the chain sits in `state` at `time`.
/// Only the column of the current state is used.
using Feedback = std::function<const RateMatrix&(StateIndex state, double time)>;

inline constexpr double kNoHorizon = std::numeric_limits<double>::infinity();

/// Per-path seed derived from a run seed and a path index (splitmix64).
std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index);

/// Exact event-driven simulation until the first entry to `target` or
/// `horizon`, whichever comes first.
ChainPath simulate_path(const RateMatrix& a, StateIndex x0, const StateSet& target,
                        double horizon, std::uint64_t seed);

ChainPath simulate_controlled_path(const Feedback& controls, StateIndex x0,
                                   const StateSet& target, double horizon,
                                   std::uint64_t seed);

/// Writes `t,state` rows, one per visited state.
void write_path_csv(std::ostream& os, const ChainPath& path);

}  // namespace stopbsde
