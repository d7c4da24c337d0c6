#pragma once

#include "stopbsde/drivers.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace stopbsde {

/// φ(t, x): terminal value paid when the chain is absorbed in x at time t.
using TerminalFn = std::function<double(double t, StateIndex x)>;

TerminalFn constant_terminal(Vector values);

/// Declared constants of the existence theory: |φ(t, x)| ≤ k (1 + t^beta),
/// driver Lipschitz/growth constant c with growth exponent beta_hat < beta.
struct GrowthConstants {
  double c = 0.0;
  double beta = 1.0;
  double beta_hat = 0.0;
  double beta_tilde = 1.0;
  double k = 1.0;
};

/// BSDE to the first hitting time τ of `target` with terminal φ(τ, X_τ).
class HittingProblem {
 public:
  /// Throws EmptyTarget, StateOutOfRange, UnreachableTarget (naming the
  /// states that cannot reach the target) or InconsistentGrowth.
  HittingProblem(RateMatrix chain, StateSet target, TerminalFn terminal, MarkovianDriver driver,
                 GrowthConstants constants = {}, bool terminal_time_dependent = false);

  const RateMatrix& chain() const noexcept { return chain_; }
  const StateSet& target() const noexcept { return target_; }
  const std::vector<bool>& target_mask() const noexcept { return mask_; }
  const MarkovianDriver& driver() const noexcept { return driver_; }
  const GrowthConstants& constants() const noexcept { return constants_; }
  double terminal(double t, StateIndex x) const { return terminal_(t, x); }
  const TerminalFn& terminal_fn() const noexcept { return terminal_; }
  bool terminal_time_dependent() const noexcept { return terminal_time_dependent_; }
  std::size_t size() const noexcept { return chain_.size(); }

  /// Non-target states in increasing order.
  std::vector<StateIndex> live_states() const;

 private:
  RateMatrix chain_;
  StateSet target_;
  std::vector<bool> mask_;
  TerminalFn terminal_;
  MarkovianDriver driver_;
  GrowthConstants constants_;
  bool terminal_time_dependent_;
};

/// Y_t = u(t, X_t), Z_t = u(t, ·). Homogeneous fields carry one vector.
struct SolutionField {
  enum class Mode { homogeneous, time_grid };

  Mode mode = Mode::homogeneous;
  std::vector<double> times;   // grid times t_0 < ... < t_m (time_grid only)
  std::vector<Vector> values;  // one vector per grid time, or exactly one
  double residual = 0.0;
  int iterations = 0;

  const Vector& u() const { return values.front(); }
  /// Value vector at t = 0 (first grid point) or the homogeneous vector.
  const Vector& at_zero() const { return values.front(); }
  /// Z is the value vector itself.
  const Vector& z(std::size_t k = 0) const { return values.at(k); }
};

struct SolveOptions {
  double tol = 1e-10;
  int max_iter = 100;
  std::optional<Vector> initial;
};

/// Max over live states of |f(x, u_x, u) + (Aᵀu)_x|.
double homogeneous_residual(const HittingProblem& p, const Vector& u);

/// Solves f(x, u_x, u) = -(Aᵀu)_x off the target with u = φ on it, by damped
/// Newton (central finite-difference Jacobian) with a Picard fallback.
SolutionField solve_homogeneous(const HittingProblem& p, const SolveOptions& options = {});

struct GridOptions {
  /// Values at the horizon; defaults to φ(horizon, ·) in every state.
  std::optional<TerminalFn> at_horizon;
};

inline constexpr double kMaxStepRate = 0.1;

/// Integrates du = -(f(t, u) + Âᵀu) dt backward from `horizon` with RK4.
/// Requires (horizon / steps) · max exit rate ≤ 0.1.
SolutionField solve_backward_grid(const HittingProblem& p, double horizon, std::size_t steps,
                                  const GridOptions& options = {});

/// Smallest step count satisfying the RK4 stability guard.
std::size_t min_grid_steps(const RateMatrix& a, double horizon);

struct TruncationDiagnostics {
  std::vector<double> horizons;
  std::vector<Vector> values_at_zero;   // Y^n_0 per starting state
  std::vector<Vector> gaps;             // |Y^n_0 - Y^{n_prev}_0| per state (first entry zero)
  std::vector<double> successive_gaps;  // max over states
  /// Slope of log(gap) against log(n) over the positive gaps.
  double fitted_exponent = 0.0;
};

/// Finite-horizon approximations Y^n with terminal ξ·1{τ ≤ n}.
TruncationDiagnostics truncation_sequence(const HittingProblem& p,
                                          const std::vector<double>& horizons);

struct ComparisonReport {
  bool hypothesis_ok = true;
  std::string hypothesis_violation;
  bool ordered = true;
  double min_slack = 0.0;
  /// States (homogeneous) where the two solutions coincide within tolerance.
  std::vector<StateIndex> equality_states;
  /// Equality at x holds exactly when drivers agree along everything reachable
  /// from x before absorption and terminals agree on reachable targets.
  bool strict_clause_consistent = true;
};

inline constexpr double kComparisonSlack = 1e-9;

ComparisonReport check_comparison(const HittingProblem& p1, const HittingProblem& p2,
                                  const SolutionField& sol1, const SolutionField& sol2,
                                  std::size_t samples = 200, std::uint64_t seed = 7);

struct BoundViolation {
  double t;
  StateIndex x;
  double value;
  double bound;
};

struct GrowthReport {
  bool ok = true;
  double worst_ratio = 0.0;  // max |u| / bound
  std::vector<BoundViolation> violations;
};

/// Checks |u(t)[x]| ≤ (1 + c) K(t) at every grid point.
GrowthReport growth_bound_check(const HittingProblem& p, const SolutionField& sol,
                                const std::function<double(double)>& K);

}  // namespace stopbsde
