#pragma once

#include "stopbsde/chain.hpp"

#include <vector>

namespace stopbsde {

struct MomentReport {
  double beta = 0.0;
  double gamma = 1.0;
  /// h[x] = E[e^{βτ} | X_0 = x]; meaningful only when `finite`.
  Vector values;
  bool finite = false;
  bool worst_case = false;
  /// Maximizing column per state (worst case only); targets hold the A column.
  Matrix policy;
};

/// m with (Aᵀm)_x = -1 off the target and m = 0 on it.
Vector expected_hitting_times(const RateMatrix& a, const StateSet& target);

/// Solves β h_x + Σ_j q(j, x) (h_j - h_x) = 0 off the target, h = 1 on it.
/// Reports infinite when β is at or beyond the convergence abscissa.
MomentReport exp_moment(const RateMatrix& a, const StateSet& target, double beta);

/// Vertices of the column box {b : γ q(j,x) ≤ b_j ≤ q(j,x)/γ, j ≠ x} as full
/// columns (diagonal entry = -Σ b_j).
std::vector<Vector> column_box_vertices(const RateMatrix& a, StateIndex x, double gamma);

/// Vertex counts above this use the closed-form per-column maximizer.
inline constexpr std::size_t kVertexEnumerationLimit = 4096;

/// sup over compensators with jump-rate ratios in [γ, 1/γ] of E[e^{βτ}], by
/// policy iteration over the column-box vertices.
MomentReport worst_case_exp_moment(const RateMatrix& a, double gamma, const StateSet& target,
                                   double beta);

/// sup over the same family of E[τ | X_0 = x].
Vector worst_case_expected_hitting_times(const RateMatrix& a, double gamma,
                                         const StateSet& target);

/// Largest β (to bisection precision) with a finite worst-case exponential
/// moment. Throws NoFiniteExponent when none exists.
double convergence_abscissa(const RateMatrix& a, double gamma, const StateSet& target);

/// K(t) = k (1 + t)^{1+β} bounding E^Q[(1 + τ)^{1+β} | F_t] for every Q in the
/// family, and K̃(t) = k_tilde (1 + t)^{(1+β)(1+β̃)} bounding E^Q[K(τ)^{1+β̃} | F_t].
///
/// With p = 1 + β and an exponent β' with finite worst-case moment h,
///   (1 + s)^p ≤ C_p e^{β' s},   C_p = sup_s (1 + s)^p e^{-β' s}
///            = (p/β')^p e^{β' - p} if p > β', else 1,
/// so E^Q[(1 + (τ - t)^+)^p | F_t] ≤ C_p sup_x h(x) and
/// (1 + τ)^p ≤ (1 + t)^p (1 + (τ - t)^+)^p gives k = C_p sup_x h(x).
/// When a terminal growth |φ(t, x)| ≤ k_φ (1 + t^{β_φ}) with β_φ ≤ 1 + β is
/// declared, k is scaled by max(1, 2 k_φ) so that K also bounds E^Q[|ξ| | F_t].
struct ConditionK {
  double k = 1.0;
  double beta = 0.0;
  double beta_tilde = 0.0;
  double k_tilde = 1.0;
  double beta_prime = 0.0;  // exponent used for the exponential moment
  double h_sup = 1.0;       // sup_x of the worst-case exponential moment
  double terminal_scale = 1.0;

  double K(double t) const;
  double K_tilde(double t) const;
};

struct TerminalGrowth {
  double k_phi = 0.0;
  double beta_phi = 0.0;
};

ConditionK condition_K(const RateMatrix& a, double gamma, const StateSet& target, double beta,
                       double beta_tilde = -1.0, TerminalGrowth terminal = {});

/// sup_{s ≥ 0} (1 + s)^p e^{-rate s}.
double polynomial_exponential_constant(double p, double rate);

}  // namespace stopbsde
