#pragma once

#include "stopbsde/chain.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace stopbsde {

/// f̃(x, t, y, z): the driver evaluated in state x.
using DriverFn = std::function<double(StateIndex x, double t, double y, const Vector& z)>;

struct DriverTraits {
  std::string kind = "custom";
  bool time_dependent = false;
  /// Declared: (f(y) - f(y')) / (y - y') ∈ [-c, 0].
  bool monotone = true;
  double c = 0.0;
  /// Declared growth |f(x, t, 0, 0)| ≤ c (1 + t^beta_hat).
  double beta_hat = 0.0;
};

class MarkovianDriver {
 public:
  MarkovianDriver() = default;
  MarkovianDriver(DriverFn fn, DriverTraits traits);

  double operator()(StateIndex x, double t, double y, const Vector& z) const {
    return fn_(x, t, y, z);
  }
  const DriverTraits& traits() const noexcept { return traits_; }
  bool time_dependent() const noexcept { return traits_.time_dependent; }

 private:
  DriverFn fn_;
  DriverTraits traits_;
};

MarkovianDriver zero_driver();

/// f(x, y, z) = g_x - r_x y + w_xᵀ z with coefficient vectors w_x summing to zero.
/// Column x of `coefficients` is w_x.
struct AffineDriverSpec {
  Matrix coefficients;
  Vector offset;    // g
  Vector discount;  // r ≥ 0
};

MarkovianDriver affine_driver(const AffineDriverSpec& spec);

/// Affine spec with w_x = (B - A) e_x, i.e. the change of measure to B.
AffineDriverSpec measure_change_spec(const RateMatrix& a, const RateMatrix& b,
                                     Vector offset = {}, Vector discount = {});

/// Running cost L(t, y, x, u).
using CostFn = std::function<double(double t, double y, StateIndex x, std::size_t u)>;

/// Finite control family {A^u} with running cost, all A^u ∼_γ A.
class ControlSet {
 public:
  /// Throws EmptyControlSet, DimensionMismatch, or NotGammaRelated when no
  /// γ > 0 relates every A^u to `reference`. Columns of `absorbed` states are
  /// left out of the γ relation.
  ControlSet(RateMatrix reference, std::vector<std::string> labels,
             std::vector<RateMatrix> matrices, CostFn cost, DriverTraits cost_traits = {},
             StateSet absorbed = {});

  /// L(t, y, x, u) = running(u, x) - discount(u, x) y.
  static ControlSet from_tables(RateMatrix reference, std::vector<std::string> labels,
                                std::vector<RateMatrix> matrices, Matrix running,
                                std::optional<Matrix> discount = std::nullopt,
                                StateSet absorbed = {});

  std::size_t size() const noexcept { return matrices_.size(); }
  std::size_t states() const noexcept { return reference_.size(); }
  const RateMatrix& reference() const noexcept { return reference_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<RateMatrix>& matrices() const noexcept { return matrices_; }
  const RateMatrix& matrix(std::size_t u) const { return matrices_.at(u); }
  double cost(double t, double y, StateIndex x, std::size_t u) const { return cost_(t, y, x, u); }
  const DriverTraits& cost_traits() const noexcept { return cost_traits_; }
  double gamma() const noexcept { return gamma_; }

 private:
  RateMatrix reference_;
  std::vector<std::string> labels_;
  std::vector<RateMatrix> matrices_;
  CostFn cost_;
  DriverTraits cost_traits_;
  double gamma_ = 0.0;
};

struct HamiltonianValue {
  double value;
  std::size_t control;  // lowest index among ties
};

/// min_u { L(t, y, x, u) + zᵀ (A^u - A) e_x }.
HamiltonianValue hamiltonian_argmin(const ControlSet& cs, const RateMatrix& a, StateIndex x,
                                    double t, double y, const Vector& z);
/// max_u { L(t, y, x, u) + zᵀ (A^u - A) e_x }.
HamiltonianValue hamiltonian_argmax(const ControlSet& cs, const RateMatrix& a, StateIndex x,
                                    double t, double y, const Vector& z);

MarkovianDriver hamiltonian_inf(const ControlSet& cs, const RateMatrix& a);
MarkovianDriver hamiltonian_sup(const ControlSet& cs, const RateMatrix& a);

/// f(x, t, clamp(y), clamp(z - z_x 1)) with clamp to [-n, n].
MarkovianDriver truncate_driver(const MarkovianDriver& d, double n);

/// Pointwise sum of drivers; traits combine conservatively.
MarkovianDriver sum_drivers(const MarkovianDriver& a, const MarkovianDriver& b);

struct BalanceWitness {
  StateIndex x;
  double t;
  double y;
  Vector z;
  Vector z_prime;
  Vector lambda;
  double residual;
};

struct BalanceCertificate {
  double gamma = 0.0;
  bool passed = false;
  std::vector<BalanceWitness> witness_samples;
  /// First sample with no admissible λ, when the verdict is a failure.
  std::optional<BalanceWitness> counterexample;
  std::string failure;
  double max_residual = 0.0;
};

/// Searches, for one increment f(z) - f(z') at state x, the diagonal scaling
/// λ = D A e_x with D ∈ [γ, 1/γ] that represents it. Empty when none exists.
std::optional<Vector> balance_witness(const RateMatrix& a, StateIndex x, const Vector& dz,
                                      double df, double gamma);

/// Sampling certificate for the γ-balance property. A pass is evidence; a
/// failure carries a concrete counterexample.
BalanceCertificate check_balanced(const MarkovianDriver& d, const RateMatrix& a, double gamma,
                                  std::size_t samples, std::uint64_t seed);

/// Lipschitz constant of d in z under ‖·‖_M. Certifies γ-balance on 1000
/// samples first and throws NotCertified on failure.
double lipschitz_bound(const MarkovianDriver& d, const RateMatrix& a, double gamma);

/// max |f(z) - f(z')| / ‖z - z'‖_M over random samples.
double empirical_lipschitz_ratio(const MarkovianDriver& d, const RateMatrix& a,
                                 std::size_t samples, std::uint64_t seed);

}  // namespace stopbsde
