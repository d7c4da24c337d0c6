#include "stopbsde/drivers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace stopbsde {

MarkovianDriver::MarkovianDriver(DriverFn fn, DriverTraits traits)
    : fn_(std::move(fn)), traits_(std::move(traits)) {}

MarkovianDriver zero_driver() {
  DriverTraits traits;
  traits.kind = "zero";
  return MarkovianDriver([](StateIndex, double, double, const Vector&) { return 0.0; }, traits);
}

MarkovianDriver affine_driver(const AffineDriverSpec& spec) {
  const Eigen::Index n = spec.coefficients.rows();
  if (spec.coefficients.cols() != n) {
    throw Error(ErrorCode::NotSquare, "affine coefficient table must be n x n");
  }
  Vector g = spec.offset.size() == 0 ? Vector::Zero(n) : spec.offset;
  Vector r = spec.discount.size() == 0 ? Vector::Zero(n) : spec.discount;
  if (g.size() != n || r.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "affine offset/discount length must equal n");
  }
  for (Eigen::Index x = 0; x < n; ++x) {
    const double s = spec.coefficients.col(x).sum();
    if (std::abs(s) > 1e-9 * (1.0 + spec.coefficients.col(x).cwiseAbs().sum())) {
      throw Error(ErrorCode::ColumnSumNonzero,
                  "z-coefficients of state " + std::to_string(x) + " sum to " + std::to_string(s) +
                      "; the driver would not be invariant under constant shifts of z");
    }
  }
  DriverTraits traits;
  traits.kind = "affine";
  traits.monotone = (r.array() >= 0.0).all();
  traits.c = r.cwiseAbs().maxCoeff();
  traits.c = std::max(traits.c, g.cwiseAbs().maxCoeff());
  Matrix w = spec.coefficients;
  return MarkovianDriver(
      [w = std::move(w), g = std::move(g), r = std::move(r)](StateIndex x, double, double y,
                                                             const Vector& z) {
        const auto i = static_cast<Eigen::Index>(x);
        return g[i] - r[i] * y + w.col(i).dot(z);
      },
      traits);
}

AffineDriverSpec measure_change_spec(const RateMatrix& a, const RateMatrix& b, Vector offset,
                                     Vector discount) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "A and B differ in size");
  return AffineDriverSpec{b.matrix() - a.matrix(), std::move(offset), std::move(discount)};
}

ControlSet::ControlSet(RateMatrix reference, std::vector<std::string> labels,
                       std::vector<RateMatrix> matrices, CostFn cost, DriverTraits cost_traits,
                       StateSet absorbed)
    : reference_(std::move(reference)),
      labels_(std::move(labels)),
      matrices_(std::move(matrices)),
      cost_(std::move(cost)),
      cost_traits_(std::move(cost_traits)) {
  if (matrices_.empty()) throw Error(ErrorCode::EmptyControlSet, "no controls given");
  if (labels_.empty()) {
    for (std::size_t u = 0; u < matrices_.size(); ++u) labels_.push_back("u" + std::to_string(u));
  }
  if (labels_.size() != matrices_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per control matrix required");
  }
  for (const auto& m : matrices_) {
    if (m.size() != reference_.size()) {
      throw Error(ErrorCode::DimensionMismatch, "control matrix size differs from reference");
    }
  }
  const std::vector<bool> skip =
      absorbed.empty() ? std::vector<bool>{} : absorbed.mask(reference_.size());
  gamma_ = max_gamma(reference_, matrices_, skip);
  if (!(gamma_ > 0.0)) {
    throw Error(ErrorCode::NotGammaRelated,
                "no gamma > 0 with A^u ~_gamma A for every control");
  }
}

ControlSet ControlSet::from_tables(RateMatrix reference, std::vector<std::string> labels,
                                   std::vector<RateMatrix> matrices, Matrix running,
                                   std::optional<Matrix> discount, StateSet absorbed) {
  if (matrices.empty()) throw Error(ErrorCode::EmptyControlSet, "no controls given");
  const auto k = static_cast<Eigen::Index>(matrices.size());
  const auto n = static_cast<Eigen::Index>(reference.size());
  if (running.rows() != k || running.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "running cost table must be |U| x n");
  }
  Matrix disc = discount.value_or(Matrix::Zero(k, n));
  if (disc.rows() != k || disc.cols() != n) {
    throw Error(ErrorCode::DimensionMismatch, "discount table must be |U| x n");
  }
  DriverTraits traits;
  traits.kind = "table";
  traits.monotone = (disc.array() >= 0.0).all();
  traits.c = std::max(disc.cwiseAbs().maxCoeff(), running.cwiseAbs().maxCoeff());
  CostFn cost = [running = std::move(running), disc = std::move(disc)](double, double y,
                                                                       StateIndex x,
                                                                       std::size_t u) {
    const auto ui = static_cast<Eigen::Index>(u);
    const auto xi = static_cast<Eigen::Index>(x);
    return running(ui, xi) - disc(ui, xi) * y;
  };
  return ControlSet(std::move(reference), std::move(labels), std::move(matrices),
                    std::move(cost), traits, std::move(absorbed));
}

namespace {

double controlled_term(const ControlSet& cs, const RateMatrix& a, std::size_t u, StateIndex x,
                       double t, double y, const Vector& z) {
  const auto xi = static_cast<Eigen::Index>(x);
  const double drift = (cs.matrix(u).matrix().col(xi) - a.matrix().col(xi)).dot(z);
  return cs.cost(t, y, x, u) + drift;
}

template <typename Better>
HamiltonianValue extremum(const ControlSet& cs, const RateMatrix& a, StateIndex x, double t,
                          double y, const Vector& z, Better better) {
  if (cs.states() != a.size()) throw Error(ErrorCode::DimensionMismatch, "control set vs A");
  HamiltonianValue best{controlled_term(cs, a, 0, x, t, y, z), 0};
  for (std::size_t u = 1; u < cs.size(); ++u) {
    const double v = controlled_term(cs, a, u, x, t, y, z);
    if (better(v, best.value)) best = {v, u};
  }
  return best;
}

}  // namespace

HamiltonianValue hamiltonian_argmin(const ControlSet& cs, const RateMatrix& a, StateIndex x,
                                    double t, double y, const Vector& z) {
  return extremum(cs, a, x, t, y, z, [](double v, double best) { return v < best; });
}

HamiltonianValue hamiltonian_argmax(const ControlSet& cs, const RateMatrix& a, StateIndex x,
                                    double t, double y, const Vector& z) {
  return extremum(cs, a, x, t, y, z, [](double v, double best) { return v > best; });
}

MarkovianDriver hamiltonian_inf(const ControlSet& cs, const RateMatrix& a) {
  if (cs.size() == 0) throw Error(ErrorCode::EmptyControlSet, "no controls");
  DriverTraits traits = cs.cost_traits();
  traits.kind = "hamiltonian_inf";
  return MarkovianDriver(
      [cs, a](StateIndex x, double t, double y, const Vector& z) {
        return hamiltonian_argmin(cs, a, x, t, y, z).value;
      },
      traits);
}

MarkovianDriver hamiltonian_sup(const ControlSet& cs, const RateMatrix& a) {
  if (cs.size() == 0) throw Error(ErrorCode::EmptyControlSet, "no controls");
  DriverTraits traits = cs.cost_traits();
  traits.kind = "hamiltonian_sup";
  return MarkovianDriver(
      [cs, a](StateIndex x, double t, double y, const Vector& z) {
        return hamiltonian_argmax(cs, a, x, t, y, z).value;
      },
      traits);
}

MarkovianDriver truncate_driver(const MarkovianDriver& d, double n) {
  if (!(n > 0.0)) throw Error(ErrorCode::InvalidComponent, "truncation level must be positive");
  DriverTraits traits = d.traits();
  traits.kind = "truncated(" + traits.kind + ")";
  return MarkovianDriver(
      [d, n](StateIndex x, double t, double y, const Vector& z) {
        const double zx = z[static_cast<Eigen::Index>(x)];
        Vector centred = (z.array() - zx).cwiseMax(-n).cwiseMin(n).matrix();
        return d(x, t, std::clamp(y, -n, n), centred);
      },
      traits);
}

MarkovianDriver sum_drivers(const MarkovianDriver& a, const MarkovianDriver& b) {
  DriverTraits traits;
  traits.kind = a.traits().kind + "+" + b.traits().kind;
  traits.time_dependent = a.traits().time_dependent || b.traits().time_dependent;
  traits.monotone = a.traits().monotone && b.traits().monotone;
  traits.c = a.traits().c + b.traits().c;
  traits.beta_hat = std::max(a.traits().beta_hat, b.traits().beta_hat);
  return MarkovianDriver(
      [a, b](StateIndex x, double t, double y, const Vector& z) {
        return a(x, t, y, z) + b(x, t, y, z);
      },
      traits);
}

std::optional<Vector> balance_witness(const RateMatrix& a, StateIndex x, const Vector& dz,
                                      double df, double gamma) {
  const std::size_t n = a.size();
  const auto xi = static_cast<Eigen::Index>(x);
  const double k_lo = gamma - 1.0;
  const double k_hi = 1.0 / gamma - 1.0;
  // df = Σ_{j≠x} c_j κ_j with κ_j = d_j - 1 ∈ [γ - 1, 1/γ - 1].
  Vector c = Vector::Zero(static_cast<Eigen::Index>(n));
  Vector kappa_min = Vector::Zero(c.size());
  Vector kappa_max = Vector::Zero(c.size());
  double lo = 0.0;
  double hi = 0.0;
  double scale = std::abs(df);
  for (std::size_t j = 0; j < n; ++j) {
    const auto ji = static_cast<Eigen::Index>(j);
    if (j == x || !(a(j, x) > 0.0)) continue;
    c[ji] = (dz[ji] - dz[xi]) * a(j, x);
    kappa_min[ji] = c[ji] >= 0.0 ? k_lo : k_hi;
    kappa_max[ji] = c[ji] >= 0.0 ? k_hi : k_lo;
    lo += c[ji] * kappa_min[ji];
    hi += c[ji] * kappa_max[ji];
    scale += std::abs(c[ji]) * k_hi;
  }
  const double tol = 1e-9 * (1.0 + scale);
  if (df < lo - tol || df > hi + tol) return std::nullopt;

  Vector kappa;
  const double cc = c.squaredNorm();
  if (cc > 0.0) {
    kappa = c * (df / cc);
    const bool inside = ((kappa.array() >= k_lo) && (kappa.array() <= k_hi)).all();
    if (!inside) {
      const double theta = hi > lo ? std::clamp((df - lo) / (hi - lo), 0.0, 1.0) : 0.0;
      kappa = kappa_min + theta * (kappa_max - kappa_min);
    }
  } else {
    kappa = Vector::Zero(c.size());
  }
  Vector lambda = Vector::Zero(c.size());
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == x) continue;
    const auto ji = static_cast<Eigen::Index>(j);
    lambda[ji] = (1.0 + kappa[ji]) * a(j, x);
    total += lambda[ji];
  }
  lambda[xi] = -total;
  return lambda;
}

namespace {

struct SamplePoint {
  StateIndex x;
  double t;
  double y;
  Vector z;
  Vector z_prime;
};

class PointSampler {
 public:
  PointSampler(std::size_t n, bool time_dependent, std::uint64_t seed)
      : n_(n), time_dependent_(time_dependent), rng_(seed) {}

  SamplePoint next(std::size_t k) {
    std::uniform_int_distribution<std::size_t> state(0, n_ - 1);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    static constexpr double kScales[] = {0.1, 1.0, 10.0};
    static constexpr double kGaps[] = {1e-3, 0.1, 1.0, 10.0};
    const double scale = kScales[k % 3];
    const double gap = kGaps[(k / 3) % 4];
    SamplePoint p;
    p.x = state(rng_);
    p.t = time_dependent_ ? 5.0 * (1.0 + unit(rng_)) : 0.0;
    p.y = scale * unit(rng_);
    p.z = Vector(static_cast<Eigen::Index>(n_));
    for (auto& v : p.z) v = scale * unit(rng_);
    p.z_prime = p.z;
    if (k % 4 == 3) {
      p.z_prime.array() += gap * unit(rng_);
    } else {
      for (auto& v : p.z_prime) v += gap * unit(rng_);
    }
    return p;
  }

 private:
  std::size_t n_;
  bool time_dependent_;
  std::mt19937_64 rng_;
};

}  // namespace

BalanceCertificate check_balanced(const MarkovianDriver& d, const RateMatrix& a, double gamma,
                                  std::size_t samples, std::uint64_t seed) {
  BalanceCertificate cert;
  cert.gamma = gamma;
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    cert.failure = "gamma must lie in (0, 1]";
    return cert;
  }
  PointSampler sampler(a.size(), d.time_dependent(), seed);
  cert.passed = true;
  for (std::size_t k = 0; k < samples; ++k) {
    SamplePoint p = sampler.next(k);
    const double df = d(p.x, p.t, p.y, p.z) - d(p.x, p.t, p.y, p.z_prime);
    const Vector dz = p.z - p.z_prime;
    BalanceWitness w{p.x, p.t, p.y, p.z, p.z_prime, Vector(), 0.0};
    auto lambda = balance_witness(a, p.x, dz, df, gamma);
    if (!lambda) {
      cert.passed = false;
      cert.failure = "no admissible lambda at state " + std::to_string(p.x) +
                     " for increment " + std::to_string(df);
      cert.counterexample = std::move(w);
      return cert;
    }
    const auto xi = static_cast<Eigen::Index>(p.x);
    w.residual = std::abs(df - dz.dot(*lambda - a.matrix().col(xi)));
    bool ratios_ok = true;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      const double base = a(j, p.x);
      const double ratio = base == 0.0 ? ((*lambda)[ji] == 0.0 ? 1.0 : HUGE_VAL)
                                       : (*lambda)[ji] / base;
      if (ratio < gamma - 1e-9 || ratio > 1.0 / gamma + 1e-9) ratios_ok = false;
    }
    w.lambda = std::move(*lambda);
    cert.max_residual = std::max(cert.max_residual, w.residual);
    if (w.residual >= 1e-9 * (1.0 + std::abs(df)) || !ratios_ok) {
      cert.passed = false;
      cert.failure = ratios_ok ? "witness residual too large" : "witness ratio out of bounds";
      cert.counterexample = std::move(w);
      return cert;
    }
    cert.witness_samples.push_back(std::move(w));
  }
  return cert;
}

double lipschitz_bound(const MarkovianDriver& d, const RateMatrix& a, double gamma) {
  const auto cert = check_balanced(d, a, gamma, 1000, 0x5EEDULL);
  if (!cert.passed) throw Error(ErrorCode::NotCertified, cert.failure);
  // (Δf)² ≤ |q_xx| ‖(D - I)Δz‖²_M and |d_j - 1| ≤ max(1 - γ, 1/γ - 1).
  const double kappa = std::max(std::sqrt(1.0 / gamma), 1.0 / gamma - 1.0);
  return std::sqrt(a.max_exit_rate()) * kappa;
}

double empirical_lipschitz_ratio(const MarkovianDriver& d, const RateMatrix& a,
                                 std::size_t samples, std::uint64_t seed) {
  PointSampler sampler(a.size(), d.time_dependent(), seed);
  double best = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    SamplePoint p = sampler.next(k);
    const double norm = std::sqrt(seminorm_sq(a, p.x, p.z - p.z_prime));
    const double df = d(p.x, p.t, p.y, p.z) - d(p.x, p.t, p.y, p.z_prime);
    if (norm > 1e-12) best = std::max(best, std::abs(df) / norm);
  }
  return best;
}

}  // namespace stopbsde
