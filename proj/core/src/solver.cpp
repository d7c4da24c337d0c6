#include "stopbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <random>
#include <sstream>

namespace stopbsde {

TerminalFn constant_terminal(Vector values) {
  return [values = std::move(values)](double, StateIndex x) {
    return values[static_cast<Eigen::Index>(x)];
  };
}

HittingProblem::HittingProblem(RateMatrix chain, StateSet target, TerminalFn terminal,
                               MarkovianDriver driver, GrowthConstants constants,
                               bool terminal_time_dependent)
    : chain_(std::move(chain)),
      target_(std::move(target)),
      terminal_(std::move(terminal)),
      driver_(std::move(driver)),
      constants_(constants),
      terminal_time_dependent_(terminal_time_dependent) {
  if (target_.empty()) throw Error(ErrorCode::EmptyTarget, "target set is empty");
  mask_ = target_.mask(chain_.size());
  const auto reach = reaches_target(chain_, target_);
  std::ostringstream bad;
  bool any = false;
  for (StateIndex x = 0; x < reach.size(); ++x) {
    if (!reach[x]) {
      bad << (any ? "," : "") << x;
      any = true;
    }
  }
  if (any) {
    throw Error(ErrorCode::UnreachableTarget, "target unreachable from states [" + bad.str() + "]");
  }
  if (!(constants_.beta_hat < constants_.beta)) {
    throw Error(ErrorCode::InconsistentGrowth, "beta_hat must be strictly below beta");
  }
}

std::vector<StateIndex> HittingProblem::live_states() const {
  std::vector<StateIndex> live;
  for (StateIndex x = 0; x < size(); ++x) {
    if (!mask_[x]) live.push_back(x);
  }
  return live;
}

namespace {

double generator_term(const RateMatrix& a, StateIndex x, const Vector& u) {
  return a.matrix().col(static_cast<Eigen::Index>(x)).dot(u);
}

Vector residual_vector(const HittingProblem& p, const std::vector<StateIndex>& live,
                       const Vector& u) {
  Vector r(static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k) {
    const StateIndex x = live[k];
    r[static_cast<Eigen::Index>(k)] =
        p.driver()(x, 0.0, u[static_cast<Eigen::Index>(x)], u) + generator_term(p.chain(), x, u);
  }
  return r;
}

// (Aᵀ) restricted to live rows/columns and live rows/target columns.
struct AbsorbedSystem {
  Matrix live_block;
  Vector boundary;  // (Aᵀ)_{LT} φ_T
};

AbsorbedSystem absorbed_system(const HittingProblem& p, const std::vector<StateIndex>& live,
                               const Vector& phi) {
  const auto m = static_cast<Eigen::Index>(live.size());
  AbsorbedSystem s{Matrix(m, m), Vector::Zero(m)};
  const auto& q = p.chain();
  for (Eigen::Index r = 0; r < m; ++r) {
    const StateIndex x = live[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < m; ++c) s.live_block(r, c) = q(live[static_cast<std::size_t>(c)], x);
    for (StateIndex y : p.target()) s.boundary[r] += q(y, x) * phi[static_cast<Eigen::Index>(y)];
  }
  return s;
}

void scatter(Vector& u, const std::vector<StateIndex>& live, const Vector& values) {
  for (std::size_t k = 0; k < live.size(); ++k) {
    u[static_cast<Eigen::Index>(live[k])] = values[static_cast<Eigen::Index>(k)];
  }
}

Vector gather(const Vector& u, const std::vector<StateIndex>& live) {
  Vector v(static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k) {
    v[static_cast<Eigen::Index>(k)] = u[static_cast<Eigen::Index>(live[k])];
  }
  return v;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace

double homogeneous_residual(const HittingProblem& p, const Vector& u) {
  const auto live = p.live_states();
  if (live.empty()) return 0.0;
  return residual_vector(p, live, u).cwiseAbs().maxCoeff();
}

SolutionField solve_homogeneous(const HittingProblem& p, const SolveOptions& options) {
  if (p.driver().time_dependent() || p.terminal_time_dependent()) {
    throw Error(ErrorCode::DriverTimeDependent,
                "the algebraic reduction needs a time-independent driver and terminal");
  }
  const auto n = static_cast<Eigen::Index>(p.size());
  const auto live = p.live_states();
  Vector phi = Vector::Zero(n);
  for (StateIndex x : p.target()) phi[static_cast<Eigen::Index>(x)] = p.terminal(0.0, x);

  SolutionField sol;
  sol.mode = SolutionField::Mode::homogeneous;
  if (live.empty()) {
    sol.values.push_back(phi);
    return sol;
  }

  const AbsorbedSystem sys = absorbed_system(p, live, phi);
  const Eigen::PartialPivLU<Matrix> base_lu(sys.live_block);
  const auto m = static_cast<Eigen::Index>(live.size());

  Vector u = phi;
  if (options.initial) {
    if (options.initial->size() != n) throw Error(ErrorCode::DimensionMismatch, "initial guess");
    u = *options.initial;
    for (StateIndex x : p.target()) u[static_cast<Eigen::Index>(x)] = phi[static_cast<Eigen::Index>(x)];
  } else {
    const Vector zero = Vector::Zero(n);
    Vector g(m);
    for (Eigen::Index k = 0; k < m; ++k) g[k] = p.driver()(live[static_cast<std::size_t>(k)], 0.0, 0.0, zero);
    scatter(u, live, base_lu.solve(-g - sys.boundary));
  }

  auto picard_step = [&](const Vector& current) {
    Vector f(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const StateIndex x = live[static_cast<std::size_t>(k)];
      f[k] = p.driver()(x, 0.0, current[static_cast<Eigen::Index>(x)], current);
    }
    Vector next = current;
    scatter(next, live, base_lu.solve(-f - sys.boundary));
    return next;
  };

  Vector r = residual_vector(p, live, u);
  double norm = r.norm();
  std::optional<Eigen::PartialPivLU<Matrix>> last_lu;
  // Below tolerance, a few extra steps with the last Jacobian remove the
  // rounding left by its finite differences.
  auto polish = [&] {
    if (!last_lu) return;
    for (int k = 0; k < 3 && norm > 0.0; ++k) {
      Vector trial = u;
      scatter(trial, live, gather(u, live) + last_lu->solve(-r));
      const Vector tr = residual_vector(p, live, trial);
      if (!all_finite(tr) || !(tr.norm() < 0.5 * norm)) return;
      u = std::move(trial);
      r = tr;
      norm = r.norm();
    }
  };
  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (all_finite(r) && r.cwiseAbs().maxCoeff() < options.tol) {
      polish();
      sol.values.push_back(u);
      sol.iterations = iter;
      sol.residual = homogeneous_residual(p, u);
      return sol;
    }
    Matrix jac(m, m);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto xi = static_cast<Eigen::Index>(live[static_cast<std::size_t>(k)]);
      const double h = 1e-6 * std::max(1.0, std::abs(u[xi]));
      Vector up = u;
      Vector um = u;
      up[xi] += h;
      um[xi] -= h;
      jac.col(k) = (residual_vector(p, live, up) - residual_vector(p, live, um)) / (2.0 * h);
    }
    bool accepted = false;
    const Eigen::PartialPivLU<Matrix> lu(jac);
    if (jac.allFinite() && std::abs(lu.determinant()) > 0.0) {
      const Vector step = lu.solve(-r);
      if (step.allFinite()) {
        double alpha = 1.0;
        const Vector live_u = gather(u, live);
        while (alpha > 1e-12) {
          Vector trial = u;
          scatter(trial, live, live_u + alpha * step);
          const Vector tr = residual_vector(p, live, trial);
          const double tn = tr.norm();
          if (std::isfinite(tn) && tn < norm) {
            last_lu = lu;
            u = std::move(trial);
            r = tr;
            norm = tn;
            accepted = true;
            break;
          }
          alpha *= 0.5;
        }
      }
    }
    if (!accepted) {
      Vector trial = picard_step(u);
      const Vector tr = residual_vector(p, live, trial);
      if (!all_finite(tr)) break;
      u = std::move(trial);
      r = tr;
      norm = tr.norm();
    }
  }
  const double res = all_finite(r) ? r.cwiseAbs().maxCoeff() : HUGE_VAL;
  if (res < options.tol) {
    sol.values.push_back(u);
    sol.iterations = options.max_iter;
    sol.residual = res;
    return sol;
  }
  std::ostringstream os;
  os << "residual " << res << " after " << options.max_iter << " iterations";
  throw Error(ErrorCode::NoConvergence, os.str());
}

std::size_t min_grid_steps(const RateMatrix& a, double horizon) {
  const double need = horizon * a.max_exit_rate() / kMaxStepRate;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(need - 1e-9)));
}

SolutionField solve_backward_grid(const HittingProblem& p, double horizon, std::size_t steps,
                                  const GridOptions& options) {
  if (!(horizon > 0.0) || steps == 0) {
    throw Error(ErrorCode::StepTooLarge, "horizon and step count must be positive");
  }
  const double h = horizon / static_cast<double>(steps);
  if (h * p.chain().max_exit_rate() > kMaxStepRate * (1.0 + 1e-9)) {
    std::ostringstream os;
    os << "h * max exit rate = " << h * p.chain().max_exit_rate() << " exceeds " << kMaxStepRate;
    throw Error(ErrorCode::StepTooLarge, os.str());
  }
  const auto n = static_cast<Eigen::Index>(p.size());
  const auto live = p.live_states();

  auto pin = [&](Vector& u, double t) {
    for (StateIndex x : p.target()) u[static_cast<Eigen::Index>(x)] = p.terminal(t, x);
  };
  // Backward-time derivative: du/ds = f(t, u) + Âᵀu with s = horizon - t.
  auto rate = [&](double t, const Vector& u) {
    Vector k = Vector::Zero(n);
    for (StateIndex x : live) {
      const auto xi = static_cast<Eigen::Index>(x);
      k[xi] = p.driver()(x, t, u[xi], u) + generator_term(p.chain(), x, u);
    }
    return k;
  };

  Vector u(n);
  for (Eigen::Index x = 0; x < n; ++x) {
    const auto xs = static_cast<StateIndex>(x);
    u[x] = options.at_horizon ? (*options.at_horizon)(horizon, xs) : p.terminal(horizon, xs);
  }
  pin(u, horizon);

  std::vector<Vector> backward;
  backward.reserve(steps + 1);
  backward.push_back(u);
  for (std::size_t k = steps; k > 0; --k) {
    const double t = h * static_cast<double>(k);
    const double tm = t - 0.5 * h;
    const double tn = h * static_cast<double>(k - 1);
    const Vector k1 = rate(t, u);
    Vector u2 = u + 0.5 * h * k1;
    pin(u2, tm);
    const Vector k2 = rate(tm, u2);
    Vector u3 = u + 0.5 * h * k2;
    pin(u3, tm);
    const Vector k3 = rate(tm, u3);
    Vector u4 = u + h * k3;
    pin(u4, tn);
    const Vector k4 = rate(tn, u4);
    u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    pin(u, tn);
    if (!u.allFinite()) {
      throw Error(ErrorCode::NonFiniteState, "overflow at t = " + std::to_string(tn));
    }
    backward.push_back(u);
  }

  SolutionField sol;
  sol.mode = SolutionField::Mode::time_grid;
  sol.values.assign(backward.rbegin(), backward.rend());
  sol.times.resize(steps + 1);
  for (std::size_t k = 0; k <= steps; ++k) sol.times[k] = h * static_cast<double>(k);
  sol.times.back() = horizon;
  sol.iterations = static_cast<int>(steps);
  return sol;
}

TruncationDiagnostics truncation_sequence(const HittingProblem& p,
                                          const std::vector<double>& horizons) {
  TruncationDiagnostics diag;
  const auto n = static_cast<Eigen::Index>(p.size());
  double previous_n = 0.0;
  for (double horizon : horizons) {
    if (!(horizon > previous_n)) {
      throw Error(ErrorCode::InvalidComponent, "horizons must be positive and increasing");
    }
    previous_n = horizon;
    GridOptions opts;
    // ξ 1{τ ≤ n}: live states that have not been absorbed by time n pay 0.
    opts.at_horizon = [&p](double t, StateIndex x) {
      return p.target_mask()[x] ? p.terminal(t, x) : 0.0;
    };
    // Ten times finer than the stability guard keeps the discretization error
    // well below the gaps being measured.
    const std::size_t steps = 10 * min_grid_steps(p.chain(), horizon);
    const SolutionField sol = solve_backward_grid(p, horizon, steps, opts);
    diag.horizons.push_back(horizon);
    diag.values_at_zero.push_back(sol.at_zero());
    if (diag.values_at_zero.size() == 1) {
      diag.gaps.push_back(Vector::Zero(n));
      diag.successive_gaps.push_back(0.0);
    } else {
      const Vector gap =
          (diag.values_at_zero.back() - diag.values_at_zero[diag.values_at_zero.size() - 2])
              .cwiseAbs();
      diag.gaps.push_back(gap);
      diag.successive_gaps.push_back(gap.maxCoeff());
    }
  }
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (std::size_t k = 1; k < diag.horizons.size(); ++k) {
    const double g = diag.successive_gaps[k];
    if (!(g > 0.0)) continue;
    const double lx = std::log(diag.horizons[k - 1]);
    const double ly = std::log(g);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++count;
  }
  if (count >= 2) {
    const double denom = count * sxx - sx * sx;
    diag.fitted_exponent = denom != 0.0 ? (count * sxy - sx * sy) / denom : 0.0;
  }
  return diag;
}

namespace {

// States reachable from x by moving through live states only.
std::vector<StateIndex> reachable_before_absorption(const HittingProblem& p, StateIndex x) {
  std::vector<bool> seen(p.size(), false);
  std::vector<StateIndex> out;
  std::deque<StateIndex> queue{x};
  seen[x] = true;
  while (!queue.empty()) {
    const StateIndex i = queue.front();
    queue.pop_front();
    out.push_back(i);
    if (p.target_mask()[i]) continue;
    for (StateIndex j = 0; j < p.size(); ++j) {
      if (!seen[j] && j != i && p.chain()(j, i) > 0.0) {
        seen[j] = true;
        queue.push_back(j);
      }
    }
  }
  return out;
}

}  // namespace

ComparisonReport check_comparison(const HittingProblem& p1, const HittingProblem& p2,
                                  const SolutionField& sol1, const SolutionField& sol2,
                                  std::size_t samples, std::uint64_t seed) {
  if (p1.size() != p2.size() || sol1.values.size() != sol2.values.size()) {
    throw Error(ErrorCode::DimensionMismatch, "problems or solutions differ in shape");
  }
  ComparisonReport report;
  const std::size_t n = p1.size();
  const bool timed = p1.driver().time_dependent() || p2.driver().time_dependent();

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> state(0, n - 1);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t k = 0; k < samples && report.hypothesis_ok; ++k) {
    const double scale = k % 2 == 0 ? 1.0 : 10.0;
    const StateIndex x = state(rng);
    const double t = timed ? 5.0 * (1.0 + unit(rng)) : 0.0;
    const double y = scale * unit(rng);
    Vector z(static_cast<Eigen::Index>(n));
    for (auto& v : z) v = scale * unit(rng);
    const double f1 = p1.driver()(x, t, y, z);
    const double f2 = p2.driver()(x, t, y, z);
    if (f1 < f2 - 1e-12 * (1.0 + std::abs(f2))) {
      report.hypothesis_ok = false;
      std::ostringstream os;
      os << "f1 < f2 at state " << x << ", t=" << t << ", y=" << y << ": " << f1 << " < " << f2;
      report.hypothesis_violation = os.str();
    }
  }
  for (StateIndex x : p1.target()) {
    if (report.hypothesis_ok && p1.terminal(0.0, x) < p2.terminal(0.0, x)) {
      report.hypothesis_ok = false;
      report.hypothesis_violation = "terminal1 < terminal2 at target state " + std::to_string(x);
    }
  }

  report.min_slack = HUGE_VAL;
  for (std::size_t k = 0; k < sol1.values.size(); ++k) {
    report.min_slack = std::min(report.min_slack, (sol1.values[k] - sol2.values[k]).minCoeff());
  }
  report.ordered = report.min_slack >= -kComparisonSlack;

  const Vector& u1 = sol1.at_zero();
  const Vector& u2 = sol2.at_zero();
  std::vector<bool> equal(n);
  for (StateIndex x = 0; x < n; ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    equal[x] = std::abs(u1[xi] - u2[xi]) <= kComparisonSlack;
    if (equal[x]) report.equality_states.push_back(x);
  }
  if (sol1.mode == SolutionField::Mode::homogeneous) {
    for (StateIndex x = 0; x < n; ++x) {
      bool agree = true;
      for (StateIndex y : reachable_before_absorption(p1, x)) {
        const auto yi = static_cast<Eigen::Index>(y);
        if (p1.target_mask()[y]) {
          agree = agree && std::abs(p1.terminal(0.0, y) - p2.terminal(0.0, y)) <= kComparisonSlack;
        } else {
          const double f1 = p1.driver()(y, 0.0, u1[yi], u1);
          const double f2 = p2.driver()(y, 0.0, u2[yi], u2);
          agree = agree && std::abs(f1 - f2) <= 1e-8;
        }
      }
      if (agree != equal[x]) report.strict_clause_consistent = false;
    }
  }
  return report;
}

GrowthReport growth_bound_check(const HittingProblem& p, const SolutionField& sol,
                                const std::function<double(double)>& K) {
  GrowthReport report;
  const double factor = 1.0 + p.constants().c;
  for (std::size_t k = 0; k < sol.values.size(); ++k) {
    const double t = sol.mode == SolutionField::Mode::time_grid ? sol.times[k] : 0.0;
    const double bound = factor * K(t);
    for (StateIndex x = 0; x < p.size(); ++x) {
      const double v = sol.values[k][static_cast<Eigen::Index>(x)];
      report.worst_ratio = std::max(report.worst_ratio, std::abs(v) / bound);
      if (std::abs(v) > bound) {
        report.ok = false;
        report.violations.push_back({t, x, v, bound});
      }
    }
  }
  return report;
}

}  // namespace stopbsde
