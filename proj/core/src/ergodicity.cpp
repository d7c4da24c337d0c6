#include "stopbsde/ergodicity.hpp"

#include <algorithm>
#include <cmath>

namespace stopbsde {

namespace {

std::vector<StateIndex> live_states(std::size_t n, const StateSet& target) {
  const auto mask = target.mask(n);
  std::vector<StateIndex> live;
  for (StateIndex x = 0; x < n; ++x) {
    if (!mask[x]) live.push_back(x);
  }
  return live;
}

void require_reachable(const RateMatrix& a, const StateSet& target) {
  if (target.empty()) throw Error(ErrorCode::EmptyTarget, "target set is empty");
  const auto reach = reaches_target(a, target);
  for (StateIndex x = 0; x < reach.size(); ++x) {
    if (!reach[x]) {
      throw Error(ErrorCode::SingularSystem,
                  "target unreachable from state " + std::to_string(x));
    }
  }
}

// Value of a fixed column policy `b` (full matrix, column convention):
//   β h_x + running + Σ_j b(j, x)(h_j - h_x) = 0 off target, h = boundary on target.
struct PolicyValue {
  Vector h;
  bool finite = false;
};

PolicyValue evaluate_policy(const Matrix& b, const std::vector<StateIndex>& live,
                            const StateSet& target, double beta, double running,
                            double boundary, bool check_abscissa) {
  const auto n = b.rows();
  const auto m = static_cast<Eigen::Index>(live.size());
  PolicyValue out;
  out.h = Vector::Constant(n, boundary);
  if (m == 0) {
    out.finite = true;
    return out;
  }
  Matrix block(m, m);
  Vector rhs = Vector::Constant(m, -running);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto x = static_cast<Eigen::Index>(live[static_cast<std::size_t>(r)]);
    for (Eigen::Index c = 0; c < m; ++c) {
      block(r, c) = b(static_cast<Eigen::Index>(live[static_cast<std::size_t>(c)]), x);
    }
    for (StateIndex y : target) rhs[r] -= b(static_cast<Eigen::Index>(y), x) * boundary;
  }
  if (check_abscissa) {
    // Finite iff β lies strictly below the smallest real part of the spectrum
    // of the killed generator -(Bᵀ)_LL.
    const Eigen::EigenSolver<Matrix> es(-block, false);
    double lambda1 = HUGE_VAL;
    for (Eigen::Index k = 0; k < m; ++k) lambda1 = std::min(lambda1, es.eigenvalues()[k].real());
    if (!(beta < lambda1 - 1e-12 * std::max(1.0, std::abs(lambda1)))) return out;
  }
  block.diagonal().array() += beta;
  const Eigen::FullPivLU<Matrix> lu(block);
  if (!lu.isInvertible()) return out;
  const Vector hl = lu.solve(rhs);
  if (!hl.allFinite()) return out;
  if (check_abscissa && (hl.array() <= 0.0).any()) return out;
  for (Eigen::Index r = 0; r < m; ++r) out.h[static_cast<Eigen::Index>(live[static_cast<std::size_t>(r)])] = hl[r];
  out.finite = true;
  return out;
}

// Per-column maximizer of Σ_j b_j (h_j - h_x) over the ratio box.
Vector best_column_closed_form(const RateMatrix& a, StateIndex x, double gamma, const Vector& h) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const auto xi = static_cast<Eigen::Index>(x);
  Vector col = Vector::Zero(n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == xi) continue;
    const double base = a(static_cast<StateIndex>(j), x);
    col[j] = h[j] > h[xi] ? base / gamma : gamma * base;
    total += col[j];
  }
  col[xi] = -total;
  return col;
}

double column_objective(const Vector& col, StateIndex x, const Vector& h) {
  const auto xi = static_cast<Eigen::Index>(x);
  return col.dot(h) - col.sum() * h[xi];
}

MomentReport worst_case_policy_iteration(const RateMatrix& a, double gamma,
                                         const StateSet& target, double beta, double running,
                                         double boundary, bool check_abscissa) {
  require_reachable(a, target);
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::InvalidComponent, "gamma must lie in (0, 1]");
  }
  const auto live = live_states(a.size(), target);
  MomentReport report;
  report.beta = beta;
  report.gamma = gamma;
  report.worst_case = true;

  std::vector<std::vector<Vector>> vertices(a.size());
  for (StateIndex x : live) {
    std::size_t support = 0;
    for (StateIndex j = 0; j < a.size(); ++j) support += (j != x && a(j, x) > 0.0);
    if (support < 63 && (std::size_t{1} << support) <= kVertexEnumerationLimit) {
      vertices[x] = column_box_vertices(a, x, gamma);
    }
  }

  Matrix policy = a.matrix();
  PolicyValue value = evaluate_policy(policy, live, target, beta, running, boundary, check_abscissa);
  report.policy = policy;
  if (!value.finite) {
    report.values = value.h;
    return report;
  }
  for (int iter = 0; iter < 10000; ++iter) {
    bool changed = false;
    for (StateIndex x : live) {
      const auto xi = static_cast<Eigen::Index>(x);
      const Vector current = policy.col(xi);
      const double current_obj = column_objective(current, x, value.h);
      Vector best = current;
      double best_obj = current_obj;
      if (vertices[x].empty()) {
        Vector cand = best_column_closed_form(a, x, gamma, value.h);
        const double obj = column_objective(cand, x, value.h);
        if (obj > best_obj) {
          best = std::move(cand);
          best_obj = obj;
        }
      } else {
        for (const Vector& cand : vertices[x]) {
          const double obj = column_objective(cand, x, value.h);
          if (obj > best_obj) {
            best = cand;
            best_obj = obj;
          }
        }
      }
      if (best_obj > current_obj + 1e-12 * (1.0 + value.h.cwiseAbs().maxCoeff())) {
        policy.col(xi) = best;
        changed = true;
      }
    }
    if (!changed) break;
    value = evaluate_policy(policy, live, target, beta, running, boundary, check_abscissa);
    if (!value.finite) break;
  }
  report.values = value.h;
  report.finite = value.finite;
  report.policy = policy;
  return report;
}

}  // namespace

Vector expected_hitting_times(const RateMatrix& a, const StateSet& target) {
  require_reachable(a, target);
  const auto live = live_states(a.size(), target);
  const PolicyValue v = evaluate_policy(a.matrix(), live, target, 0.0, 1.0, 0.0, false);
  if (!v.finite) throw Error(ErrorCode::SingularSystem, "hitting-time system is singular");
  return v.h;
}

MomentReport exp_moment(const RateMatrix& a, const StateSet& target, double beta) {
  require_reachable(a, target);
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidComponent, "beta must be positive");
  const auto live = live_states(a.size(), target);
  const PolicyValue v = evaluate_policy(a.matrix(), live, target, beta, 0.0, 1.0, true);
  MomentReport report;
  report.beta = beta;
  report.gamma = 1.0;
  report.values = v.h;
  report.finite = v.finite;
  report.policy = a.matrix();
  return report;
}

std::vector<Vector> column_box_vertices(const RateMatrix& a, StateIndex x, double gamma) {
  const auto n = static_cast<Eigen::Index>(a.size());
  const auto xi = static_cast<Eigen::Index>(x);
  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j != xi && a(static_cast<StateIndex>(j), x) > 0.0) support.push_back(j);
  }
  std::vector<Vector> out;
  const std::size_t count = std::size_t{1} << support.size();
  out.reserve(count);
  for (std::size_t mask = 0; mask < count; ++mask) {
    Vector col = Vector::Zero(n);
    double total = 0.0;
    for (std::size_t k = 0; k < support.size(); ++k) {
      const double base = a(static_cast<StateIndex>(support[k]), x);
      col[support[k]] = (mask >> k) & 1U ? base / gamma : gamma * base;
      total += col[support[k]];
    }
    col[xi] = -total;
    out.push_back(std::move(col));
  }
  if (gamma == 1.0) out.resize(1);
  return out;
}

MomentReport worst_case_exp_moment(const RateMatrix& a, double gamma, const StateSet& target,
                                   double beta) {
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidComponent, "beta must be positive");
  if (gamma == 1.0) {
    MomentReport r = exp_moment(a, target, beta);
    r.worst_case = true;
    return r;
  }
  return worst_case_policy_iteration(a, gamma, target, beta, 0.0, 1.0, true);
}

Vector worst_case_expected_hitting_times(const RateMatrix& a, double gamma,
                                         const StateSet& target) {
  if (gamma == 1.0) return expected_hitting_times(a, target);
  const MomentReport r = worst_case_policy_iteration(a, gamma, target, 0.0, 1.0, 0.0, false);
  if (!r.finite) throw Error(ErrorCode::SingularSystem, "worst-case hitting-time system singular");
  return r.values;
}

double convergence_abscissa(const RateMatrix& a, double gamma, const StateSet& target) {
  const auto reach = reaches_target(a, target);
  if (std::find(reach.begin(), reach.end(), false) != reach.end()) {
    throw Error(ErrorCode::NoFiniteExponent, "target unreachable from some state");
  }
  double lo = 0.0;
  double hi = a.max_exit_rate() / gamma + 1.0;
  if (!worst_case_exp_moment(a, gamma, target, 1e-12 * hi).finite) {
    throw Error(ErrorCode::NoFiniteExponent, "no positive exponent has a finite moment");
  }
  for (int k = 0; k < 40; ++k) {
    const double mid = 0.5 * (lo + hi);
    if (worst_case_exp_moment(a, gamma, target, mid).finite) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double polynomial_exponential_constant(double p, double rate) {
  if (p <= rate) return 1.0;
  return std::pow(p / rate, p) * std::exp(rate - p);
}

double ConditionK::K(double t) const { return k * std::pow(1.0 + t, 1.0 + beta); }

double ConditionK::K_tilde(double t) const {
  return k_tilde * std::pow(1.0 + t, (1.0 + beta) * (1.0 + beta_tilde));
}

ConditionK condition_K(const RateMatrix& a, double gamma, const StateSet& target, double beta,
                       double beta_tilde, TerminalGrowth terminal) {
  if (!(beta > 0.0)) throw Error(ErrorCode::InvalidComponent, "beta must be positive");
  if (terminal.beta_phi > 1.0 + beta) {
    throw Error(ErrorCode::InconsistentGrowth, "terminal growth exceeds the moment exponent");
  }
  ConditionK ck;
  ck.beta = beta;
  ck.beta_tilde = beta_tilde > 0.0 ? beta_tilde : beta;
  ck.beta_prime = 0.5 * convergence_abscissa(a, gamma, target);
  const MomentReport h = worst_case_exp_moment(a, gamma, target, ck.beta_prime);
  if (!h.finite) throw Error(ErrorCode::NoFiniteExponent, "moment at half the abscissa diverged");
  ck.h_sup = h.values.maxCoeff();
  ck.terminal_scale = std::max(1.0, 2.0 * terminal.k_phi);
  const double p = 1.0 + beta;
  ck.k = ck.terminal_scale * polynomial_exponential_constant(p, ck.beta_prime) * ck.h_sup;
  const double p2 = p * (1.0 + ck.beta_tilde);
  ck.k_tilde = std::pow(ck.k, 1.0 + ck.beta_tilde) *
               polynomial_exponential_constant(p2, ck.beta_prime) * ck.h_sup;
  return ck;
}

}  // namespace stopbsde
