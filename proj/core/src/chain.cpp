#include "stopbsde/chain.hpp"

#include <cmath>
#include <deque>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

namespace stopbsde {

std::string RateDiagnostic::message() const {
  std::ostringstream os;
  os << to_string(code);
  switch (code) {
    case ErrorCode::ColumnSumNonzero:
      os << "(column=" << column << ", residual=" << value << ")";
      break;
    case ErrorCode::NotSquare:
      os << "(rows=" << row << ", columns=" << column << ")";
      break;
    default:
      os << "(row=" << row << ", column=" << column << ", value=" << value << ")";
  }
  return os.str();
}

std::vector<RateDiagnostic> diagnose_rate_matrix(const Matrix& q) {
  std::vector<RateDiagnostic> out;
  if (q.rows() != q.cols() || q.rows() == 0) {
    out.push_back({ErrorCode::NotSquare, static_cast<std::size_t>(q.rows()),
                   static_cast<std::size_t>(q.cols()), 0.0});
    return out;
  }
  const auto n = static_cast<std::size_t>(q.rows());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(q(j, i))) out.push_back({ErrorCode::NonFinite, j, i, q(j, i)});
    }
  }
  if (!out.empty()) return out;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && q(j, i) < 0.0) out.push_back({ErrorCode::NegativeOffDiagonal, j, i, q(j, i)});
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double residual = q.col(static_cast<Eigen::Index>(i)).sum();
    if (std::abs(residual) >= RateMatrix::kRenormalizeTolerance) {
      out.push_back({ErrorCode::ColumnSumNonzero, 0, i, residual});
    }
  }
  return out;
}

RateMatrix RateMatrix::validate(Matrix q) {
  const auto diagnostics = diagnose_rate_matrix(q);
  if (!diagnostics.empty()) {
    throw Error(diagnostics.front().code, diagnostics.front().message());
  }
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    const double residual = q.col(i).sum();
    if (std::abs(residual) > kColumnTolerance) q(i, i) -= residual;
  }
  return RateMatrix(std::move(q));
}

RateMatrix validate_rate_matrix(const Matrix& q) { return RateMatrix::validate(q); }

double RateMatrix::max_exit_rate() const {
  double m = 0.0;
  for (Eigen::Index i = 0; i < q_.rows(); ++i) m = std::max(m, -q_(i, i));
  return m;
}

RateMatrix RateMatrix::scaled(double factor) const { return RateMatrix(q_ * factor); }

namespace {

void require_same_size(const RateMatrix& a, const RateMatrix& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
}

}  // namespace

bool gamma_controlled(const RateMatrix& a, const RateMatrix& b, double gamma,
                      const std::vector<bool>& skip) {
  require_same_size(a, b);
  if (!skip.empty() && skip.size() != a.size()) {
    throw Error(ErrorCode::DimensionMismatch, "skip mask length");
  }
  const Matrix m = b.matrix() - gamma * a.matrix();
  const double scale = 1.0 + a.max_exit_rate() + b.max_exit_rate();
  const double tol = 1e-12 * scale;
  const auto n = static_cast<Eigen::Index>(a.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!skip.empty() && skip[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && m(j, i) < -tol) return false;
    }
    if (std::abs(m.col(i).sum()) > RateMatrix::kRenormalizeTolerance * scale) return false;
    if (m(i, i) > -gamma + tol) return false;
  }
  return true;
}

bool gamma_equivalent(const RateMatrix& a, const RateMatrix& b, double gamma,
                      const std::vector<bool>& skip) {
  return gamma_controlled(a, b, gamma, skip) && gamma_controlled(b, a, gamma, skip);
}

double max_gamma(const RateMatrix& a, std::span<const RateMatrix> bs,
                 const std::vector<bool>& skip) {
  for (const auto& b : bs) require_same_size(a, b);
  auto feasible = [&](double g) {
    for (const auto& b : bs) {
      if (!gamma_equivalent(a, b, g, skip)) return false;
    }
    return true;
  };
  if (feasible(1.0)) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

double seminorm_sq(const RateMatrix& a, StateIndex x, const Vector& z) {
  if (static_cast<std::size_t>(z.size()) != a.size()) {
    throw Error(ErrorCode::DimensionMismatch, "z has wrong length");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (j == x) continue;
    const double d = z[static_cast<Eigen::Index>(j)] - z[static_cast<Eigen::Index>(x)];
    s += d * d * a(j, x);
  }
  return s;
}

std::vector<bool> reaches_target(const RateMatrix& a, const StateSet& target) {
  const std::size_t n = a.size();
  std::vector<bool> reach = target.mask(n);
  std::deque<StateIndex> queue(target.begin(), target.end());
  while (!queue.empty()) {
    const StateIndex j = queue.front();
    queue.pop_front();
    for (StateIndex i = 0; i < n; ++i) {
      if (!reach[i] && i != j && a(j, i) > 0.0) {
        reach[i] = true;
        queue.push_back(i);
      }
    }
  }
  return reach;
}

std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

// Uniform on (0, 1] from the top 53 bits, independent of the standard
// library's distribution implementations.
double uniform_open0(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace

ChainPath simulate_controlled_path(const Feedback& controls, StateIndex x0,
                                   const StateSet& target, double horizon,
                                   std::uint64_t seed) {
  if (!(horizon > 0.0) && target.empty()) {
    throw Error(ErrorCode::EmptyTarget, "simulation needs a target set or a positive horizon");
  }
  std::mt19937_64 rng(seed);
  ChainPath path;
  path.states.push_back(x0);
  double t = 0.0;
  StateIndex x = x0;
  while (true) {
    if (target.contains(x)) {
      path.hit_target = true;
      path.terminal_time = t;
      return path;
    }
    const RateMatrix& q = controls(x, t);
    if (x >= q.size()) throw Error(ErrorCode::StateOutOfRange, "state " + std::to_string(x));
    const double exit = q.exit_rate(x);
    if (!(exit > 0.0)) {
      if (std::isinf(horizon)) {
        throw Error(ErrorCode::AbsorbedOutsideTarget,
                    "state " + std::to_string(x) + " has no exit and is not a target");
      }
      path.terminal_time = horizon;
      return path;
    }
    const double hold = -std::log(uniform_open0(rng)) / exit;
    if (t + hold >= horizon) {
      path.terminal_time = horizon;
      return path;
    }
    t += hold;
    double pick = uniform_open0(rng) * exit;
    StateIndex next = x;
    for (StateIndex j = 0; j < q.size(); ++j) {
      if (j == x) continue;
      const double r = q(j, x);
      if (r <= 0.0) continue;
      next = j;
      pick -= r;
      if (pick <= 0.0) break;
    }
    x = next;
    path.jump_times.push_back(t);
    path.states.push_back(x);
  }
}

ChainPath simulate_path(const RateMatrix& a, StateIndex x0, const StateSet& target,
                        double horizon, std::uint64_t seed) {
  return simulate_controlled_path([&a](StateIndex, double) -> const RateMatrix& { return a; },
                                  x0, target, horizon, seed);
}

void write_path_csv(std::ostream& os, const ChainPath& path) {
  const auto old = os.precision(17);
  os << "t,state\n";
  os << 0.0 << ',' << path.states.front() << '\n';
  for (std::size_t k = 0; k < path.jump_times.size(); ++k) {
    os << path.jump_times[k] << ',' << path.states[k + 1] << '\n';
  }
  os.precision(old);
}

}  // namespace stopbsde
