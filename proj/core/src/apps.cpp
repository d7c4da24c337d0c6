#include "stopbsde/apps.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <sstream>
#include <thread>

namespace stopbsde {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

std::vector<std::size_t> extract_policy(const ControlSet& cs, const StateSet& target,
                                        const Vector& u, bool maximize) {
  std::vector<std::size_t> policy(cs.states(), 0);
  for (StateIndex x = 0; x < cs.states(); ++x) {
    if (target.contains(x)) continue;
    const auto h = maximize ? hamiltonian_argmax(cs, cs.reference(), x, 0.0, u[ix(x)], u)
                            : hamiltonian_argmin(cs, cs.reference(), x, 0.0, u[ix(x)], u);
    policy[x] = h.control;
  }
  return policy;
}

}  // namespace

Vector evaluate_stationary_policy(const ControlSet& cs, const StateSet& target,
                                  const Vector& terminal, const std::vector<std::size_t>& policy) {
  const std::size_t n = cs.states();
  if (policy.size() != n || static_cast<std::size_t>(terminal.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "policy and terminal need one entry per state");
  }
  const auto mask = target.mask(n);
  std::vector<StateIndex> live;
  std::vector<Eigen::Index> pos(n, -1);
  for (StateIndex x = 0; x < n; ++x) {
    if (!mask[x]) {
      pos[x] = ix(live.size());
      live.push_back(x);
    }
  }
  const auto m = ix(live.size());
  Matrix lhs = Matrix::Zero(m, m);
  Vector rhs = Vector::Zero(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const StateIndex x = live[static_cast<std::size_t>(r)];
    const std::size_t u = policy[x];
    const double ell = cs.cost(0.0, 0.0, x, u);
    const double rho = ell - cs.cost(0.0, 1.0, x, u);
    const Matrix& q = cs.matrix(u).matrix();
    rhs[r] = -ell;
    lhs(r, r) -= rho;
    for (StateIndex y = 0; y < n; ++y) {
      const double rate = q(ix(y), ix(x));
      if (mask[y]) {
        rhs[r] -= rate * terminal[ix(y)];
      } else {
        lhs(r, pos[y]) += rate;
      }
    }
  }
  Eigen::FullPivLU<Matrix> lu(lhs);
  if (m > 0 && !lu.isInvertible()) {
    throw Error(ErrorCode::SingularSystem, "policy never reaches the target");
  }
  Vector v = terminal;
  if (m > 0) {
    const Vector sol = lu.solve(rhs);
    for (Eigen::Index r = 0; r < m; ++r) v[ix(live[static_cast<std::size_t>(r)])] = sol[r];
  }
  return v;
}

ControlSolution solve_control(const ControlSet& cs, const StateSet& target,
                              const Vector& terminal, const SolveOptions& options) {
  GrowthConstants constants;
  constants.c = cs.cost_traits().c;
  HittingProblem problem(cs.reference(), target, constant_terminal(terminal),
                         hamiltonian_inf(cs, cs.reference()), constants);
  ControlSolution out;
  out.value = solve_homogeneous(problem, options);
  out.gamma = cs.gamma();
  out.policy = extract_policy(cs, target, out.value.u(), false);
  const Vector check = evaluate_stationary_policy(cs, target, terminal, out.policy);
  out.verification_gap = (check - out.value.u()).cwiseAbs().maxCoeff();
  const double scale = 1.0 + out.value.u().cwiseAbs().maxCoeff();
  if (!(out.verification_gap <= 1e-8 * scale)) {
    std::ostringstream msg;
    msg << "extracted policy value differs from Bellman value by " << out.verification_gap;
    throw Error(ErrorCode::PolicyValueMismatch, msg.str());
  }
  return out;
}

// ---------------------------------------------------------------------------

RateMatrix walk_matrix(const GraphSpec& g) {
  if (g.nodes == 0) throw Error(ErrorCode::DimensionMismatch, "graph has no nodes");
  if (g.target >= g.nodes) throw Error(ErrorCode::StateOutOfRange, "target node out of range");
  Matrix weights = Matrix::Zero(ix(g.nodes), ix(g.nodes));
  for (const auto& e : g.edges) {
    if (e.from >= g.nodes || e.to >= g.nodes) {
      throw Error(ErrorCode::StateOutOfRange, "edge endpoint out of range");
    }
    if (!(e.distance > 0.0) || !std::isfinite(e.distance)) {
      throw Error(ErrorCode::InvalidComponent, "edge distances must be positive and finite");
    }
    if (e.from == e.to) continue;
    weights(ix(e.to), ix(e.from)) += 1.0 / e.distance;
  }
  Matrix q = Matrix::Zero(ix(g.nodes), ix(g.nodes));
  for (Eigen::Index i = 0; i < q.cols(); ++i) {
    const double total = weights.col(i).sum();
    if (total <= 0.0) continue;
    q.col(i) = weights.col(i) / total;
    q(i, i) = -1.0;
  }
  return RateMatrix::validate(q);
}

ControlSet speedup_controls(const GraphSpec& g) {
  const RateMatrix walk = walk_matrix(g);
  std::vector<std::string> labels{"none"};
  std::vector<RateMatrix> matrices{walk};
  std::vector<bool> has_incoming(g.nodes, false);
  for (const auto& e : g.edges) {
    if (e.from != e.to) has_incoming[e.to] = true;
  }
  for (StateIndex j = 0; j < g.nodes; ++j) {
    if (!has_incoming[j]) continue;
    for (double s : g.speedups) {
      if (!(s > 0.0) || !std::isfinite(s)) {
        throw Error(ErrorCode::InvalidComponent, "speed-up factors must be positive and finite");
      }
      if (s == 1.0) continue;
      Matrix q = walk.matrix();
      for (Eigen::Index i = 0; i < q.cols(); ++i) {
        if (i == ix(j)) continue;
        q(ix(j), i) *= s;
        q(i, i) = 0.0;
        q(i, i) = -q.col(i).sum();
      }
      std::ostringstream label;
      label << "toward " << j << " x" << s;
      labels.push_back(label.str());
      matrices.push_back(RateMatrix::validate(q));
    }
  }
  const auto k = static_cast<Eigen::Index>(matrices.size());
  return ControlSet::from_tables(walk, std::move(labels), std::move(matrices),
                                 Matrix::Ones(k, ix(g.nodes)), std::nullopt,
                                 StateSet({g.target}));
}

SolutionField ShortestPathSolution::full(const std::vector<double>& times) const {
  SolutionField f;
  f.mode = SolutionField::Mode::time_grid;
  f.times = times;
  f.residual = remaining.residual;
  f.iterations = remaining.iterations;
  for (double t : times) f.values.push_back(remaining.u().array() + t);
  return f;
}

ShortestPathSolution shortest_path_times(const GraphSpec& g, const SolveOptions& options) {
  const ControlSet cs = speedup_controls(g);
  const StateSet target({g.target});
  ControlSolution sol = solve_control(cs, target, Vector::Zero(ix(g.nodes)), options);
  return ShortestPathSolution{cs.reference(), std::move(sol.value), std::move(sol.policy),
                              cs.labels()};
}

// ---------------------------------------------------------------------------

ReliabilitySolution reliability(const RateMatrix& chain, const Vector& loss_rates,
                                const StateSet& dead, StateIndex target_node,
                                const std::optional<ControlSet>& controls,
                                const SolveOptions& options) {
  const std::size_t n = chain.size();
  if (static_cast<std::size_t>(loss_rates.size()) != n) {
    throw Error(ErrorCode::DimensionMismatch, "one loss rate per node required");
  }
  if (target_node >= n) throw Error(ErrorCode::StateOutOfRange, "target node out of range");
  if (!loss_rates.allFinite() || (loss_rates.array() < 0.0).any()) {
    throw Error(ErrorCode::NonFinite, "loss rates must be finite and non-negative");
  }
  if (dead.contains(target_node)) {
    throw Error(ErrorCode::StateOutOfRange, "target node cannot be dead");
  }
  if (!dead.empty()) (void)dead.mask(n);
  if (controls && controls->states() != n) {
    throw Error(ErrorCode::DimensionMismatch, "control set size differs from chain");
  }
  const StateSet absorbing = dead.united(StateSet({target_node}));
  Vector phi = Vector::Zero(ix(n));
  phi[ix(target_node)] = 1.0;

  AffineDriverSpec loss{Matrix::Zero(ix(n), ix(n)), Vector::Zero(ix(n)), loss_rates};
  MarkovianDriver driver = affine_driver(loss);
  if (controls) driver = sum_drivers(driver, hamiltonian_sup(*controls, chain));

  GrowthConstants constants;
  constants.c = loss_rates.size() > 0 ? loss_rates.maxCoeff() : 0.0;
  HittingProblem problem(chain, absorbing, constant_terminal(phi), driver, constants);
  ReliabilitySolution out;
  out.value = solve_homogeneous(problem, options);
  out.absorbing = absorbing;
  if (controls) out.policy = extract_policy(*controls, absorbing, out.value.u(), true);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

double edge_conductance_at_zero(const Component& comp) {
  return std::visit(
      [](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Resistor>) {
          return 1.0 / c.ohms;
        } else {
          return c.saturation_current / c.thermal_voltage;
        }
      },
      comp);
}

std::string node_label(const CircuitSpec& c, StateIndex x) {
  return x < c.node_names.size() && !c.node_names[x].empty() ? c.node_names[x]
                                                             : std::to_string(x);
}

}  // namespace

void validate_circuit(const CircuitSpec& c) {
  const std::size_t n = c.nodes();
  if (n == 0) throw Error(ErrorCode::InvalidComponent, "circuit has no nodes");
  if (c.sources.empty()) throw Error(ErrorCode::EmptyTarget, "circuit has no voltage sources");
  for (const auto& [node, volts] : c.sources) {
    if (node >= n) throw Error(ErrorCode::StateOutOfRange, "source node out of range");
    if (!std::isfinite(volts)) throw Error(ErrorCode::NonFinite, "source voltage not finite");
  }
  std::vector<std::vector<StateIndex>> adj(n);
  for (std::size_t e = 0; e < c.edges.size(); ++e) {
    const auto& edge = c.edges[e];
    if (edge.from >= n || edge.to >= n) {
      throw Error(ErrorCode::StateOutOfRange, "component endpoint out of range");
    }
    if (edge.from == edge.to) {
      throw Error(ErrorCode::InvalidComponent,
                  "component " + std::to_string(e) + " connects node " +
                      node_label(c, edge.from) + " to itself");
    }
    const bool ok = std::visit(
        [](const auto& comp) {
          using T = std::decay_t<decltype(comp)>;
          if constexpr (std::is_same_v<T, Resistor>) {
            return comp.ohms > 0.0 && std::isfinite(comp.ohms);
          } else {
            return comp.saturation_current > 0.0 && std::isfinite(comp.saturation_current) &&
                   comp.thermal_voltage > 0.0 && std::isfinite(comp.thermal_voltage);
          }
        },
        edge.component);
    if (!ok) {
      throw Error(ErrorCode::InvalidComponent,
                  "component " + std::to_string(e) + " has a non-positive parameter");
    }
    adj[edge.from].push_back(edge.to);
    adj[edge.to].push_back(edge.from);
  }
  std::vector<bool> seen(n, false);
  std::deque<StateIndex> queue;
  for (const auto& [node, volts] : c.sources) {
    seen[node] = true;
    queue.push_back(node);
  }
  while (!queue.empty()) {
    const StateIndex x = queue.front();
    queue.pop_front();
    for (StateIndex y : adj[x]) {
      if (!seen[y]) {
        seen[y] = true;
        queue.push_back(y);
      }
    }
  }
  std::string missing;
  for (StateIndex x = 0; x < n; ++x) {
    if (!seen[x]) missing += (missing.empty() ? "" : ", ") + node_label(c, x);
  }
  if (!missing.empty()) {
    throw Error(ErrorCode::DisconnectedNode, "no path to a source from node(s): " + missing);
  }
}

double implied_conductance(const Component& comp, double v) {
  return std::visit(
      [v](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Resistor>) {
          return 1.0 / c.ohms;
        } else {
          const double vt = c.thermal_voltage;
          const double x = v / vt;
          double w = 0.0;
          if (std::abs(v) < 1e-6 * vt) {
            w = (c.saturation_current / vt) * (1.0 + x / 2.0 + x * x / 6.0);
          } else {
            w = c.saturation_current * std::expm1(x) / v;
          }
          return std::max(w, kConductanceFloor);
        }
      },
      comp);
}

double component_current(const Component& comp, double v) {
  return std::visit(
      [v](const auto& c) -> double {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, Resistor>) {
          return v / c.ohms;
        } else {
          return c.saturation_current * std::expm1(v / c.thermal_voltage);
        }
      },
      comp);
}

RateMatrix circuit_reference_matrix(const CircuitSpec& c) {
  validate_circuit(c);
  const auto n = ix(c.nodes());
  Matrix q = Matrix::Zero(n, n);
  for (const auto& e : c.edges) {
    const double w = edge_conductance_at_zero(e.component);
    q(ix(e.to), ix(e.from)) += w;
    q(ix(e.from), ix(e.to)) += w;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    q(i, i) = 0.0;
    q(i, i) = -q.col(i).sum();
  }
  return RateMatrix::validate(q);
}

Matrix circuit_implied_matrix(const CircuitSpec& c, const Vector& v) {
  const auto n = ix(c.nodes());
  if (v.size() != n) throw Error(ErrorCode::DimensionMismatch, "one potential per node required");
  Matrix q = Matrix::Zero(n, n);
  for (const auto& e : c.edges) {
    const double w = implied_conductance(e.component, v[ix(e.from)] - v[ix(e.to)]);
    q(ix(e.to), ix(e.from)) += w;
    q(ix(e.from), ix(e.to)) += w;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    q(i, i) = 0.0;
    q(i, i) = -q.col(i).sum();
  }
  return q;
}

CircuitSolution solve_circuit(const CircuitSpec& c, const SolveOptions& options) {
  const RateMatrix reference = circuit_reference_matrix(c);
  const std::size_t n = c.nodes();

  struct Incidence {
    StateIndex other;
    double w0;
    const Component* comp;
    double sign;  // +1 when the node is the component's `from` end
  };
  auto incidence = std::make_shared<std::vector<std::vector<Incidence>>>(n);
  auto spec = std::make_shared<CircuitSpec>(c);
  for (const auto& e : spec->edges) {
    const double w0 = edge_conductance_at_zero(e.component);
    (*incidence)[e.from].push_back({e.to, w0, &e.component, 1.0});
    (*incidence)[e.to].push_back({e.from, w0, &e.component, -1.0});
  }
  DriverTraits traits;
  traits.kind = "diode_circuit";
  DriverFn fn = [incidence, spec](StateIndex x, double, double, const Vector& z) {
    double s = 0.0;
    for (const auto& inc : (*incidence)[x]) {
      const double drop = inc.sign * (z[ix(x)] - z[ix(inc.other)]);
      const double w = implied_conductance(*inc.comp, drop);
      s += (w - inc.w0) * (z[ix(inc.other)] - z[ix(x)]);
    }
    return s;
  };

  std::vector<StateIndex> sources;
  Vector phi = Vector::Zero(ix(n));
  for (const auto& [node, volts] : c.sources) {
    sources.push_back(node);
    phi[ix(node)] = volts;
  }
  const MarkovianDriver driver(fn, traits);
  auto solve_scaled = [&](double scale, const SolveOptions& opts) {
    const HittingProblem problem(reference, StateSet(sources), constant_terminal(scale * phi), driver);
    return solve_homogeneous(problem, opts);
  };

  std::optional<SolutionField> field;
  try {
    field = solve_scaled(1.0, options);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoConvergence) throw;
  }
  if (!field) {
    // Source stepping: ramp the source potentials, warm-starting each solve.
    constexpr int kRampSteps = 20;
    SolveOptions ramp = options;
    for (int k = 1; k <= kRampSteps; ++k) {
      field = solve_scaled(static_cast<double>(k) / kRampSteps, ramp);
      ramp.initial = field->u();
    }
  }

  CircuitSolution out{std::move(*field), Vector::Zero(ix(n)), {}, reference};
  const Vector& v = out.potentials.u();
  for (const auto& e : c.edges) {
    const double i = component_current(e.component, v[ix(e.from)] - v[ix(e.to)]);
    out.edge_currents.push_back(i);
    out.kirchhoff_residual[ix(e.to)] += i;
    out.kirchhoff_residual[ix(e.from)] -= i;
  }
  return out;
}

// ---------------------------------------------------------------------------

bool McReport::within(double k) const {
  for (Eigen::Index x = 0; x < z_score.size(); ++x) {
    if (!(std::abs(z_score[x]) <= k)) return false;
  }
  return true;
}

double sample_path_value(const SimulableProblem& problem, StateIndex x0, std::uint64_t seed) {
  const ChainPath path =
      simulate_controlled_path(problem.compensator, x0, problem.target, kNoHorizon, seed);
  double discount = 0.0;  // ∫ r ds so far
  double value = 0.0;
  double start = 0.0;
  for (std::size_t k = 0; k + 1 < path.states.size(); ++k) {
    const StateIndex x = path.states[k];
    const double end = path.jump_times[k];
    const double dt = end - start;
    const double r = problem.discount[ix(x)];
    const double g = problem.running[ix(x)];
    const double decay = r == 0.0 ? dt : -std::expm1(-r * dt) / r;
    value += g * std::exp(-discount) * decay;
    discount += r * dt;
    start = end;
  }
  value += std::exp(-discount) * problem.terminal(path.terminal_time, path.final_state());
  return value;
}

McReport mc_validate(const SimulableProblem& problem, const Vector& solver_values,
                     std::size_t paths, std::uint64_t seed) {
  const auto n = solver_values.size();
  if (problem.running.size() != n || problem.discount.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "running cost and discount need one entry per state");
  }
  if (paths < 2) throw Error(ErrorCode::DimensionMismatch, "at least two paths are required");
  McReport rep;
  rep.paths = paths;
  rep.seed = seed;
  rep.estimate = Vector::Zero(n);
  rep.std_error = Vector::Zero(n);
  rep.solver = solver_values;
  rep.z_score = Vector::Zero(n);
  const auto mask = problem.target.mask(static_cast<std::size_t>(n));

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  for (Eigen::Index x = 0; x < n; ++x) {
    const auto xs = static_cast<StateIndex>(x);
    if (mask[xs]) {
      rep.estimate[x] = problem.terminal(0.0, xs);
    } else {
      std::vector<double> samples(paths);
      const std::size_t workers = std::min<std::size_t>(hw, paths);
      auto work = [&](std::size_t w) {
        for (std::size_t k = w; k < paths; k += workers) {
          samples[k] = sample_path_value(problem, xs,
                                         path_seed(seed, static_cast<std::uint64_t>(xs) * paths + k));
        }
      };
      if (workers <= 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
      }
      double mean = 0.0;
      for (std::size_t k = 0; k < paths; ++k) mean += (samples[k] - mean) / static_cast<double>(k + 1);
      double ss = 0.0;
      for (double s : samples) ss += (s - mean) * (s - mean);
      rep.estimate[x] = mean;
      rep.std_error[x] = std::sqrt(ss / static_cast<double>(paths - 1) / static_cast<double>(paths));
    }
    const double diff = rep.estimate[x] - solver_values[x];
    if (rep.std_error[x] > 0.0) {
      rep.z_score[x] = diff / rep.std_error[x];
    } else {
      rep.z_score[x] = std::abs(diff) <= 1e-12 * (1.0 + std::abs(solver_values[x]))
                           ? 0.0
                           : std::numeric_limits<double>::infinity();
    }
  }
  return rep;
}

SimulableProblem affine_representation(const RateMatrix& b, const Vector& running,
                                       const Vector& discount, const StateSet& target,
                                       TerminalFn terminal) {
  auto shared = std::make_shared<RateMatrix>(b);
  Feedback fb = [shared](StateIndex, double) -> const RateMatrix& { return *shared; };
  return SimulableProblem{std::move(fb), running, discount, std::move(terminal), target};
}

SimulableProblem policy_representation(const ControlSet& cs, const std::vector<std::size_t>& policy,
                                       const StateSet& target, TerminalFn terminal) {
  const std::size_t n = cs.states();
  if (policy.size() != n) throw Error(ErrorCode::DimensionMismatch, "one control per state");
  auto per_state = std::make_shared<std::vector<RateMatrix>>();
  Vector running(ix(n));
  Vector discount(ix(n));
  for (StateIndex x = 0; x < n; ++x) {
    if (policy[x] >= cs.size()) throw Error(ErrorCode::StateOutOfRange, "control index out of range");
    per_state->push_back(cs.matrix(policy[x]));
    const double ell = cs.cost(0.0, 0.0, x, policy[x]);
    running[ix(x)] = ell;
    discount[ix(x)] = ell - cs.cost(0.0, 1.0, x, policy[x]);
  }
  Feedback fb = [per_state](StateIndex x, double) -> const RateMatrix& { return (*per_state)[x]; };
  return SimulableProblem{std::move(fb), std::move(running), std::move(discount),
                          std::move(terminal), target};
}

}  // namespace stopbsde
