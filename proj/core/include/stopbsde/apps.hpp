#pragma once

#include "stopbsde/drivers.hpp"
#include "stopbsde/solver.hpp"

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace stopbsde {

// ---------------------------------------------------------------------------
// Optimal control to a hitting time

struct ControlSolution {
  SolutionField value;
  /// Stationary feedback: control index per state (targets hold 0).
  std::vector<std::size_t> policy;
  double gamma = 0.0;
  /// max |policy value - Bellman value| from the independent re-evaluation.
  double verification_gap = 0.0;
};

/// Value of the stationary policy by a direct linear solve. The cost must be
/// time-free and affine in y (as produced by ControlSet::from_tables).
Vector evaluate_stationary_policy(const ControlSet& cs, const StateSet& target,
                                  const Vector& terminal, const std::vector<std::size_t>& policy);

/// Minimizes E^u[∫ L ds + φ(X_τ)] over feedback controls. Throws
/// PolicyValueMismatch when the extracted policy does not reproduce the value.
ControlSolution solve_control(const ControlSet& cs, const StateSet& target,
                              const Vector& terminal, const SolveOptions& options = {});

// ---------------------------------------------------------------------------
// Stochastic shortest paths

struct GraphEdge {
  StateIndex from;
  StateIndex to;
  double distance;
};

struct GraphSpec {
  std::size_t nodes = 0;
  std::vector<GraphEdge> edges;
  StateIndex target = 0;
  /// Admissible speed-up factors. Control (j, s) multiplies every rate into
  /// node j by s; the factor 1 (no speed-up) is always included.
  std::vector<double> speedups;
};

/// Random walk: rate i→j = (1/D_ij) / Σ_k (1/D_ik).
RateMatrix walk_matrix(const GraphSpec& g);

ControlSet speedup_controls(const GraphSpec& g);

struct ShortestPathSolution {
  RateMatrix walk;
  SolutionField remaining;             // Y'_t = u(X_t)
  std::vector<std::size_t> policy;     // control index per node
  std::vector<std::string> labels;
  /// Y_t = Y'_t + t evaluated on a grid.
  SolutionField full(const std::vector<double>& times) const;
};

ShortestPathSolution shortest_path_times(const GraphSpec& g, const SolveOptions& options = {});

// ---------------------------------------------------------------------------
// Network reliability

struct ReliabilitySolution {
  SolutionField value;                         // success probabilities
  std::optional<std::vector<std::size_t>> policy;  // argmax controls
  StateSet absorbing;
};

ReliabilitySolution reliability(const RateMatrix& chain, const Vector& loss_rates,
                                const StateSet& dead, StateIndex target_node,
                                const std::optional<ControlSet>& controls = std::nullopt,
                                const SolveOptions& options = {});

// ---------------------------------------------------------------------------
// Non-Ohmic circuits

struct Resistor {
  double ohms;
};

/// Shockley diode conducting from `from` to `to`: I = I_s (exp(V/V_T) - 1).
struct Diode {
  double saturation_current;
  double thermal_voltage;
};

using Component = std::variant<Resistor, Diode>;

struct CircuitEdge {
  StateIndex from;
  StateIndex to;
  Component component;
};

struct CircuitSpec {
  std::vector<std::string> node_names;
  std::vector<CircuitEdge> edges;
  std::map<StateIndex, double> sources;  // node -> volts

  std::size_t nodes() const { return node_names.size(); }
};

/// Checks positivity of parameters, connectivity, and that every non-source
/// node reaches a source. Throws InvalidComponent or DisconnectedNode.
void validate_circuit(const CircuitSpec& c);

/// Conductance I/V of a component at voltage drop v = v_from - v_to.
double implied_conductance(const Component& comp, double v);

/// Current from `from` to `to` at drop v.
double component_current(const Component& comp, double v);

/// Conductance floor keeping A^v irreducible under reverse bias.
inline constexpr double kConductanceFloor = 1e-15;

/// Reference matrix with each diode replaced by its zero-bias resistance V_T/I_s.
RateMatrix circuit_reference_matrix(const CircuitSpec& c);

/// A^v built from implied conductances at potentials v.
Matrix circuit_implied_matrix(const CircuitSpec& c, const Vector& v);

struct CircuitSolution {
  SolutionField potentials;
  /// Net current into each node; zero at non-source nodes.
  Vector kirchhoff_residual;
  std::vector<double> edge_currents;
  RateMatrix reference;
};

CircuitSolution solve_circuit(const CircuitSpec& c, const SolveOptions& options = {1e-12, 500, {}});

// ---------------------------------------------------------------------------
// Monte Carlo validation

/// A problem with the linear path representation
///   Y_0 = E^B[∫_0^τ e^{-∫_0^s r} g(X_s) ds + e^{-∫_0^τ r} φ(τ, X_τ)],
/// where the active compensator B may depend on state and time.
struct SimulableProblem {
  Feedback compensator;
  Vector running;   // g
  Vector discount;  // r
  TerminalFn terminal;
  StateSet target;
};

struct McReport {
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  Vector estimate;
  Vector std_error;
  Vector solver;
  Vector z_score;

  /// |z| ≤ k for every state (standard errors of zero require exact agreement).
  bool within(double k) const;
};

/// Per-path sample of the representation above, starting at x0.
double sample_path_value(const SimulableProblem& problem, StateIndex x0, std::uint64_t seed);

McReport mc_validate(const SimulableProblem& problem, const Vector& solver_values,
                     std::size_t paths, std::uint64_t seed);

/// Representation of the affine driver z*(B - A)x + g - r y.
SimulableProblem affine_representation(const RateMatrix& b, const Vector& running,
                                       const Vector& discount, const StateSet& target,
                                       TerminalFn terminal);

/// Representation of a control problem under a stationary policy.
SimulableProblem policy_representation(const ControlSet& cs, const std::vector<std::size_t>& policy,
                                       const StateSet& target, TerminalFn terminal);

}  // namespace stopbsde
