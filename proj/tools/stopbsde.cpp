#include "stopbsde/apps.hpp"
#include "stopbsde/chain.hpp"
#include "stopbsde/ergodicity.hpp"
#include "stopbsde/io.hpp"
#include "stopbsde/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#ifndef STOPBSDE_VERSION
#define STOPBSDE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace stopbsde;

namespace {

constexpr int kExitInput = 1;
constexpr int kExitNumerical = 2;

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string num(double v) { return io::format_number(v); }

/// One command invocation: inputs are hashed on load, outputs on write, and
/// the manifest lands next to the outputs when the run ends.
class Run {
 public:
  Run(std::string command, fs::path out_dir) : command_(std::move(command)), dir_(std::move(out_dir)) {
    start_ = std::chrono::steady_clock::now();
    manifest_["command"] = command_;
    manifest_["tool_version"] = STOPBSDE_VERSION;
    manifest_["inputs"] = ordered_json::array();
    manifest_["options"] = ordered_json::object();
    manifest_["outputs"] = ordered_json::array();
  }

  std::string load(const fs::path& path) {
    std::string text = io::read_file(path);
    const std::string digest = sha256_hex(text);
    manifest_["inputs"].push_back({{"path", path.filename().string()}, {"sha256", digest}});
    input_digests_.push_back(digest);
    return text;
  }

  ordered_json& options() { return manifest_["options"]; }
  void seed(std::uint64_t s) { manifest_["seed"] = s; }

  /// Metadata shared by every output of the run (no timings, no absolute paths).
  ordered_json metadata() const {
    ordered_json m;
    m["command"] = command_;
    m["tool_version"] = STOPBSDE_VERSION;
    m["inputs"] = input_digests_;
    m["options"] = manifest_["options"];
    if (manifest_.contains("seed")) m["seed"] = manifest_["seed"];
    return m;
  }

  void write(const std::string& name, const io::Table& table) {
    std::ostringstream os;
    io::write_table(os, table);
    const std::string bytes = os.str();
    fs::create_directories(dir_);
    std::ofstream out(dir_ / name, std::ios::binary);
    out << bytes;
    if (!out) throw Error(ErrorCode::ParseError, "cannot write " + (dir_ / name).string());
    manifest_["outputs"].push_back({{"file", name}, {"sha256", sha256_hex(bytes)}});
  }

  void finish(int exit_code, const std::string& error = {}, const std::string& message = {}) {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_);
    manifest_["exit_code"] = exit_code;
    if (!error.empty()) {
      manifest_["error"] = error;
      manifest_["message"] = message;
    }
    manifest_["wall_clock_seconds"] = elapsed.count();
    std::error_code ec;
    fs::create_directories(dir_, ec);
    std::ofstream out(dir_ / (command_ + ".manifest.json"), std::ios::binary);
    out << manifest_.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path dir_;
  ordered_json manifest_;
  std::vector<std::string> input_digests_;
  std::chrono::steady_clock::time_point start_;
};

std::string state_name(const std::vector<std::string>& names, StateIndex x) {
  return x < names.size() ? names[x] : std::to_string(x);
}

io::Table make_table(const Run& run, ordered_json extra, std::vector<std::string> columns) {
  ordered_json meta = run.metadata();
  for (auto& [k, v] : extra.items()) meta[k] = v;
  return io::Table{meta.dump(), std::move(columns), {}};
}

// --- validate --------------------------------------------------------------

int cmd_validate(Run& run, const fs::path& file) {
  const std::string text = run.load(file);
  ordered_json diags = ordered_json::array();
  std::vector<std::vector<std::string>> rows;
  auto add = [&](const std::string& code, std::optional<std::size_t> row, std::optional<std::size_t> col,
                 const std::string& message) {
    auto field = [](std::optional<std::size_t> v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    auto cell = [](std::optional<std::size_t> v) { return v ? std::to_string(*v) : std::string(); };
    diags.push_back({{"code", code}, {"row", field(row)}, {"column", field(col)}, {"message", message}});
    rows.push_back({code, cell(row), cell(col), message});
  };
  const io::RawChain raw = io::parse_chain(text);
  for (const auto& d : diagnose_rate_matrix(raw.rates)) {
    const bool has_row = d.code != ErrorCode::ColumnSumNonzero;
    add(to_string(d.code), has_row ? std::optional<std::size_t>(d.row) : std::nullopt, d.column, d.message());
  }
  if (diags.empty() && io::has_embedded_chain(text)) {
    try {
      (void)io::parse_problem(text);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::ParseError) throw;
      add(to_string(e.code()), std::nullopt, std::nullopt, e.what());
    }
  }
  const bool ok = diags.empty();
  io::Table t = make_table(run, {{"ok", ok}}, {"code", "row", "column", "message"});
  t.rows = std::move(rows);
  run.write("validate.csv", t);
  std::cout << ordered_json{{"ok", ok}, {"diagnostics", diags}}.dump() << '\n';
  return ok ? 0 : kExitInput;
}

// --- solve -----------------------------------------------------------------

struct SolveFlags {
  std::string mode = "homogeneous";
  double horizon = 10.0;
  std::size_t steps = 0;
  double tol = 1e-10;
};

int cmd_solve(Run& run, const fs::path& file, const SolveFlags& f) {
  const io::ProblemFile pf = io::parse_problem(run.load(file));
  run.options()["mode"] = f.mode;
  run.options()["tol"] = f.tol;
  const auto& names = pf.chain.names;
  if (f.mode == "homogeneous") {
    SolveOptions opt;
    opt.tol = f.tol;
    const SolutionField sol = solve_homogeneous(pf.problem, opt);
    io::Table t = make_table(run,
                             {{"driver", pf.driver_kind},
                              {"residual", sol.residual},
                              {"iterations", sol.iterations}},
                             {"state", "name", "u"});
    for (StateIndex x = 0; x < pf.problem.size(); ++x) {
      t.rows.push_back({std::to_string(x), state_name(names, x),
                        num(sol.u()[static_cast<Eigen::Index>(x)])});
    }
    run.write("solve.csv", t);
    return 0;
  }
  if (f.mode != "grid") throw Error(ErrorCode::ParseError, "--mode must be homogeneous or grid");
  const std::size_t steps = f.steps ? f.steps : min_grid_steps(pf.problem.chain(), f.horizon);
  run.options()["horizon"] = f.horizon;
  run.options()["steps"] = steps;
  const SolutionField sol = solve_backward_grid(pf.problem, f.horizon, steps);
  io::Table t = make_table(run, {{"driver", pf.driver_kind}}, {"t", "state", "u"});
  for (std::size_t k = 0; k < sol.times.size(); ++k) {
    for (StateIndex x = 0; x < pf.problem.size(); ++x) {
      t.rows.push_back({num(sol.times[k]), std::to_string(x),
                        num(sol.values[k][static_cast<Eigen::Index>(x)])});
    }
  }
  run.write("solve.csv", t);
  return 0;
}

// --- moments ---------------------------------------------------------------

struct MomentFlags {
  std::vector<StateIndex> target;
  double beta = 0.5;
  double gamma = 1.0;
  bool worst_case = false;
  double growth = 1.0;
};

int cmd_moments(Run& run, const fs::path& file, const MomentFlags& f) {
  const io::RawChain raw = io::parse_chain(run.load(file));
  const RateMatrix a = validate_rate_matrix(raw.rates);
  if (f.target.empty()) throw Error(ErrorCode::EmptyTarget, "--target is required");
  const StateSet target(f.target);
  run.options()["target"] = target.states();
  run.options()["beta"] = f.beta;
  run.options()["gamma"] = f.gamma;
  run.options()["worst_case"] = f.worst_case;
  run.options()["growth_beta"] = f.growth;
  const MomentReport rep =
      f.worst_case ? worst_case_exp_moment(a, f.gamma, target, f.beta) : exp_moment(a, target, f.beta);
  ordered_json k = nullptr;
  try {
    k = condition_K(a, f.gamma, target, f.growth).k;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoFiniteExponent) throw;
  }
  io::Table t = make_table(run,
                           {{"beta", f.beta}, {"gamma", f.gamma}, {"finite", rep.finite},
                            {"worst_case", f.worst_case}, {"k", k}},
                           {"state", "h"});
  for (StateIndex x = 0; x < a.size(); ++x) {
    t.rows.push_back({std::to_string(x),
                      rep.finite ? num(rep.values[static_cast<Eigen::Index>(x)]) : "inf"});
  }
  run.write("moments.csv", t);
  return 0;
}

// --- app -------------------------------------------------------------------

struct AppFlags {
  std::string app;
  std::size_t mc_paths = 0;
  std::uint64_t seed = 1;
};

void append_mc(io::Table& t, const McReport& mc) {
  t.columns.insert(t.columns.end(), {"mc_estimate", "mc_std_error", "mc_z"});
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    t.rows[r].insert(t.rows[r].end(),
                     {num(mc.estimate[i]), num(mc.std_error[i]), num(mc.z_score[i])});
  }
}

int cmd_app(Run& run, const fs::path& file, const AppFlags& f) {
  const std::string text = run.load(file);
  run.options()["app"] = f.app;
  run.options()["mc_paths"] = f.mc_paths;
  if (f.mc_paths) run.seed(f.seed);
  std::optional<McReport> mc;

  if (f.app == "control") {
    const io::ControlFile cf = io::parse_control(text);
    const ControlSolution sol = solve_control(cf.controls, cf.target, cf.terminal);
    if (f.mc_paths) {
      mc = mc_validate(policy_representation(cf.controls, sol.policy, cf.target,
                                             constant_terminal(cf.terminal)),
                       sol.value.u(), f.mc_paths, f.seed);
    }
    io::Table t = make_table(run,
                             {{"gamma", sol.gamma}, {"verification_gap", sol.verification_gap},
                              {"residual", sol.value.residual}},
                             {"state", "name", "value", "control"});
    for (StateIndex x = 0; x < cf.controls.states(); ++x) {
      t.rows.push_back({std::to_string(x), state_name(cf.chain.names, x),
                        num(sol.value.u()[static_cast<Eigen::Index>(x)]),
                        cf.target.contains(x) ? "" : cf.controls.labels()[sol.policy[x]]});
    }
    if (mc) append_mc(t, *mc);
    run.write("app.csv", t);
  } else if (f.app == "paths") {
    const io::GraphFile gf = io::parse_graph(text);
    const ShortestPathSolution sol = shortest_path_times(gf.graph);
    if (f.mc_paths) {
      const ControlSet cs = speedup_controls(gf.graph);
      const StateSet target({gf.graph.target});
      mc = mc_validate(policy_representation(cs, sol.policy, target,
                                             constant_terminal(Vector::Zero(sol.remaining.u().size()))),
                       sol.remaining.u(), f.mc_paths, f.seed);
    }
    io::Table t = make_table(run, {{"residual", sol.remaining.residual}},
                             {"node", "name", "remaining", "control"});
    for (StateIndex x = 0; x < gf.graph.nodes; ++x) {
      t.rows.push_back({std::to_string(x), state_name(gf.names, x),
                        num(sol.remaining.u()[static_cast<Eigen::Index>(x)]),
                        x == gf.graph.target ? "" : sol.labels[sol.policy[x]]});
    }
    if (mc) append_mc(t, *mc);
    run.write("app.csv", t);
  } else if (f.app == "reliability") {
    const io::ReliabilityFile rf = io::parse_reliability(text);
    const ReliabilitySolution sol =
        reliability(rf.rates, rf.loss, rf.dead, rf.target, rf.controls);
    if (f.mc_paths) {
      Vector phi = Vector::Zero(rf.loss.size());
      phi[static_cast<Eigen::Index>(rf.target)] = 1.0;
      SimulableProblem sp =
          rf.controls ? policy_representation(*rf.controls, *sol.policy, sol.absorbing,
                                              constant_terminal(phi))
                      : affine_representation(rf.rates, Vector::Zero(phi.size()),
                                              Vector::Zero(phi.size()), sol.absorbing,
                                              constant_terminal(phi));
      sp.discount += rf.loss;
      mc = mc_validate(sp, sol.value.u(), f.mc_paths, f.seed);
    }
    io::Table t = make_table(run, {{"residual", sol.value.residual}},
                             {"state", "name", "probability", "control"});
    for (StateIndex x = 0; x < rf.rates.size(); ++x) {
      const bool live = !sol.absorbing.contains(x);
      t.rows.push_back({std::to_string(x), state_name(rf.chain.names, x),
                        num(sol.value.u()[static_cast<Eigen::Index>(x)]),
                        live && sol.policy ? rf.controls->labels()[(*sol.policy)[x]] : ""});
    }
    if (mc) append_mc(t, *mc);
    run.write("app.csv", t);
  } else if (f.app == "circuit") {
    const CircuitSpec c = io::parse_netlist(text);
    const CircuitSolution sol = solve_circuit(c);
    if (f.mc_paths) {
      const Matrix implied = circuit_implied_matrix(c, sol.potentials.u());
      std::vector<StateIndex> sources;
      Vector phi = Vector::Zero(static_cast<Eigen::Index>(c.nodes()));
      for (const auto& [node, volts] : c.sources) {
        sources.push_back(node);
        phi[static_cast<Eigen::Index>(node)] = volts;
      }
      mc = mc_validate(affine_representation(RateMatrix::validate(implied), Vector::Zero(phi.size()),
                                             Vector::Zero(phi.size()), StateSet(sources),
                                             constant_terminal(phi)),
                       sol.potentials.u(), f.mc_paths, f.seed);
    }
    io::Table t = make_table(run,
                             {{"reference", "zero-bias diode resistance V_T/I_s"},
                              {"residual", sol.potentials.residual}},
                             {"node", "name", "potential", "net_current"});
    for (StateIndex x = 0; x < c.nodes(); ++x) {
      const auto i = static_cast<Eigen::Index>(x);
      t.rows.push_back({std::to_string(x), c.node_names[x], num(sol.potentials.u()[i]),
                        num(sol.kirchhoff_residual[i])});
    }
    if (mc) append_mc(t, *mc);
    run.write("app.csv", t);
    io::Table e = make_table(run, {}, {"edge", "from", "to", "kind", "current"});
    for (std::size_t k = 0; k < c.edges.size(); ++k) {
      const auto& edge = c.edges[k];
      e.rows.push_back({std::to_string(k), c.node_names[edge.from], c.node_names[edge.to],
                        std::holds_alternative<Resistor>(edge.component) ? "R" : "D",
                        num(sol.edge_currents[k])});
    }
    run.write("app_edges.csv", e);
  } else {
    throw Error(ErrorCode::ParseError, "--app must be control, paths, reliability or circuit");
  }
  return 0;
}

// --- truncation ------------------------------------------------------------

int cmd_truncation(Run& run, const fs::path& file, const std::vector<double>& horizons) {
  const io::ProblemFile pf = io::parse_problem(run.load(file));
  run.options()["horizons"] = horizons;
  const TruncationDiagnostics d = truncation_sequence(pf.problem, horizons);
  io::Table t = make_table(run, {{"fitted_exponent", d.fitted_exponent}},
                           {"n", "state", "y0", "gap"});
  for (std::size_t k = 0; k < d.horizons.size(); ++k) {
    for (StateIndex x = 0; x < pf.problem.size(); ++x) {
      const auto i = static_cast<Eigen::Index>(x);
      t.rows.push_back({num(d.horizons[k]), std::to_string(x), num(d.values_at_zero[k][i]),
                        k == 0 ? "" : num(d.gaps[k][i])});
    }
  }
  run.write("truncation.csv", t);
  return 0;
}

fs::path default_out_dir() {
  const char* env = std::getenv("STOPBSDE_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markovian BSDEs to hitting times: solvers, moments and applications"};
  app.set_version_flag("--version", STOPBSDE_VERSION);
  app.require_subcommand(1);
  std::string out_dir = default_out_dir().string();
  app.add_option("--out-dir", out_dir, "Directory for CSV outputs and the run manifest")
      ->capture_default_str();

  std::string file;
  auto* validate = app.add_subcommand("validate", "Check a chain or problem file");
  validate->add_option("file", file, "Chain or problem JSON")->required();

  SolveFlags sf;
  auto* solve = app.add_subcommand("solve", "Solve a problem file");
  solve->add_option("problem", file, "Problem JSON")->required();
  solve->add_option("--mode", sf.mode, "homogeneous or grid")
      ->check(CLI::IsMember({"homogeneous", "grid"}))
      ->capture_default_str();
  solve->add_option("--horizon", sf.horizon, "Grid horizon T")->capture_default_str();
  solve->add_option("--steps", sf.steps, "Grid steps (default: smallest stable count)");
  solve->add_option("--tol", sf.tol, "Residual tolerance")->capture_default_str();

  MomentFlags mf;
  auto* moments = app.add_subcommand("moments", "Exponential hitting-time moments");
  moments->add_option("chain", file, "Chain JSON")->required();
  moments->add_option("--target", mf.target, "Target states")->required()->delimiter(',');
  moments->add_option("--beta", mf.beta, "Exponent beta")->capture_default_str();
  moments->add_option("--gamma", mf.gamma, "Equivalence constant gamma")->capture_default_str();
  moments->add_flag("--worst-case", mf.worst_case, "Maximize over the gamma family");
  moments->add_option("--growth-beta", mf.growth, "Exponent of K(t) = k(1+t)^(1+beta)")
      ->capture_default_str();

  AppFlags af;
  auto* appc = app.add_subcommand("app", "Run an application solver");
  appc->add_option("file", file, "Application input")->required();
  appc->add_option("--app", af.app, "control, paths, reliability or circuit")
      ->required()
      ->check(CLI::IsMember({"control", "paths", "reliability", "circuit"}));
  appc->add_option("--mc-paths", af.mc_paths, "Monte Carlo paths per state (0 disables)");
  appc->add_option("--seed", af.seed, "Monte Carlo seed")->capture_default_str();

  std::vector<double> horizons{1, 2, 4, 8, 16};
  auto* trunc = app.add_subcommand("truncation", "Truncated-horizon convergence study");
  trunc->add_option("problem", file, "Problem JSON")->required();
  trunc->add_option("--horizons", horizons, "Increasing horizons")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  auto* sub = app.get_subcommands().front();
  Run run(sub->get_name(), out_dir);
  try {
    int rc = 0;
    if (sub == validate) {
      rc = cmd_validate(run, file);
    } else if (sub == solve) {
      rc = cmd_solve(run, file, sf);
    } else if (sub == moments) {
      rc = cmd_moments(run, file, mf);
    } else if (sub == appc) {
      rc = cmd_app(run, file, af);
    } else {
      rc = cmd_truncation(run, file, horizons);
    }
    run.finish(rc);
    return rc;
  } catch (const Error& e) {
    const int rc = is_input_error(e.code()) ? kExitInput : kExitNumerical;
    std::cerr << ordered_json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << '\n';
    run.finish(rc, to_string(e.code()), e.what());
    return rc;
  } catch (const std::exception& e) {
    std::cerr << ordered_json{{"error", "InputError"}, {"message", e.what()}}.dump() << '\n';
    run.finish(kExitInput, "InputError", e.what());
    return kExitInput;
  }
}
