#include "stopbsde/io.hpp"

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace stopbsde::io {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& what) { throw Error(ErrorCode::ParseError, what); }

json parse_json(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    parse_fail(std::string("malformed JSON: ") + e.what());
  }
}

const json& member(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) parse_fail(std::string("missing field '") + key + "'");
  return obj.at(key);
}

double number_of(const json& v, const std::string& where) {
  if (!v.is_number()) parse_fail(where + " must be a number");
  return v.get<double>();
}

std::size_t index_of(const json& v, const std::string& where) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    parse_fail(where + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

Vector vector_of(const json& v, std::size_t n, const std::string& where) {
  if (!v.is_array() || v.size() != n) {
    parse_fail(where + " must be an array of " + std::to_string(n) + " numbers");
  }
  Vector out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    out[static_cast<Eigen::Index>(i)] = number_of(v[i], where);
  }
  return out;
}

Vector optional_vector(const json& obj, const char* key, std::size_t n) {
  if (!obj.contains(key)) return Vector::Zero(static_cast<Eigen::Index>(n));
  return vector_of(obj.at(key), n, key);
}

Matrix matrix_of(const json& v, std::size_t n, const std::string& where) {
  if (!v.is_array() || v.size() != n) {
    parse_fail(where + " must be an " + std::to_string(n) + "x" + std::to_string(n) + " array");
  }
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const Vector row = vector_of(v[r], n, where + " row");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

StateSet states_of(const json& v, const std::string& where) {
  std::vector<StateIndex> s;
  if (v.is_number_integer()) {
    s.push_back(index_of(v, where));
  } else if (v.is_array()) {
    for (const auto& e : v) s.push_back(index_of(e, where));
  } else {
    parse_fail(where + " must be a state index or a list of them");
  }
  return StateSet(std::move(s));
}

RawChain chain_of(const json& doc) {
  RawChain out;
  const json& rates = member(doc, "rates");
  if (!rates.is_array()) parse_fail("rates must be an array of rows");
  const std::size_t n = doc.contains("n") ? index_of(doc.at("n"), "n") : rates.size();
  if (n == 0) parse_fail("chain must have at least one state");
  out.rates = matrix_of(rates, n, "rates");
  if (doc.contains("state_names")) {
    const json& names = doc.at("state_names");
    if (!names.is_array() || names.size() != n) parse_fail("state_names needs one entry per state");
    for (const auto& nm : names) {
      if (!nm.is_string()) parse_fail("state_names entries must be strings");
      out.names.push_back(nm.get<std::string>());
    }
  }
  return out;
}

ControlSet controls_of(const json& list, const RateMatrix& reference, const StateSet& absorbed) {
  if (!list.is_array() || list.empty()) {
    throw Error(ErrorCode::EmptyControlSet, "controls must be a non-empty array");
  }
  const std::size_t n = reference.size();
  const auto k = static_cast<Eigen::Index>(list.size());
  std::vector<std::string> labels;
  std::vector<RateMatrix> matrices;
  Matrix running = Matrix::Zero(k, static_cast<Eigen::Index>(n));
  Matrix discount = Matrix::Zero(k, static_cast<Eigen::Index>(n));
  for (Eigen::Index u = 0; u < k; ++u) {
    const json& c = list[static_cast<std::size_t>(u)];
    if (!c.is_object()) parse_fail("each control must be an object");
    labels.push_back(c.contains("label") && c.at("label").is_string()
                         ? c.at("label").get<std::string>()
                         : "u" + std::to_string(u));
    matrices.push_back(validate_rate_matrix(matrix_of(member(c, "rates"), n, "control rates")));
    running.row(u) = optional_vector(c, "running", n).transpose();
    discount.row(u) = optional_vector(c, "discount", n).transpose();
  }
  return ControlSet::from_tables(reference, std::move(labels), std::move(matrices),
                                 std::move(running), std::move(discount), absorbed);
}

StateSet checked_states(const json& v, std::size_t n, const std::string& where) {
  StateSet s = states_of(v, where);
  if (!s.empty()) (void)s.mask(n);
  return s;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c] == name) return c;
  }
  throw Error(ErrorCode::ParseError, "no column named " + std::string(name));
}

double Table::number(std::size_t row, std::string_view name) const {
  const std::string& cell = rows.at(row).at(column(name));
  if (cell == "inf") return std::numeric_limits<double>::infinity();
  if (cell == "-inf") return -std::numeric_limits<double>::infinity();
  if (cell == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
    throw Error(ErrorCode::ParseError, "not a number: " + cell);
  }
  return v;
}

namespace {

void write_cell(std::ostream& os, const std::string& cell) {
  if (cell.find_first_of(",\"\n") == std::string::npos) {
    os << cell;
    return;
  }
  os << '"';
  for (char ch : cell) {
    if (ch == '"') os << '"';
    os << (ch == '\n' ? ' ' : ch);
  }
  os << '"';
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cells.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.emplace_back();
    } else {
      cells.back() += ch;
    }
  }
  if (quoted) throw Error(ErrorCode::ParseError, "unterminated quoted cell");
  return cells;
}

}  // namespace

void write_table(std::ostream& os, const Table& table) {
  os << "# " << table.metadata << '\n';
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    if (c) os << ',';
    write_cell(os, table.columns[c]);
  }
  os << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) os << ',';
      write_cell(os, row[c]);
    }
    os << '\n';
  }
}

Table read_table(std::istream& is) {
  Table t;
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) {
    throw Error(ErrorCode::ParseError, "missing metadata line");
  }
  t.metadata = line.substr(2);
  (void)parse_json(t.metadata);
  const auto split = split_cells;
  if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "missing column header");
  t.columns = split(line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) {
      throw Error(ErrorCode::ParseError, "row width differs from header");
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

RawChain parse_chain(std::string_view text) {
  const json doc = parse_json(text);
  return chain_of(doc.contains("chain") ? doc.at("chain") : doc);
}

bool has_embedded_chain(std::string_view text) {
  const json doc = parse_json(text);
  return doc.is_object() && doc.contains("chain");
}

ProblemFile parse_problem(std::string_view text) {
  const json doc = parse_json(text);
  RawChain raw = chain_of(member(doc, "chain"));
  const RateMatrix a = validate_rate_matrix(raw.rates);
  const std::size_t n = a.size();
  StateSet target = checked_states(member(doc, "target"), n, "target");
  Vector terminal = vector_of(member(doc, "terminal"), n, "terminal");
  std::optional<Vector> slope;
  if (doc.contains("terminal_slope")) slope = vector_of(doc.at("terminal_slope"), n, "terminal_slope");

  const json& d = member(doc, "driver");
  const std::string type = member(d, "type").is_string() ? d.at("type").get<std::string>() : "";
  MarkovianDriver driver;
  if (type == "zero") {
    driver = zero_driver();
  } else if (type == "affine") {
    AffineDriverSpec spec;
    spec.coefficients = d.contains("coefficients")
                            ? matrix_of(d.at("coefficients"), n, "coefficients")
                            : Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    spec.offset = optional_vector(d, "offset", n);
    spec.discount = optional_vector(d, "discount", n);
    driver = affine_driver(spec);
  } else if (type == "measure_change") {
    const RateMatrix b = validate_rate_matrix(matrix_of(member(d, "rates"), n, "rates"));
    driver = affine_driver(
        measure_change_spec(a, b, optional_vector(d, "offset", n), optional_vector(d, "discount", n)));
  } else if (type == "hamiltonian") {
    const std::string mode = d.contains("mode") ? d.at("mode").get<std::string>() : "inf";
    if (mode != "inf" && mode != "sup") parse_fail("hamiltonian mode must be inf or sup");
    const ControlSet cs = controls_of(member(d, "controls"), a, target);
    driver = mode == "inf" ? hamiltonian_inf(cs, a) : hamiltonian_sup(cs, a);
  } else if (type == "reliability") {
    AffineDriverSpec loss{Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)),
                          Vector::Zero(static_cast<Eigen::Index>(n)),
                          vector_of(member(d, "loss"), n, "loss")};
    driver = affine_driver(loss);
    if (d.contains("controls")) {
      driver = sum_drivers(driver, hamiltonian_sup(controls_of(d.at("controls"), a, target), a));
    }
  } else {
    parse_fail("unknown driver type '" + type + "'");
  }

  GrowthConstants constants;
  constants.c = driver.traits().c;
  if (doc.contains("constants")) {
    const json& c = doc.at("constants");
    if (c.contains("c")) constants.c = number_of(c.at("c"), "c");
    if (c.contains("beta")) constants.beta = number_of(c.at("beta"), "beta");
    if (c.contains("beta_hat")) constants.beta_hat = number_of(c.at("beta_hat"), "beta_hat");
    if (c.contains("beta_tilde")) constants.beta_tilde = number_of(c.at("beta_tilde"), "beta_tilde");
    if (c.contains("k")) constants.k = number_of(c.at("k"), "k");
  }

  TerminalFn phi;
  if (slope) {
    phi = [terminal, s = *slope](double t, StateIndex x) {
      const auto i = static_cast<Eigen::Index>(x);
      return terminal[i] + s[i] * t;
    };
  } else {
    phi = constant_terminal(terminal);
  }
  const std::string kind = driver.traits().kind;
  HittingProblem problem(a, std::move(target), std::move(phi), std::move(driver), constants,
                         slope.has_value());
  return ProblemFile{std::move(raw), std::move(problem), std::move(terminal), std::move(slope), kind};
}

ControlFile parse_control(std::string_view text) {
  const json doc = parse_json(text);
  RawChain raw = chain_of(member(doc, "chain"));
  const RateMatrix a = validate_rate_matrix(raw.rates);
  const std::size_t n = a.size();
  StateSet target = checked_states(member(doc, "target"), n, "target");
  Vector terminal = doc.contains("terminal") ? vector_of(doc.at("terminal"), n, "terminal")
                                             : Vector::Zero(static_cast<Eigen::Index>(n));
  ControlSet cs = controls_of(member(doc, "controls"), a, target);
  return ControlFile{std::move(raw), std::move(cs), std::move(target), std::move(terminal)};
}

GraphFile parse_graph(std::string_view text) {
  const json doc = parse_json(text);
  GraphFile out;
  const json& nodes = member(doc, "nodes");
  if (nodes.is_array()) {
    for (const auto& nm : nodes) {
      if (!nm.is_string()) parse_fail("node names must be strings");
      out.names.push_back(nm.get<std::string>());
    }
    out.graph.nodes = out.names.size();
  } else {
    out.graph.nodes = index_of(nodes, "nodes");
  }
  auto node_ref = [&](const json& v) -> StateIndex {
    if (v.is_string()) {
      for (std::size_t i = 0; i < out.names.size(); ++i) {
        if (out.names[i] == v.get<std::string>()) return i;
      }
      parse_fail("unknown node '" + v.get<std::string>() + "'");
    }
    return index_of(v, "node");
  };
  const json& edges = member(doc, "edges");
  if (!edges.is_array()) parse_fail("edges must be an array");
  for (const auto& e : edges) {
    if (!e.is_array() || e.size() != 3) parse_fail("each edge is [from, to, distance]");
    out.graph.edges.push_back({node_ref(e[0]), node_ref(e[1]), number_of(e[2], "distance")});
  }
  out.graph.target = node_ref(member(doc, "target"));
  if (doc.contains("speedups")) {
    for (const auto& s : doc.at("speedups")) out.graph.speedups.push_back(number_of(s, "speedup"));
  }
  return out;
}

ReliabilityFile parse_reliability(std::string_view text) {
  const json doc = parse_json(text);
  RawChain raw = chain_of(member(doc, "chain"));
  RateMatrix a = validate_rate_matrix(raw.rates);
  const std::size_t n = a.size();
  Vector loss = vector_of(member(doc, "loss"), n, "loss");
  StateSet dead = doc.contains("dead") ? checked_states(doc.at("dead"), n, "dead") : StateSet{};
  const StateIndex target = index_of(member(doc, "target"), "target");
  if (target >= n) throw Error(ErrorCode::StateOutOfRange, "target node out of range");
  std::optional<ControlSet> controls;
  if (doc.contains("controls")) {
    controls = controls_of(doc.at("controls"), a, dead.united(StateSet({target})));
  }
  return ReliabilityFile{std::move(raw), std::move(a), std::move(loss), std::move(dead), target,
                         std::move(controls)};
}

double parse_spice_number(std::string_view token) {
  std::string s(token);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr == s.data()) parse_fail("not a number: " + s);
  std::string suffix(res.ptr, static_cast<const char*>(s.data() + s.size()));
  for (auto& ch : suffix) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  static const std::map<std::string, double, std::less<>> scale{
      {"", 1.0},     {"f", 1e-15}, {"p", 1e-12}, {"n", 1e-9}, {"u", 1e-6},
      {"m", 1e-3},   {"k", 1e3},   {"meg", 1e6}, {"g", 1e9},  {"t", 1e12}};
  const auto it = scale.find(suffix);
  if (it == scale.end()) parse_fail("unknown magnitude suffix in " + s);
  return v * it->second;
}

CircuitSpec parse_netlist(std::string_view text) {
  CircuitSpec c;
  std::map<std::string, StateIndex> ids;
  auto node = [&](const std::string& name) {
    const auto it = ids.find(name);
    if (it != ids.end()) return it->second;
    const StateIndex id = c.node_names.size();
    ids.emplace(name, id);
    c.node_names.push_back(name);
    return id;
  };
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#*");
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    const char kind = static_cast<char>(std::toupper(static_cast<unsigned char>(tok[0][0])));
    if (tok[0].size() != 1) parse_fail(where + ": unknown record '" + tok[0] + "'");
    switch (kind) {
      case 'N':
        for (std::size_t i = 1; i < tok.size(); ++i) node(tok[i]);
        break;
      case 'R':
        if (tok.size() != 4) parse_fail(where + ": expected R a b ohms");
        c.edges.push_back({node(tok[1]), node(tok[2]), Resistor{parse_spice_number(tok[3])}});
        break;
      case 'D':
        if (tok.size() != 5) parse_fail(where + ": expected D a b Is Vt");
        c.edges.push_back({node(tok[1]), node(tok[2]),
                           Diode{parse_spice_number(tok[3]), parse_spice_number(tok[4])}});
        break;
      case 'V': {
        if (tok.size() != 3) parse_fail(where + ": expected V node volts");
        const StateIndex x = node(tok[1]);
        if (c.sources.count(x)) parse_fail(where + ": node " + tok[1] + " already has a source");
        c.sources[x] = parse_spice_number(tok[2]);
        break;
      }
      default:
        parse_fail(where + ": unknown record '" + tok[0] + "'");
    }
  }
  validate_circuit(c);
  return c;
}

}  // namespace stopbsde::io
