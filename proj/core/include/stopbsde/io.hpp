#pragma once

#include "stopbsde/apps.hpp"
#include "stopbsde/chain.hpp"
#include "stopbsde/drivers.hpp"
#include "stopbsde/solver.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// File formats. Every loader throws Error(ParseError) on malformed text and
// the domain error codes on well-formed but invalid content.
namespace stopbsde::io {

std::string read_file(const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

/// CSV with a single `# {...}` metadata line ahead of the column header.
struct Table {
  std::string metadata;  // compact JSON object, no newlines
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
  double number(std::size_t row, std::string_view name) const;
};

void write_table(std::ostream& os, const Table& table);
Table read_table(std::istream& is);

/// Chain document: {"n": 2, "rates": [[-1, 2], [1, -2]], "state_names": [...]}.
/// rates[j][i] is the rate from i to j, so every column sums to zero.
struct RawChain {
  Matrix rates;
  std::vector<std::string> names;
};

RawChain parse_chain(std::string_view text);

/// True when the document carries a "chain" member (a problem or app file).
bool has_embedded_chain(std::string_view text);

/// Problem document: chain, target, terminal, driver, optional constants.
struct ProblemFile {
  RawChain chain;
  HittingProblem problem;
  Vector terminal;
  std::optional<Vector> terminal_slope;  // φ(t, x) = terminal + slope t
  std::string driver_kind;
};

ProblemFile parse_problem(std::string_view text);

struct ControlFile {
  RawChain chain;
  ControlSet controls;
  StateSet target;
  Vector terminal;
};

ControlFile parse_control(std::string_view text);

struct GraphFile {
  GraphSpec graph;
  std::vector<std::string> names;
};

GraphFile parse_graph(std::string_view text);

struct ReliabilityFile {
  RawChain chain;
  RateMatrix rates;
  Vector loss;
  StateSet dead;
  StateIndex target = 0;
  std::optional<ControlSet> controls;
};

ReliabilityFile parse_reliability(std::string_view text);

/// Value with an optional SPICE magnitude suffix (f p n u m k meg g t).
double parse_spice_number(std::string_view token);

/// Netlist lines: `R a b ohms`, `D a b Is Vt` (conducting a→b), `V node volts`,
/// optional `N name...` declaring node order; `*` or `#` start a comment.
CircuitSpec parse_netlist(std::string_view text);

}  // namespace stopbsde::io
