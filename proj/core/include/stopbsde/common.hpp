#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace stopbsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Index of a chain state, i.e. the basis vector e_i.
using StateIndex = std::size_t;

enum class ErrorCode {
  NegativeOffDiagonal,
  ColumnSumNonzero,
  NonFinite,
  NotSquare,
  DimensionMismatch,
  StateOutOfRange,
  AbsorbedOutsideTarget,
  EmptyTarget,
  UnreachableTarget,
  InconsistentGrowth,
  EmptyControlSet,
  NotGammaRelated,
  NotCertified,
  NoConvergence,
  DriverTimeDependent,
  StepTooLarge,
  NonFiniteState,
  SingularSystem,
  NoFiniteExponent,
  PolicyValueMismatch,
  DisconnectedNode,
  InvalidComponent,
  ParseError,
};

const char* to_string(ErrorCode code);

/// True for codes caused by malformed or inadmissible input, false for
/// failures of a numerical method on admissible input.
bool is_input_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Sorted, duplicate-free set of states (the target set Ξ, dead nodes, ...).
class StateSet {
 public:
  StateSet() = default;
  StateSet(std::initializer_list<StateIndex> states);
  explicit StateSet(std::vector<StateIndex> states);

  bool contains(StateIndex x) const;
  bool empty() const noexcept { return states_.empty(); }
  std::size_t size() const noexcept { return states_.size(); }
  StateIndex max() const { return states_.back(); }

  /// Membership mask of length n.
  std::vector<bool> mask(std::size_t n) const;

  StateSet united(const StateSet& other) const;

  auto begin() const noexcept { return states_.begin(); }
  auto end() const noexcept { return states_.end(); }
  const std::vector<StateIndex>& states() const noexcept { return states_; }

 private:
  std::vector<StateIndex> states_;
};

}  // namespace stopbsde
