#include "stopbsde/common.hpp"

#include <algorithm>

namespace stopbsde {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NegativeOffDiagonal: return "NegativeOffDiagonal";
    case ErrorCode::ColumnSumNonzero: return "ColumnSumNonzero";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotSquare: return "NotSquare";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::StateOutOfRange: return "StateOutOfRange";
    case ErrorCode::AbsorbedOutsideTarget: return "AbsorbedOutsideTarget";
    case ErrorCode::EmptyTarget: return "EmptyTarget";
    case ErrorCode::UnreachableTarget: return "UnreachableTarget";
    case ErrorCode::InconsistentGrowth: return "InconsistentGrowth";
    case ErrorCode::EmptyControlSet: return "EmptyControlSet";
    case ErrorCode::NotGammaRelated: return "NotGammaRelated";
    case ErrorCode::NotCertified: return "NotCertified";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DriverTimeDependent: return "DriverTimeDependent";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NoFiniteExponent: return "NoFiniteExponent";
    case ErrorCode::PolicyValueMismatch: return "PolicyValueMismatch";
    case ErrorCode::DisconnectedNode: return "DisconnectedNode";
    case ErrorCode::InvalidComponent: return "InvalidComponent";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

bool is_input_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::NoConvergence:
    case ErrorCode::StepTooLarge:
    case ErrorCode::NonFiniteState:
    case ErrorCode::SingularSystem:
    case ErrorCode::NoFiniteExponent:
    case ErrorCode::PolicyValueMismatch:
    case ErrorCode::NotCertified:
      return false;
    default:
      return true;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

StateSet::StateSet(std::initializer_list<StateIndex> states)
    : StateSet(std::vector<StateIndex>(states)) {}

StateSet::StateSet(std::vector<StateIndex> states) : states_(std::move(states)) {
  std::sort(states_.begin(), states_.end());
  states_.erase(std::unique(states_.begin(), states_.end()), states_.end());
}

bool StateSet::contains(StateIndex x) const {
  return std::binary_search(states_.begin(), states_.end(), x);
}

std::vector<bool> StateSet::mask(std::size_t n) const {
  std::vector<bool> m(n, false);
  for (StateIndex x : states_) {
    if (x >= n) throw Error(ErrorCode::StateOutOfRange, "state " + std::to_string(x) + " >= " + std::to_string(n));
    m[x] = true;
  }
  return m;
}

StateSet StateSet::united(const StateSet& other) const {
  std::vector<StateIndex> all = states_;
  all.insert(all.end(), other.states_.begin(), other.states_.end());
  return StateSet(std::move(all));
}

}  // namespace stopbsde
