#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qmiest {

enum class Errc {
  RankDeficient,
  InconsistentInverse,
  NotPsd,
  NotPositiveDefinite,
  NotSymmetric,
  DimensionMismatch,
  Singular,
  SingularWeight,
  WrongInertia,
  NegativeMultiplier,
  NonPositiveEpsilon,
  HeterogeneousSamples,
  Infeasible,
  SolverFailure,
  SolverUnavailable,
  MalformedProblem,
  Unstable,
  Unbounded,
  InvalidArgument,
  Io,
  Parse,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::InconsistentInverse: return "InconsistentInverse";
    case Errc::NotPsd: return "NotPsd";
    case Errc::NotPositiveDefinite: return "NotPositiveDefinite";
    case Errc::NotSymmetric: return "NotSymmetric";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::Singular: return "Singular";
    case Errc::SingularWeight: return "SingularWeight";
    case Errc::WrongInertia: return "WrongInertia";
    case Errc::NegativeMultiplier: return "NegativeMultiplier";
    case Errc::NonPositiveEpsilon: return "NonPositiveEpsilon";
    case Errc::HeterogeneousSamples: return "HeterogeneousSamples";
    case Errc::Infeasible: return "Infeasible";
    case Errc::SolverFailure: return "SolverFailure";
    case Errc::SolverUnavailable: return "SolverUnavailable";
    case Errc::MalformedProblem: return "MalformedProblem";
    case Errc::Unstable: return "Unstable";
    case Errc::Unbounded: return "Unbounded";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
    case Errc::Parse: return "Parse";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this exception; code() tells the
// caller which contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace qmiest
