#pragma once

#include <stdexcept>
#include <string>

namespace monoscene {

enum class Errc {
  DegenerateInput,
  BehindCamera,
  DimensionMismatch,
  DegenerateCluster,
  NoFocalSolution,
  CalibrationFailed,
  NoProposal,
  UnderConstrained,
  OutOfRange,
  EmptyMask,
  SingularConfiguration,
  CyclicGraph,
  ZeroNorm,
  EmptyLibrary,
  RayParallelToPlane,
  InfeasibleStart,
  MissingFile,
  SchemaViolation,
  InvariantViolation,
  IdMismatch,
  PlacementRejection,
  IoError,
};

const char* errc_name(Errc c);

/// Exception carrying a machine-checkable error code plus a human message.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace monoscene
