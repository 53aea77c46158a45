#pragma once

#include <stdexcept>
#include <string>

namespace cinediff {

/// Base of every error the library throws. `kind()` is a stable machine-readable tag
/// used by the CLI's JSON error output.
class Error : public std::runtime_error
{
public:
  Error(std::string kind, std::string const &what)
    : std::runtime_error(what)
    , kind_(std::move(kind))
  {
  }

  std::string const &kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

struct ParameterError : Error
{
  explicit ParameterError(std::string const &what)
    : Error("parameter", what)
  {
  }
};

struct DataError : Error
{
  explicit DataError(std::string const &what)
    : Error("data", what)
  {
  }
};

struct NormalizationError : Error
{
  explicit NormalizationError(std::string const &what)
    : Error("normalization", what)
  {
  }
};

struct DegenerateTestError : Error
{
  explicit DegenerateTestError(std::string const &what)
    : Error("degenerate-test", what)
  {
  }
};

struct IoError : Error
{
  explicit IoError(std::string const &what)
    : Error("io", what)
  {
  }
};

class TrainingDivergence : public Error
{
public:
  TrainingDivergence(long step, std::string const &what)
    : Error("training-divergence", what + " (step " + std::to_string(step) + ")")
    , step_(step)
  {
  }
  long step() const noexcept { return step_; }

private:
  long step_;
};

class SamplingDivergence : public Error
{
public:
  SamplingDivergence(int t, std::string const &what)
    : Error("sampling-divergence", what + " (t = " + std::to_string(t) + ")")
    , t_(t)
  {
  }
  int t() const noexcept { return t_; }

private:
  int t_;
};

inline void require(bool cond, std::string const &what)
{
  if (!cond) { throw ParameterError(what); }
}

} // namespace cinediff
