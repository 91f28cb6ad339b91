#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace tagx {

using NodeId = std::int64_t;
using NodeSet = std::set<NodeId>;

// Row-major so that one node's vector is contiguous.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent input data (dataset files, checkpoints, templates).
class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss or parameter.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Mean-pooled soft prompt has zero norm and cannot be normalized.
class DegeneratePromptError : public Error {
 public:
  DegeneratePromptError() : Error("degenerate soft prompt") {}
};

class BackendError : public Error {
 public:
  using Error::Error;
};

/// Failure inside the explanation pipeline, tagged with the stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace tagx
