#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ditracker {

using Index = Eigen::Index;

/// Row-major dynamic matrix. Feature maps are stored as (frames * height * width) x channels.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Raised when a file or directory cannot be read or written. The message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an operation is invoked before its required inputs exist.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

/// Spatial layout of a stack of per-frame feature maps.
struct GridShape {
  Index frames = 1;
  Index height = 1;
  Index width = 1;

  Index cells() const { return height * width; }
  Index rows() const { return frames * height * width; }
  Index row(Index f, Index y, Index x) const { return (f * height + y) * width + x; }
  bool operator==(const GridShape&) const = default;
};

}  // namespace ditracker
