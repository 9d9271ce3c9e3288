#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace knnproc {

// A non-finite value showed up where the estimator needs a real number.
// Carries the sample index that produced it when known.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::ptrdiff_t index = -1)
      : std::runtime_error(what), index_(index) {}
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

// Fixed-bandwidth ball with no sample points in it: the estimator is 0/0.
class EmptyBallError : public std::runtime_error {
 public:
  explicit EmptyBallError(const std::string& what) : std::runtime_error(what) {}
};

// Requested a quantity that the given model/functional does not provide.
class UnsupportedError : public std::runtime_error {
 public:
  explicit UnsupportedError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace knnproc
