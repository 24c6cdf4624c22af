#ifndef SDLT_TYPES_HPP
#define SDLT_TYPES_HPP

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sdlt {

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Vector = VectorT<double>;

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Matrix = MatrixT<double>;

// Bit i-1 of a PatternBits value is the entry at position i of the lineage tuple.
using PatternBits = std::uint32_t;

// Hard cap on the number of lineages a pattern vector may span.  A dense vector
// over 2^24 patterns is 128 MiB, and the integrator holds about nine of them.
inline constexpr int kMaxLineages = 24;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at offset " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, double time_reached)
      : Error(what + " (time reached " + std::to_string(time_reached) + ")"),
        time_reached_(time_reached) {}
  double time_reached() const { return time_reached_; }

 private:
  double time_reached_;
};

// Estimated resident memory in bytes for likelihood evaluation on `lineages` lineages.
inline double pattern_memory_estimate(int lineages) {
  // Nine working vectors in the integrator plus checkpoints (a geometric series, < 2 vectors).
  return 11.0 * 8.0 * static_cast<double>(std::uint64_t{1} << lineages);
}

}  // namespace sdlt

#endif  // SDLT_TYPES_HPP
