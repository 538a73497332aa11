#ifndef ISAC_COMMON_HPP
#define ISAC_COMMON_HPP

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace isac {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

/// All randomness flows through explicitly passed engines of this type.
using Rng = std::mt19937_64;

/// Bad dimensions, invalid hyperparameters, unknown config keys.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values produced during simulation or training.
class NumericalFault : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived> &x) {
  return x.allFinite();
}

} // namespace isac

#endif
