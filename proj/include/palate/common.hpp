#ifndef PALATE_COMMON_HPP
#define PALATE_COMMON_HPP

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace palate {

using Index = Eigen::Index;

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Points3 = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

using Vector3d = Vec3<double>;
using Matrix3d = Mat3<double>;
using Matrix3Xd = Points3<double>;
using Matrix3Xi = Eigen::Matrix<int, 3, Eigen::Dynamic>;

/// Every failure in the library surfaces as this exception; what() is a
/// single line suitable for machine parsing.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

}  // namespace palate

#endif  // PALATE_COMMON_HPP
