#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace pmr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rot6 = Eigen::Matrix<double, 6, 1>;

namespace motion {

/// Gram-Schmidt of the two stacked 3-vectors; the third column is their
/// cross product. Throws DegenerateRotation on zero or parallel inputs.
Mat3 rot6d_to_matrix(const Rot6& r);

/// Reverse-mode derivative of rot6d_to_matrix: given dL/dR, returns dL/dr.
Rot6 rot6d_to_matrix_backward(const Rot6& r, const Mat3& grad_matrix);

/// First two columns of R. Throws ValidationError unless R is a proper
/// rotation within 1e-6.
Rot6 matrix_to_rot6d(const Mat3& R);

Rot6 identity_rot6d();

/// Rotation vector (axis * angle) -> matrix.
Mat3 exp_so3(const Vec3& w);

/// Matrix -> rotation vector with norm in [0, pi].
Vec3 log_so3(const Mat3& R);

/// Geodesic angle of a^T b, in [0, pi].
double geodesic_angle(const Mat3& a, const Mat3& b);

/// Geodesic angle between two 6D rotations.
double rotation_difference(const Rot6& a, const Rot6& b);

Mat3 skew(const Vec3& v);

bool is_rotation(const Mat3& R, double tol);

}  // namespace motion
}  // namespace pmr
