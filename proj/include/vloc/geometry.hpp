#ifndef VLOC_GEOMETRY_HPP_
#define VLOC_GEOMETRY_HPP_

#include <array>

namespace vloc {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;
using Mat4 = std::array<std::array<double, 4>, 4>;

/// Quaternion in (w, x, y, z) order.
struct Quat {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const Quat&, const Quat&) = default;
};

/// Global 6-DoF camera pose: translation in meters plus unit quaternion.
struct Pose {
  Vec3 x{0.0, 0.0, 0.0};
  Quat q{};

  friend bool operator==(const Pose&, const Pose&) = default;
};

/// Inter-frame motion: x_rel = x_t - x_prev, q_rel = q_prev^-1 q_t.
struct RelativeMotion {
  Vec3 x_rel{0.0, 0.0, 0.0};
  Quat q_rel{};

  friend bool operator==(const RelativeMotion&, const RelativeMotion&) = default;
};

inline constexpr double kDegenerateQuatNorm = 1e-12;
inline constexpr double kUnitTolerance = 1e-6;

double quat_norm(const Quat& q);
double quat_dot(const Quat& a, const Quat& b);

/// Throws GeometryError when ||q|| <= 1e-12.
Quat quat_normalize(const Quat& q);
/// Flips the sign so that w >= 0 (same rotation).
Quat quat_canonical(const Quat& q);
Quat quat_conjugate(const Quat& q);

/// Hamilton product of unit quaternions, renormalized.
Quat quat_mul(const Quat& a, const Quat& b);
/// Inverse of a unit quaternion (its conjugate).
Quat quat_inverse(const Quat& q);

Quat quat_from_axis_angle(const Vec3& axis, double angle_rad);
Mat3 quat_to_rotation(const Quat& q);
/// Largest-diagonal branch selection; result has w >= 0.
Quat rotation_to_quat(const Mat3& r);

RelativeMotion relative_motion(const Pose& current, const Pose& previous);
Pose compose(const Pose& previous, const RelativeMotion& motion);

/// Geodesic angle 2*acos(min(1, |<q1,q2>|)) in degrees, in [0, 180].
double angular_distance(const Quat& a, const Quat& b);
double translation_distance(const Vec3& a, const Vec3& b);

/// Throws GeometryError with the measured deviation when the rotation block
/// is not orthonormal within 1e-4, has negative determinant, or the bottom
/// row is not (0,0,0,1).
Pose matrix_to_pose(const Mat4& m);
Mat4 pose_to_matrix(const Pose& p);

}  // namespace vloc

#endif  // VLOC_GEOMETRY_HPP_
