#include "vloc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vloc/error.hpp"

namespace vloc {

namespace {

void require_unit(const Quat& q, const char* op) {
  const double n = quat_norm(q);
  if (std::abs(n - 1.0) > kUnitTolerance) {
    throw GeometryError(std::string(op) + ": quaternion is not unit (norm " + std::to_string(n) + ")");
  }
}

Quat hamilton(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

}  // namespace

double quat_norm(const Quat& q) { return std::sqrt(quat_dot(q, q)); }

double quat_dot(const Quat& a, const Quat& b) { return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z; }

Quat quat_normalize(const Quat& q) {
  const double n = quat_norm(q);
  if (!(n > kDegenerateQuatNorm)) throw GeometryError("quat_normalize: degenerate quaternion (norm ~ 0)");
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quat quat_canonical(const Quat& q) {
  if (q.w < 0.0) return {-q.w, -q.x, -q.y, -q.z};
  return q;
}

Quat quat_conjugate(const Quat& q) { return {q.w, -q.x, -q.y, -q.z}; }

Quat quat_mul(const Quat& a, const Quat& b) {
  require_unit(a, "quat_mul");
  require_unit(b, "quat_mul");
  return quat_normalize(hamilton(a, b));
}

Quat quat_inverse(const Quat& q) {
  require_unit(q, "quat_inverse");
  return quat_conjugate(q);
}

Quat quat_from_axis_angle(const Vec3& axis, double angle_rad) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(n > 0.0)) return {};
  const double s = std::sin(0.5 * angle_rad) / n;
  return quat_normalize({std::cos(0.5 * angle_rad), axis[0] * s, axis[1] * s, axis[2] * s});
}

Mat3 quat_to_rotation(const Quat& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Quat rotation_to_quat(const Mat3& r) {
  const double trace = r[0][0] + r[1][1] + r[2][2];
  Quat q;
  if (trace >= r[0][0] && trace >= r[1][1] && trace >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q = {0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s};
  } else if (r[0][0] >= r[1][1] && r[0][0] >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[0][0] - r[1][1] - r[2][2]);
    q = {(r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s};
  } else if (r[1][1] >= r[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + r[1][1] - r[0][0] - r[2][2]);
    q = {(r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + r[2][2] - r[0][0] - r[1][1]);
    q = {(r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s};
  }
  return quat_canonical(quat_normalize(q));
}

RelativeMotion relative_motion(const Pose& current, const Pose& previous) {
  RelativeMotion m;
  for (int i = 0; i < 3; ++i) m.x_rel[i] = current.x[i] - previous.x[i];
  m.q_rel = quat_mul(quat_inverse(previous.q), current.q);
  return m;
}

Pose compose(const Pose& previous, const RelativeMotion& motion) {
  Pose p;
  for (int i = 0; i < 3; ++i) p.x[i] = previous.x[i] + motion.x_rel[i];
  p.q = quat_mul(previous.q, motion.q_rel);
  return p;
}

double angular_distance(const Quat& a, const Quat& b) {
  require_unit(a, "angular_distance");
  require_unit(b, "angular_distance");
  // 2 acos|<a,b>| written as 4 atan2(|a - sb|, |a + sb|), s = sign<a,b>;
  // acos loses half the digits near identical rotations.
  const double s = quat_dot(a, b) < 0.0 ? -1.0 : 1.0;
  const double dw = a.w - s * b.w, dx = a.x - s * b.x, dy = a.y - s * b.y, dz = a.z - s * b.z;
  const double pw = a.w + s * b.w, px = a.x + s * b.x, py = a.y + s * b.y, pz = a.z + s * b.z;
  const double minus = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  const double plus = std::sqrt(pw * pw + px * px + py * py + pz * pz);
  return 4.0 * std::atan2(minus, plus) * 180.0 / std::numbers::pi;
}

double translation_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Pose matrix_to_pose(const Mat4& m) {
  const double bottom = std::abs(m[3][0]) + std::abs(m[3][1]) + std::abs(m[3][2]) + std::abs(m[3][3] - 1.0);
  if (bottom > 1e-9) {
    throw GeometryError("matrix_to_pose: bottom row is not (0,0,0,1), deviation " + std::to_string(bottom));
  }
  Mat3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m[i][j];

  double deviation = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[k][i] * r[k][j];
      deviation = std::max(deviation, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  if (deviation > 1e-4) {
    throw GeometryError("matrix_to_pose: rotation block not orthonormal, max |R^T R - I| = " +
                        std::to_string(deviation));
  }
  const double det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
                     r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
                     r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
  if (det < 0.0) throw GeometryError("matrix_to_pose: rotation determinant is " + std::to_string(det));

  Pose p;
  p.x = {m[0][3], m[1][3], m[2][3]};
  p.q = rotation_to_quat(r);
  return p;
}

Mat4 pose_to_matrix(const Pose& p) {
  const Mat3 r = quat_to_rotation(quat_normalize(p.q));
  Mat4 m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[i][j] = r[i][j];
    m[i][3] = p.x[i];
  }
  m[3] = {0.0, 0.0, 0.0, 1.0};
  return m;
}

}  // namespace vloc
