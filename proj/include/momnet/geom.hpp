// 3-vector and rotation helpers shared by every module. All arithmetic is
// double precision; conservation checks downstream sit near machine epsilon.
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

namespace momnet {

using Vec3 = Eigen::Vector3d;
using Rotation = Eigen::Matrix3d;

// Default threshold for treating a vector as numerically zero, in
// normalized-feature units.
inline constexpr double kNormEps = 1e-9;

inline Vec3 cross(const Vec3& u, const Vec3& v) { return u.cross(v); }

// u / |u| when |u| >= eps, else the zero vector. Second member flags the
// degenerate branch.
std::pair<Vec3, bool> normalize_safe(const Vec3& u, double eps = kNormEps);

// (a . u) a for unit (or zero) a.
inline Vec3 project_parallel(const Vec3& u, const Vec3& a) {
  return a.dot(u) * a;
}

// Uniformly distributed proper rotation, deterministic per seed.
Rotation random_rotation(std::uint64_t seed);

}  // namespace momnet
