#include "momnet/geom.hpp"

#include "momnet/rng.hpp"

namespace momnet {

std::pair<Vec3, bool> normalize_safe(const Vec3& u, double eps) {
  const double n = u.norm();
  if (n >= eps) return {Vec3(u / n), false};
  return {Vec3::Zero(), true};
}

Rotation random_rotation(std::uint64_t seed) {
  // Shoemake's subgroup-algorithm sampling of a uniform unit quaternion.
  Rng rng(seed);
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  const double u3 = uniform01(rng);
  const double two_pi = 6.283185307179586;
  const double a = std::sqrt(1.0 - u1), b = std::sqrt(u1);
  Eigen::Quaterniond q(a * std::sin(two_pi * u2), a * std::cos(two_pi * u2),
                       b * std::sin(two_pi * u3), b * std::cos(two_pi * u3));
  return q.normalized().toRotationMatrix();
}

}  // namespace momnet
