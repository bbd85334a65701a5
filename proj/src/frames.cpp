#include "momnet/frames.hpp"

namespace momnet {

Vec3 intermediate_vector(const FrameInputs& fi, double eps) {
  const Vec3 d = fi.r_j - fi.r_i;
  Vec3 b = Vec3::Zero();
  b += normalize_safe(fi.v_j + fi.v_i, eps).first;
  b += normalize_safe(fi.w_j + fi.w_i, eps).first;
  b += normalize_safe((fi.v_j - fi.v_i).cross(d), eps).first;
  b += normalize_safe((fi.w_j - fi.w_i).cross(d), eps).first;
  return b;
}

EdgeFrame build_frame(const FrameInputs& fi, double eps) {
  const Vec3 d = fi.r_j - fi.r_i;
  const double dn = d.norm();
  if (dn < eps) throw DegenerateEdgeError("coincident edge endpoints");

  EdgeFrame f;
  f.a = d / dn;

  const Vec3 bp = intermediate_vector(fi, eps);
  const Vec3 bp_par = project_parallel(bp, f.a);
  const Vec3 bp_perp = bp - bp_par;

  auto [b, b_deg] = normalize_safe(bp_perp.cross(f.a), eps);
  f.b = b;
  f.masked[1] = b_deg;

  auto [c, c_deg] = normalize_safe(bp_par.cross(f.b), eps);
  f.c = c;
  f.masked[2] = c_deg;
  return f;
}

std::array<double, 12> project_features(const std::array<Vec3, 4>& feats,
                                        const EdgeFrame& f, bool flip) {
  const double s = flip ? -1.0 : 1.0;
  std::array<double, 12> out{};
  for (int k = 0; k < 4; ++k) {
    out[static_cast<size_t>(3 * k + 0)] = s * f.a.dot(feats[static_cast<size_t>(k)]);
    out[static_cast<size_t>(3 * k + 1)] = s * f.b.dot(feats[static_cast<size_t>(k)]);
    out[static_cast<size_t>(3 * k + 2)] = s * f.c.dot(feats[static_cast<size_t>(k)]);
  }
  return out;
}

}  // namespace momnet
