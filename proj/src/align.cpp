#include "xtalforge/align.hpp"

#include <cmath>
#include <stdexcept>

namespace xtalforge {

RigidTransform RigidTransform::compose(const RigidTransform& o) const {
  return {rotation * o.rotation, rotation * o.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

Coords apply(const RigidTransform& t, std::span<const Vec3> x) {
  Coords out;
  out.reserve(x.size());
  for (const Vec3& v : x)
    out.push_back(t.apply(v));
  return out;
}

RigidTransform kabsch(std::span<const Vec3> x, std::span<const Vec3> ref,
                      std::span<const double> w) {
  std::size_t n = x.size();
  if (ref.size() != n || w.size() != n)
    throw std::invalid_argument("kabsch: point sets and weights differ in size");
  if (n < 3)
    throw std::invalid_argument("kabsch: need at least 3 points");
  double wsum = 0;
  Vec3 cx = Vec3::Zero(), cr = Vec3::Zero();
  for (std::size_t i = 0; i != n; ++i) {
    if (!(w[i] >= 0))
      throw std::invalid_argument("kabsch: weights must be non-negative");
    wsum += w[i];
    cx += w[i] * x[i];
    cr += w[i] * ref[i];
  }
  if (!(wsum > 0))
    throw std::invalid_argument("kabsch: all weights are zero");
  cx /= wsum;
  cr /= wsum;
  Mat3 h = Mat3::Zero(), spread = Mat3::Zero();
  for (std::size_t i = 0; i != n; ++i) {
    Vec3 dx = x[i] - cx;
    h += w[i] * dx * (ref[i] - cr).transpose();
    spread += w[i] * dx * dx.transpose();
  }
  // a collinear set has a rank-1 weighted scatter matrix
  Eigen::SelfAdjointEigenSolver<Mat3> es(spread);
  Vec3 ev = es.eigenvalues();
  if (!(ev[1] > 1e-10 * std::max(ev[2], 1e-300)))
    throw std::invalid_argument("kabsch: degenerate (collinear) point configuration");
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  double d = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Mat3 corr = Mat3::Identity();
  corr(2, 2) = d;  // singular values are sorted, so column 2 is the smallest
  RigidTransform t;
  t.rotation = v * corr * u.transpose();
  t.translation = cr - t.rotation * cx;
  return t;
}

RigidTransform kabsch(std::span<const Vec3> x, std::span<const Vec3> ref) {
  std::vector<double> w(x.size(), 1.0);
  return kabsch(x, ref, w);
}

double kabsch_objective(const RigidTransform& t, std::span<const Vec3> x,
                        std::span<const Vec3> ref, std::span<const double> w) {
  double s = 0;
  for (std::size_t i = 0; i != x.size(); ++i)
    s += w[i] * (t.apply(x[i]) - ref[i]).squaredNorm();
  return s;
}

std::vector<double> alignment_weights(const AtomicModel& model, AlignWeights mode) {
  std::vector<double> w(model.size(), 0.0);
  for (std::size_t i = 0; i != model.size(); ++i) {
    const Atom& a = model.atoms[i];
    w[i] = mode == AlignWeights::c_alpha ? (a.is_calpha() ? 1.0 : 0.0)
                                         : (a.is_hydrogen() ? 0.0 : 1.0);
  }
  return w;
}

double rmsd(std::span<const Vec3> x, std::span<const Vec3> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("rmsd: point counts differ");
  if (x.empty())
    throw std::invalid_argument("rmsd: empty atom subset");
  double s = 0;
  if (x.size() >= 3) {
    RigidTransform t = kabsch(x, y);
    for (std::size_t i = 0; i != x.size(); ++i)
      s += (t.apply(x[i]) - y[i]).squaredNorm();
  } else {
    // fewer than 3 points: translation-only superposition
    Vec3 c = Vec3::Zero();
    for (std::size_t i = 0; i != x.size(); ++i)
      c += y[i] - x[i];
    c /= double(x.size());
    for (std::size_t i = 0; i != x.size(); ++i)
      s += (x[i] + c - y[i]).squaredNorm();
  }
  return std::sqrt(s / x.size());
}

double rmsd(const AtomicModel& x, const AtomicModel& y, RmsdSubset subset) {
  if (x.size() != y.size())
    throw std::invalid_argument("rmsd: models differ in atom count");
  std::vector<std::size_t> idx;
  if (subset == RmsdSubset::c_alpha)
    idx = x.calpha_indices();
  else
    for (std::size_t i = 0; i != x.size(); ++i)
      idx.push_back(i);
  Coords a, b;
  for (std::size_t i : idx) {
    a.push_back(x.atoms[i].xyz);
    b.push_back(y.atoms[i].xyz);
  }
  return rmsd(a, b);
}

} // namespace xtalforge
