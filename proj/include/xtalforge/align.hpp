// Weighted rigid-body superposition (Kabsch) and RMSD.

#ifndef XTALFORGE_ALIGN_HPP_
#define XTALFORGE_ALIGN_HPP_

#include <span>
#include <vector>

#include "xtalforge/model.hpp"

namespace xtalforge {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  // (this o other)(x) = this(other(x))
  RigidTransform compose(const RigidTransform& other) const;
  RigidTransform inverse() const;
};

Coords apply(const RigidTransform& t, std::span<const Vec3> x);

// argmin over proper rotations R and translations t of
//   sum_j w_j |R x_j + t - ref_j|^2
// Throws std::invalid_argument for fewer than 3 points, mismatched sizes,
// all-zero weights or a collinear configuration.
RigidTransform kabsch(std::span<const Vec3> x, std::span<const Vec3> ref,
                      std::span<const double> weights);
RigidTransform kabsch(std::span<const Vec3> x, std::span<const Vec3> ref);

double kabsch_objective(const RigidTransform& t, std::span<const Vec3> x,
                        std::span<const Vec3> ref, std::span<const double> weights);

enum class AlignWeights { heavy_atoms, c_alpha };
std::vector<double> alignment_weights(const AtomicModel& model, AlignWeights mode);

// RMSD after uniform-weight superposition of x onto y.
double rmsd(std::span<const Vec3> x, std::span<const Vec3> y);
enum class RmsdSubset { all_atoms, c_alpha };
// Throws std::invalid_argument if the subset is empty or counts differ.
double rmsd(const AtomicModel& x, const AtomicModel& y, RmsdSubset subset);

} // namespace xtalforge

#endif
