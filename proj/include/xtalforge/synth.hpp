// Synthetic crystals for generate-then-recover experiments: a random
// chain-like model in a cell, its amplitudes through the forward model,
// and seeded perturbations.

#ifndef XTALFORGE_SYNTH_HPP_
#define XTALFORGE_SYNTH_HPP_

#include <cstdint>

#include "xtalforge/forward.hpp"

namespace xtalforge {

struct SynthSpec {
  UnitCell cell{20, 20, 20, 90, 90, 90};
  std::string space_group = "P 1";
  int n_atoms = 20;
  std::uint64_t seed = 1;
  double d_min = 2.0;
  double bond = 1.5;          // chain step (A)
  double min_contact = 2.6;   // non-bonded distance floor (A)
  // > 0: the chain forms two compact lobes of this radius, first and
  // second half of the atoms, side by side along x.
  double domain_radius = 0;
  double b_lo = 20, b_hi = 20;  // B drawn uniformly from [b_lo, b_hi]
  double free_fraction = 0.05;
  double sigma_rel = 0.05;    // sigma = sigma_rel * RMS(F)
  double noise_rel = 0.0;     // Gaussian noise on F, relative to sigma
  double k_total = 1.0;
  double k_mask = 0.3;        // on the 0.02 solver grid
  bool solvent = true;
};

struct SynthBundle {
  AtomicModel truth;
  UnitCell cell;
  SpaceGroup sg;
  ReflectionSet refl;
};

// Unique reflections with d >= d_min: one per set of symmetry and Friedel
// mates.
std::vector<Miller> unique_reflections(const UnitCell& cell, const SpaceGroup& sg, double d_min);

SynthBundle synthesize(const SynthSpec& spec, const ScatteringTable& table);

// Atoms displaced by independent N(0, sigma^2) per coordinate.
AtomicModel perturb(const AtomicModel& model, double sigma, std::uint64_t seed);
// Atoms displaced by random directions scaled so the RMS displacement is
// exactly `rms` and the net translation and rotation about the centroid
// vanish (a pure conformational change).
AtomicModel conformational_offset(const AtomicModel& model, double rms, std::uint64_t seed);
// Rigid translation of the second half of the chain along a random
// direction, sized so the superposed RMSD to the input equals `rmsd`.
AtomicModel domain_shift(const AtomicModel& model, double rmsd, std::uint64_t seed);

} // namespace xtalforge

#endif
