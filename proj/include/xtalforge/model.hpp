// Atomic model and reflection data containers.

#ifndef XTALFORGE_MODEL_HPP_
#define XTALFORGE_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "xtalforge/cell_sym.hpp"

namespace xtalforge {

using Coords = std::vector<Vec3>;

struct Atom {
  std::string name;        // e.g. " CA "
  char altloc = ' ';
  std::string res_name;
  std::string chain;
  int res_seq = 0;
  char icode = ' ';
  std::string element;     // normalized: "C", "Zn"
  Vec3 xyz = Vec3::Zero(); // Cartesian, Angstrom
  double occ = 1.0;
  double b_iso = 20.0;
  bool hetatm = false;
  int serial = 0;

  bool is_calpha() const;
  bool is_hydrogen() const { return element == "H" || element == "D"; }
};

struct AtomicModel {
  std::vector<Atom> atoms;

  std::size_t size() const { return atoms.size(); }
  Coords positions() const;
  void set_positions(const Coords& xyz);
  std::vector<double> b_factors() const;
  void set_b_factors(const std::vector<double>& b);
  std::vector<std::size_t> calpha_indices() const;
  std::vector<std::size_t> heavy_atom_indices() const;
  // Throws std::invalid_argument on occupancy outside [0,1] or b_iso <= 0.
  void validate() const;
};

Coords fractional_coords(const AtomicModel& model, const UnitCell& cell);

// Applies every operator to every atom (operator-major order) and wraps
// fractional coordinates into [0, 1).
AtomicModel expand_to_p1(const AtomicModel& model, const UnitCell& cell,
                         const SpaceGroup& sg);

// Per-reflection arrays. free[i] != 0 marks the held-out (test) set.
// The derived arrays are filled by assign_metadata() and assign_bins().
struct ReflectionSet {
  std::vector<Miller> hkl;
  std::vector<double> f_obs;
  std::vector<double> sigma;
  std::vector<char> free;

  std::vector<double> d;
  std::vector<char> centric;
  std::vector<int> epsilon;
  std::vector<int> bin;
  int n_bins = 0;

  std::size_t size() const { return hkl.size(); }
  void add(const Miller& m, double f, double sig, bool is_free);
  // Throws std::invalid_argument on duplicates, negative or non-finite values.
  void validate() const;
  std::vector<char> working_mask() const;
  std::vector<char> free_mask() const;
  std::size_t free_count() const;
  double d_min() const;
  double d_max() const;
  void swap_free_flags();
};

bool operator==(const ReflectionSet& a, const ReflectionSet& b);

void assign_metadata(ReflectionSet& refl, const UnitCell& cell, const SpaceGroup& sg);

// Log-spaced resolution bins over [d_min, d_max]. Bins holding fewer than
// min_working working reflections are merged into the next (higher
// resolution) bin; the last bin merges downwards.
void assign_bins(ReflectionSet& refl, int n_bins, int min_working = 10);

// 64-bit FNV-1a; used for input digests and free-set fingerprints.
std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t free_set_digest(const ReflectionSet& refl);

} // namespace xtalforge

#endif
