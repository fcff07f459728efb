// Crystallographic forward model:
//
//   |F_c(h)| = k_total[bin] * exp(-2 pi^2 s^T U s) * |F_protein(h) + k_mask[bin] F_solvent(h)|
//
// F_protein by direct summation over atoms and symmetry images, F_solvent
// from an FFT of a flat binary solvent mask, per-bin scales from a grid
// scan, and analytic gradients of a scalar loss with respect to atomic
// coordinates and B-factors.

#ifndef XTALFORGE_FORWARD_HPP_
#define XTALFORGE_FORWARD_HPP_

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "xtalforge/kernels.hpp"
#include "xtalforge/model.hpp"
#include "xtalforge/scatter.hpp"

namespace xtalforge {

struct ForwardConfig {
  int n_bins = 10;
  double k_total_init = 0.5;
  double k_mask_init = 0.35;
  bool use_solvent = true;
  double r_probe = 1.0;
  double r_shrink = 0.9;
  double grid_spacing = 0;  // 0: d_min / 4, capped at 0.6 A
  std::size_t max_grid_points = std::size_t(1) << 27;
  Mat3 u_aniso = Mat3::Zero();
};

struct SolventGrid {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 0;             // requested target spacing
  std::vector<std::uint8_t> values; // 1 = solvent, 0 = protein; z fastest

  std::size_t size() const { return values.size(); }
  std::uint8_t at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(i) * ny + j) * nz + k];
  }
  double solvent_fraction() const;
};

struct StructureFactorState {
  std::vector<cplx> f_protein;
  std::vector<cplx> f_solvent;
  std::vector<double> k_total;  // per bin
  std::vector<double> k_mask;   // per bin
  Mat3 u_aniso = Mat3::Zero();
  std::vector<double> envelope; // exp(-2 pi^2 s^T U s), cached per reflection
  std::vector<double> f_calc_amp;
};

// Smallest size >= n whose only prime factors are 2, 3 and 5.
int fft_friendly_size(int n);

std::vector<cplx> f_protein(const AtomicModel& model, const UnitCell& cell,
                            const SpaceGroup& sg, const ReflectionSet& refl,
                            const ScatteringTable& table);

// Jiang-Brunger style flat-solvent mask on the symmetry-expanded model.
// Grid dimensions satisfy spacing <= target along each axis and are large
// enough for |h| < n/2. Throws std::runtime_error above max_grid_points.
SolventGrid solvent_mask(const AtomicModel& model, const UnitCell& cell,
                         const SpaceGroup& sg, double spacing,
                         const std::vector<Miller>& hkl, const ForwardConfig& cfg);
double default_mask_spacing(double d_min);

// F_s(h) = (V/N) sum_grid mask(r) exp(-2 pi i h.r); throws std::out_of_range
// when h lies beyond the grid Nyquist limit.
std::vector<cplx> f_solvent(const SolventGrid& grid, const UnitCell& cell,
                            const std::vector<Miller>& hkl);

std::vector<double> aniso_envelope(const UnitCell& cell, const std::vector<Miller>& hkl,
                                   const Mat3& u_aniso);

// The state's invariant formula evaluated per reflection.
std::vector<double> scale_and_combine(const StructureFactorState& state,
                                      const ReflectionSet& refl);

struct ScaleSolution {
  std::vector<double> k_total;
  std::vector<double> k_mask;
};

// Per bin on working reflections: k_mask by a 51-point scan over [0, 1]
// minimizing the bin R, k_total by closed-form least squares. When
// `previous` is given its per-bin scales are kept wherever they give a
// lower bin R, so a re-solve never increases the working R.
ScaleSolution solve_scales(std::span<const cplx> fp, std::span<const cplx> fs,
                           std::span<const double> envelope, const ReflectionSet& refl,
                           const ScaleSolution* previous = nullptr);

struct ModelGradient {
  Coords d_xyz;             // dL/dx, Cartesian
  std::vector<double> d_b;  // dL/dB
};

// Everything needed to evaluate |F_c| for a model against one data set.
class ForwardModel {
public:
  // refl must carry metadata; bins are (re)assigned with cfg.n_bins.
  ForwardModel(UnitCell cell, SpaceGroup sg, ReflectionSet refl,
               const ScatteringTable& table, ForwardConfig cfg = {});

  const UnitCell& cell() const { return cell_; }
  const SpaceGroup& space_group() const { return sg_; }
  const ReflectionSet& reflections() const { return refl_; }
  const ScatteringTable& table() const { return *table_; }
  const ForwardConfig& config() const { return cfg_; }
  double mask_spacing() const;

  // F_protein, F_solvent (if enabled), uniform initial scales, amplitudes.
  StructureFactorState initial_state(const AtomicModel& model) const;
  void update_protein(StructureFactorState& state, const AtomicModel& model) const;
  void update_solvent(StructureFactorState& state, const AtomicModel& model) const;
  void set_u_aniso(StructureFactorState& state, const Mat3& u) const;
  void solve_scales(StructureFactorState& state) const;
  void update_amplitudes(StructureFactorState& state) const;

  // Chain rule through |F_c| -> F_protein -> (x_j, B_j). The solvent grid
  // and the scales are constants here.
  ModelGradient loss_gradients(const AtomicModel& model, const StructureFactorState& state,
                               std::span<const double> d_amp) const;
  // dL/dU_aniso (symmetric).
  Mat3 u_aniso_gradient(const StructureFactorState& state,
                        std::span<const double> d_amp) const;

private:
  UnitCell cell_;
  SpaceGroup sg_;
  ReflectionSet refl_;
  const ScatteringTable* table_;
  ForwardConfig cfg_;
};

} // namespace xtalforge

#endif
