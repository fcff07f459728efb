#include "xtalforge/forward.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <fftw3.h>

#include "xtalforge/diagnostics.hpp"

namespace xtalforge {

namespace {

constexpr double pi = std::numbers::pi;

// FFTW planning is not thread-safe.
std::mutex fftw_mutex;

int positive_mod(int v, int n) { return ((v % n) + n) % n; }

} // namespace

double SolventGrid::solvent_fraction() const {
  if (values.empty())
    return 0;
  std::size_t n = 0;
  for (std::uint8_t v : values)
    n += v;
  return static_cast<double>(n) / values.size();
}

int fft_friendly_size(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int p : {2, 3, 5})
      while (r % p == 0)
        r /= p;
    if (r == 1)
      return m;
  }
}

std::vector<cplx> f_protein(const AtomicModel& model, const UnitCell& cell,
                            const SpaceGroup& sg, const ReflectionSet& refl,
                            const ScatteringTable& table) {
  return f_protein_omp(make_sf_problem(model, cell, sg, refl.hkl, table));
}

double default_mask_spacing(double d_min) {
  return std::min(d_min / 4, 0.6);
}

SolventGrid solvent_mask(const AtomicModel& model, const UnitCell& cell,
                         const SpaceGroup& sg, double spacing,
                         const std::vector<Miller>& hkl, const ForwardConfig& cfg) {
  if (!(spacing > 0))
    throw std::invalid_argument("mask grid spacing must be positive");
  std::array<int, 3> hmax{0, 0, 0};
  for (const Miller& m : hkl) {
    hmax[0] = std::max(hmax[0], std::abs(m.h));
    hmax[1] = std::max(hmax[1], std::abs(m.k));
    hmax[2] = std::max(hmax[2], std::abs(m.l));
  }
  double len[3] = {cell.a, cell.b, cell.c};
  int dims[3];
  for (int i = 0; i != 3; ++i)
    dims[i] = fft_friendly_size(std::max(static_cast<int>(std::ceil(len[i] / spacing)),
                                         2 * hmax[i] + 1));
  SolventGrid grid;
  grid.nx = dims[0];
  grid.ny = dims[1];
  grid.nz = dims[2];
  grid.spacing = spacing;
  std::size_t total = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (total > cfg.max_grid_points)
    throw std::runtime_error("solvent mask grid " + std::to_string(dims[0]) + "x" +
                             std::to_string(dims[1]) + "x" + std::to_string(dims[2]) +
                             " exceeds the memory cap; use a coarser grid spacing");
  // 1 = solvent, 0 = protein core, 2 = accessible shell
  grid.values.assign(total, 1);
  auto index = [&](int i, int j, int k) {
    return (static_cast<std::size_t>(i) * grid.ny + j) * grid.nz + k;
  };

  AtomicModel p1 = expand_to_p1(model, cell, sg);
  Vec3 rlen = cell.reciprocal_lengths();
  const Mat3& orth = cell.orth();
  for (const Atom& atom : p1.atoms) {
    double r_core = vdw_radius(atom.element);
    double r_outer = r_core + cfg.r_probe;
    Vec3 f = cell.fractionalize(atom.xyz);
    int lo[3], hi[3];
    for (int i = 0; i != 3; ++i) {
      double ext = r_outer * rlen[i];
      lo[i] = static_cast<int>(std::ceil((f[i] - ext) * dims[i]));
      hi[i] = static_cast<int>(std::floor((f[i] + ext) * dims[i]));
    }
    for (int i = lo[0]; i <= hi[0]; ++i)
      for (int j = lo[1]; j <= hi[1]; ++j)
        for (int k = lo[2]; k <= hi[2]; ++k) {
          Vec3 df(double(i) / dims[0] - f[0], double(j) / dims[1] - f[1],
                  double(k) / dims[2] - f[2]);
          double d2 = (orth * df).squaredNorm();
          if (d2 >= r_outer * r_outer)
            continue;
          std::uint8_t& v = grid.values[index(positive_mod(i, dims[0]),
                                              positive_mod(j, dims[1]),
                                              positive_mod(k, dims[2]))];
          if (d2 < r_core * r_core)
            v = 0;
          else if (v == 1)
            v = 2;
        }
  }

  // shrink: shell points within r_shrink of the original solvent revert
  // to solvent, the rest of the shell becomes protein
  std::vector<std::array<int, 3>> offsets;
  int ext[3];
  for (int i = 0; i != 3; ++i)
    ext[i] = static_cast<int>(std::ceil(cfg.r_shrink * rlen[i] * dims[i]));
  for (int i = -ext[0]; i <= ext[0]; ++i)
    for (int j = -ext[1]; j <= ext[1]; ++j)
      for (int k = -ext[2]; k <= ext[2]; ++k) {
        if (i == 0 && j == 0 && k == 0)
          continue;
        Vec3 df(double(i) / dims[0], double(j) / dims[1], double(k) / dims[2]);
        if ((orth * df).squaredNorm() < cfg.r_shrink * cfg.r_shrink)
          offsets.push_back({i, j, k});
      }
  std::vector<std::uint8_t> out(grid.values.size());
  for (int i = 0; i != dims[0]; ++i)
    for (int j = 0; j != dims[1]; ++j)
      for (int k = 0; k != dims[2]; ++k) {
        std::size_t idx = index(i, j, k);
        std::uint8_t v = grid.values[idx];
        if (v != 2) {
          out[idx] = v;
          continue;
        }
        std::uint8_t res = 0;
        for (const auto& o : offsets)
          if (grid.values[index(positive_mod(i + o[0], dims[0]),
                                positive_mod(j + o[1], dims[1]),
                                positive_mod(k + o[2], dims[2]))] == 1) {
            res = 1;
            break;
          }
        out[idx] = res;
      }
  grid.values = std::move(out);
  return grid;
}

std::vector<cplx> f_solvent(const SolventGrid& grid, const UnitCell& cell,
                            const std::vector<Miller>& hkl) {
  const int nx = grid.nx, ny = grid.ny, nz = grid.nz;
  for (const Miller& m : hkl)
    if (2 * std::abs(m.h) >= nx || 2 * std::abs(m.k) >= ny || 2 * std::abs(m.l) >= nz)
      throw std::out_of_range("reflection (" + std::to_string(m.h) + "," +
                              std::to_string(m.k) + "," + std::to_string(m.l) +
                              ") beyond the Nyquist limit of the solvent grid");
  const int nzc = nz / 2 + 1;
  std::size_t n_real = grid.size();
  double* in = fftw_alloc_real(n_real);
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(nx) * ny * nzc);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    plan = fftw_plan_dft_r2c_3d(nx, ny, nz, in, out, FFTW_ESTIMATE);
  }
  for (std::size_t i = 0; i != n_real; ++i)
    in[i] = grid.values[i];
  fftw_execute(plan);
  double scale = cell.volume() / static_cast<double>(n_real);
  std::vector<cplx> result;
  result.reserve(hkl.size());
  for (const Miller& m : hkl) {
    int h = positive_mod(m.h, nx), k = positive_mod(m.k, ny), l = positive_mod(m.l, nz);
    bool conj = false;
    if (l >= nzc) {
      // Hermitian symmetry of a real input: X[-h] = conj(X[h])
      h = positive_mod(-m.h, nx);
      k = positive_mod(-m.k, ny);
      l = positive_mod(-m.l, nz);
      conj = true;
    }
    const fftw_complex& v = out[(static_cast<std::size_t>(h) * ny + k) * nzc + l];
    cplx c(v[0] * scale, v[1] * scale);
    result.push_back(conj ? std::conj(c) : c);
  }
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);
  return result;
}

std::vector<double> aniso_envelope(const UnitCell& cell, const std::vector<Miller>& hkl,
                                   const Mat3& u) {
  std::vector<double> out;
  out.reserve(hkl.size());
  for (const Miller& m : hkl) {
    Vec3 s = cell.reciprocal_vector(m);
    out.push_back(std::exp(-2 * pi * pi * s.dot(u * s)));
  }
  return out;
}

std::vector<double> scale_and_combine(const StructureFactorState& st,
                                      const ReflectionSet& refl) {
  std::size_t n = refl.size();
  std::vector<double> out(n);
  bool solvent = !st.f_solvent.empty();
  for (std::size_t i = 0; i != n; ++i) {
    int b = refl.bin[i];
    cplx f = st.f_protein[i];
    if (solvent)
      f += st.k_mask[b] * st.f_solvent[i];
    double env = st.envelope.empty() ? 1.0 : st.envelope[i];
    out[i] = st.k_total[b] * env * std::abs(f);
  }
  return out;
}

ScaleSolution solve_scales(std::span<const cplx> fp, std::span<const cplx> fs,
                           std::span<const double> envelope, const ReflectionSet& refl,
                           const ScaleSolution* previous) {
  int nb = std::max(refl.n_bins, 1);
  ScaleSolution sol{std::vector<double>(nb, 0.0), std::vector<double>(nb, 0.0)};
  std::vector<std::vector<std::size_t>> members(nb);
  for (std::size_t i = 0; i != refl.size(); ++i)
    if (!refl.free[i])
      members[refl.bin[i]].push_back(i);
  bool solvent = !fs.empty();
  auto env = [&](std::size_t i) { return envelope.empty() ? 1.0 : envelope[i]; };
  // returns (k_total, bin R numerator)
  auto evaluate = [&](const std::vector<std::size_t>& idx, double km, const double* kt_fixed) {
    double num = 0, den = 0;
    for (std::size_t i : idx) {
      double m = env(i) * std::abs(solvent ? fp[i] + km * fs[i] : fp[i]);
      num += refl.f_obs[i] * m;
      den += m * m;
    }
    double kt = kt_fixed ? *kt_fixed : (den > 0 ? num / den : 0.0);
    double r = 0;
    for (std::size_t i : idx) {
      double m = env(i) * std::abs(solvent ? fp[i] + km * fs[i] : fp[i]);
      r += std::fabs(refl.f_obs[i] - kt * m);
    }
    return std::pair<double, double>{kt, den > 0 ? r : -1.0};
  };
  for (int b = 0; b != nb; ++b) {
    const auto& idx = members[b];
    if (idx.empty())
      continue;
    double best_r = -1, best_kt = 0, best_km = 0;
    int n_scan = solvent ? 51 : 1;
    for (int s = 0; s != n_scan; ++s) {
      double km = 0.02 * s;
      auto [kt, r] = evaluate(idx, km, nullptr);
      if (r < 0)
        continue;
      if (best_r < 0 || r < best_r) {
        best_r = r;
        best_kt = kt;
        best_km = km;
      }
    }
    if (best_r < 0) {
      warn("scale solver: bin " + std::to_string(b) +
           " has zero model amplitude; k_total set to 0");
      sol.k_total[b] = 0;
      sol.k_mask[b] = 0;
      continue;
    }
    if (previous && b < static_cast<int>(previous->k_total.size())) {
      double kt_prev = previous->k_total[b];
      double km_prev = previous->k_mask[b];
      auto [kt, r] = evaluate(idx, km_prev, &kt_prev);
      if (r >= 0 && r < best_r) {
        best_kt = kt;
        best_km = km_prev;
      }
    }
    sol.k_total[b] = best_kt;
    sol.k_mask[b] = best_km;
  }
  return sol;
}

ForwardModel::ForwardModel(UnitCell cell, SpaceGroup sg, ReflectionSet refl,
                           const ScatteringTable& table, ForwardConfig cfg)
    : cell_(std::move(cell)), sg_(std::move(sg)), refl_(std::move(refl)),
      table_(&table), cfg_(std::move(cfg)) {
  refl_.validate();
  for (const Miller& m : refl_.hkl)
    if (m.is_zero())
      throw std::invalid_argument("reflection list contains (0,0,0)");
  assign_metadata(refl_, cell_, sg_);
  assign_bins(refl_, cfg_.n_bins);
}

double ForwardModel::mask_spacing() const {
  return cfg_.grid_spacing > 0 ? cfg_.grid_spacing : default_mask_spacing(refl_.d_min());
}

StructureFactorState ForwardModel::initial_state(const AtomicModel& model) const {
  StructureFactorState st;
  int nb = std::max(refl_.n_bins, 1);
  st.k_total.assign(nb, cfg_.k_total_init);
  st.k_mask.assign(nb, cfg_.use_solvent ? cfg_.k_mask_init : 0.0);
  st.u_aniso = cfg_.u_aniso;
  st.envelope = aniso_envelope(cell_, refl_.hkl, st.u_aniso);
  update_protein(st, model);
  if (cfg_.use_solvent)
    update_solvent(st, model);
  update_amplitudes(st);
  return st;
}

void ForwardModel::update_protein(StructureFactorState& st, const AtomicModel& model) const {
  st.f_protein = f_protein(model, cell_, sg_, refl_, *table_);
}

void ForwardModel::update_solvent(StructureFactorState& st, const AtomicModel& model) const {
  SolventGrid grid = solvent_mask(model, cell_, sg_, mask_spacing(), refl_.hkl, cfg_);
  st.f_solvent = f_solvent(grid, cell_, refl_.hkl);
}

void ForwardModel::set_u_aniso(StructureFactorState& st, const Mat3& u) const {
  st.u_aniso = 0.5 * (u + u.transpose());
  st.envelope = aniso_envelope(cell_, refl_.hkl, st.u_aniso);
}

void ForwardModel::solve_scales(StructureFactorState& st) const {
  ScaleSolution prev{st.k_total, st.k_mask};
  ScaleSolution sol = xtalforge::solve_scales(st.f_protein, st.f_solvent, st.envelope,
                                              refl_, &prev);
  st.k_total = std::move(sol.k_total);
  st.k_mask = std::move(sol.k_mask);
  update_amplitudes(st);
}

void ForwardModel::update_amplitudes(StructureFactorState& st) const {
  st.f_calc_amp = scale_and_combine(st, refl_);
}

ModelGradient ForwardModel::loss_gradients(const AtomicModel& model,
                                           const StructureFactorState& st,
                                           std::span<const double> d_amp) const {
  std::size_t n = refl_.size();
  if (d_amp.size() != n)
    throw std::invalid_argument("gradient vector length does not match reflections");
  bool solvent = !st.f_solvent.empty();
  std::vector<cplx> w(n, cplx(0));
  for (std::size_t i = 0; i != n; ++i) {
    if (d_amp[i] == 0)
      continue;
    int b = refl_.bin[i];
    cplx f = st.f_protein[i];
    if (solvent)
      f += st.k_mask[b] * st.f_solvent[i];
    double a = std::abs(f);
    if (a == 0)
      continue;
    double env = st.envelope.empty() ? 1.0 : st.envelope[i];
    w[i] = d_amp[i] * st.k_total[b] * env * std::conj(f) / a;
  }
  SfProblem p = make_sf_problem(model, cell_, sg_, refl_.hkl, *table_);
  SfGradient g = sf_gradient_omp(p, w);
  ModelGradient out;
  out.d_xyz.reserve(g.d_frac.size());
  // frac = F x  =>  dL/dx = F^T dL/dfrac
  for (const Vec3& df : g.d_frac)
    out.d_xyz.push_back(cell_.frac().transpose() * df);
  out.d_b = std::move(g.d_b);
  return out;
}

Mat3 ForwardModel::u_aniso_gradient(const StructureFactorState& st,
                                    std::span<const double> d_amp) const {
  Mat3 g = Mat3::Zero();
  for (std::size_t i = 0; i != refl_.size(); ++i) {
    if (d_amp[i] == 0)
      continue;
    Vec3 s = cell_.reciprocal_vector(refl_.hkl[i]);
    g += d_amp[i] * st.f_calc_amp[i] * (-2 * pi * pi) * (s * s.transpose());
  }
  return g;
}

} // namespace xtalforge
