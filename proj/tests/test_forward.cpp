#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <omp.h>

#include "support.hpp"
#include "xtalforge/diagnostics.hpp"
#include "xtalforge/refine.hpp"

using namespace xft;

namespace {

const ScatteringTable& table() { return ScatteringTable::bundled(); }

AtomicModel one_atom(const UnitCell& cell, Vec3 frac, std::string el = "C", double b = 20) {
  AtomicModel m;
  Atom a;
  a.element = el;
  a.xyz = cell.orthogonalize(frac);
  a.b_iso = b;
  m.atoms.push_back(a);
  return m;
}

SolventGrid random_grid(int nx, int ny, int nz, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SolventGrid g;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  g.spacing = 1;
  g.values.resize(std::size_t(nx) * ny * nz);
  for (auto& v : g.values)
    v = rng() % 2;
  return g;
}

std::vector<Miller> all_hkl(int lim) {
  std::vector<Miller> out;
  for (int h = -lim; h <= lim; ++h)
    for (int k = -lim; k <= lim; ++k)
      for (int l = -lim; l <= lim; ++l)
        out.push_back({h, k, l});
  return out;
}

// Model, data set from a shifted copy, and the forward model.
struct Problem {
  UnitCell cell{18, 21, 24, 90, 97, 90};
  SpaceGroup sg = space_group_from_triplets("P 21", {"x,y,z", "-x,y+1/2,-z"});
  AtomicModel model;
  ReflectionSet refl;

  explicit Problem(std::uint64_t seed, bool solvent = true) {
    model = random_model(12, cell, seed, 10, 30);
    AtomicModel truth = perturb(model, 0.3, seed + 1);
    refl = hkl_set(cell, sg, 3.0, seed, 0.1);
    ForwardConfig fc;
    fc.use_solvent = solvent;
    ForwardModel fm(cell, sg, refl, table(), fc);
    auto st = fm.initial_state(truth);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    for (std::size_t i = 0; i != refl.size(); ++i) {
      refl.f_obs[i] = std::abs(st.f_calc_amp[i] * (1 + 0.05 * n(rng)));
      refl.sigma[i] = 0.05 * refl.f_obs[i] + 0.1;
    }
  }
};

} // namespace

TEST_CASE("protein structure factors match term-by-term summation") {
  struct Case {
    UnitCell cell;
    SpaceGroup sg;
  };
  std::vector<Case> cases = {
      {UnitCell(15, 17, 19, 90, 90, 90), find_space_group("P 1")},
      {UnitCell(23, 31, 37, 77, 101, 95), find_space_group("P -1")},
      {UnitCell(20, 25, 30, 90, 90, 90), find_space_group("P 21 21 21")},
      {UnitCell(18, 21, 24, 90, 97, 90),
       space_group_from_triplets("P 21", {"x,y,z", "-x,y+1/2,-z"})},
  };
  for (std::size_t c = 0; c != cases.size(); ++c) {
    INFO("case " << c);
    const auto& [cell, sg] = cases[c];
    AtomicModel m = random_model(9, cell, 100 + c);
    ReflectionSet r = hkl_set(cell, sg, 2.5);
    auto fast = f_protein(m, cell, sg, r, table());
    auto slow = naive_f(m, cell, sg, r.hkl, table());
    CHECK(max_rel_diff(fast, slow) < 1e-10);

    SfProblem p = make_sf_problem(m, cell, sg, r.hkl, table());
    CHECK(max_rel_diff(f_protein_serial(p), slow) < 1e-10);
  }
}

TEST_CASE("OpenMP kernels do not depend on the thread count") {
  UnitCell cell(20, 25, 30, 90, 90, 90);
  SpaceGroup sg = find_space_group("P 21 21 21");
  AtomicModel m = random_model(40, cell, 9);
  ReflectionSet r = hkl_set(cell, sg, 2.0);
  SfProblem p = make_sf_problem(m, cell, sg, r.hkl, table());
  std::vector<cplx> w(r.size());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (cplx& x : w)
    x = {n(rng), n(rng)};
  int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  auto f1 = f_protein_omp(p);
  auto g1 = sf_gradient_omp(p, w);
  omp_set_num_threads(4);
  auto f4 = f_protein_omp(p);
  auto g4 = sf_gradient_omp(p, w);
  omp_set_num_threads(saved);
  CHECK(f1 == f4);
  CHECK(g1.d_frac == g4.d_frac);
  CHECK(g1.d_b == g4.d_b);
  auto gs = sf_gradient_serial(p, w);
  double num = 0, den = 0;
  for (std::size_t j = 0; j != m.size(); ++j) {
    num = std::max(num, (gs.d_frac[j] - g1.d_frac[j]).norm() + std::abs(gs.d_b[j] - g1.d_b[j]));
    den = std::max(den, gs.d_frac[j].norm() + std::abs(gs.d_b[j]));
  }
  CHECK(num <= 1e-10 * den);
}

TEST_CASE("single atoms with known structure factors") {
  UnitCell cell(10, 10, 10, 90, 90, 90);
  SpaceGroup p1 = find_space_group("P 1");
  std::vector<Miller> hkl = {{1, 0, 0}, {1, 2, 3}, {-2, 1, 4}, {3, 3, 0}};
  ReflectionSet r;
  for (const Miller& h : hkl)
    r.add(h, 0, 0, false);

  auto f0 = f_protein(one_atom(cell, {0, 0, 0}), cell, p1, r, table());
  for (std::size_t i = 0; i != hkl.size(); ++i) {
    double s = 0.5 / resolution(cell, hkl[i]);
    CHECK(std::abs(f0[i].imag()) < 1e-12);
    CHECK(f0[i].real() == doctest::Approx(form_factor(table(), "C", s) * dwf_iso(20, s)));
  }

  // (1/2, 0, 0): F(1,0,0) = -f dwf
  auto fh = f_protein(one_atom(cell, {0.5, 0, 0}), cell, p1, r, table());
  double s = 0.5 / 10;
  CHECK(fh[0].real() == doctest::Approx(-form_factor(table(), "C", s) * dwf_iso(20, s)));
  CHECK(std::abs(fh[0].imag()) < 1e-12);

  // x and -x together: real F
  AtomicModel pair = one_atom(cell, {0.13, 0.27, 0.41}, "S");
  pair.atoms.push_back(one_atom(cell, {-0.13, -0.27, -0.41}, "S").atoms[0]);
  for (const cplx& f : f_protein(pair, cell, p1, r, table()))
    CHECK(std::abs(f.imag()) < 1e-12 * std::abs(f) + 1e-14);
}

TEST_CASE("symmetry summation equals the P1 expansion") {
  struct Case {
    UnitCell cell;
    SpaceGroup sg;
  };
  std::vector<Case> cases = {
      {UnitCell(18, 21, 24, 90, 97, 90), space_group_from_triplets("P 2", {"x,y,z", "-x,y,-z"})},
      {UnitCell(18, 21, 24, 90, 97, 90),
       space_group_from_triplets("P 21", {"x,y,z", "-x,y+1/2,-z"})},
      {UnitCell(20, 25, 30, 90, 90, 90), find_space_group("P 21 21 21")},
  };
  SpaceGroup p1 = find_space_group("P 1");
  for (const auto& [cell, sg] : cases) {
    INFO(sg.name);
    AtomicModel m = random_model(7, cell, 3);
    ReflectionSet r = hkl_set(cell, sg, 2.5);
    auto a = f_protein(m, cell, sg, r, table());
    auto b = f_protein(expand_to_p1(m, cell, sg), cell, p1, r, table());
    CHECK(max_rel_diff(a, b) < 1e-10);
  }
}

TEST_CASE("lattice translations leave F unchanged") {
  UnitCell cell(23, 31, 37, 77, 101, 95);
  SpaceGroup sg = find_space_group("P 1");
  AtomicModel m = random_model(6, cell, 8);
  AtomicModel moved = m;
  moved.atoms[2].xyz += cell.orthogonalize(Vec3(1, -2, 3));
  ReflectionSet r = hkl_set(cell, sg, 2.5);
  CHECK(max_rel_diff(f_protein(moved, cell, sg, r, table()),
                     f_protein(m, cell, sg, r, table())) < 1e-10);
}

TEST_CASE("solvent mask") {
  UnitCell cell(20, 20, 20, 90, 90, 90);
  SpaceGroup p1 = find_space_group("P 1");
  ForwardConfig cfg;
  std::vector<Miller> hkl = {{1, 0, 0}, {0, 3, 2}};

  SolventGrid empty = solvent_mask(AtomicModel{}, cell, p1, 0.6, hkl, cfg);
  CHECK(empty.solvent_fraction() == 1.0);
  for (auto v : empty.values)
    CHECK(v == 1);
  CHECK(empty.nx >= 34);
  CHECK(fft_friendly_size(empty.nx) == empty.nx);

  SolventGrid one = solvent_mask(one_atom(cell, {0, 0, 0}), cell, p1, 0.5, hkl, cfg);
  CHECK(one.at(0, 0, 0) == 0);
  CHECK(one.at(one.nx / 2, one.ny / 2, one.nz / 2) == 1);
  // protein volume lies between the vdW sphere and the sphere grown by
  // r_probe - r_shrink
  double r = vdw_radius("C");
  double v_protein = (1 - one.solvent_fraction()) * cell.volume();
  double lo = 4.0 / 3 * std::numbers::pi * std::pow(r - 0.3, 3);
  double hi = 4.0 / 3 * std::numbers::pi * std::pow(r + cfg.r_probe - cfg.r_shrink + 0.3, 3);
  CHECK(v_protein > lo);
  CHECK(v_protein < hi);

  ForwardConfig capped = cfg;
  capped.max_grid_points = 1000;
  CHECK_THROWS_AS(solvent_mask(AtomicModel{}, cell, p1, 0.6, hkl, capped), std::runtime_error);

  CHECK(fft_friendly_size(7) == 8);
  CHECK(fft_friendly_size(31) == 32);
  CHECK(fft_friendly_size(49) == 50);
  CHECK(fft_friendly_size(30) == 30);
}

TEST_CASE("solvent FFT matches the direct DFT") {
  UnitCell cell(17, 19, 23, 80, 95, 100);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SolventGrid g = random_grid(8, 8, 8, seed);
    std::vector<Miller> hkl = all_hkl(3);
    CHECK(max_rel_diff(f_solvent(g, cell, hkl), naive_dft(g, cell, hkl)) < 1e-12);
  }
  SolventGrid odd = random_grid(6, 10, 9, 4);
  std::vector<Miller> hkl = {{1, 2, 3}, {-2, 4, -4}, {0, -1, 4}, {2, 0, -3}};
  CHECK(max_rel_diff(f_solvent(odd, cell, hkl), naive_dft(odd, cell, hkl)) < 1e-12);

  SolventGrid ones = random_grid(8, 8, 8, 1);
  std::fill(ones.values.begin(), ones.values.end(), 1);
  auto f1 = f_solvent(ones, cell, {{0, 0, 0}, {1, 0, 0}, {2, -3, 1}});
  CHECK(f1[0].real() == doctest::Approx(cell.volume()));
  CHECK(std::abs(f1[1]) < 1e-9 * cell.volume());
  CHECK(std::abs(f1[2]) < 1e-9 * cell.volume());

  // shift by one voxel along x: F -> F exp(-2 pi i h / nx)
  SolventGrid g = random_grid(8, 8, 8, 5);
  SolventGrid shifted = g;
  for (int i = 0; i != 8; ++i)
    for (int j = 0; j != 8; ++j)
      for (int k = 0; k != 8; ++k)
        shifted.values[(std::size_t((i + 1) % 8) * 8 + j) * 8 + k] = g.at(i, j, k);
  std::vector<Miller> small = all_hkl(3);
  auto a = f_solvent(g, cell, small);
  auto b = f_solvent(shifted, cell, small);
  for (std::size_t i = 0; i != small.size(); ++i) {
    cplx expect = a[i] * std::polar(1.0, -2 * std::numbers::pi * small[i].h / 8);
    CHECK(std::abs(b[i] - expect) < 1e-9 * (1 + std::abs(a[i])));
  }

  CHECK_THROWS_AS(f_solvent(g, cell, {{4, 0, 0}}), std::out_of_range);
  CHECK_THROWS_AS(f_solvent(g, cell, {{0, -4, 0}}), std::out_of_range);
  CHECK_NOTHROW(f_solvent(g, cell, {{3, -3, 3}}));
}

TEST_CASE("scale and combine") {
  ReflectionSet r;
  r.add({1, 0, 0}, 0, 0, false);
  r.add({0, 1, 0}, 0, 0, false);
  r.bin = {0, 1};
  r.n_bins = 2;
  StructureFactorState st;
  st.f_protein = {cplx(3, 4), cplx(1, 0)};
  st.k_total = {2, 0.5};
  st.k_mask = {0, 0};
  auto a = scale_and_combine(st, r);
  CHECK(a[0] == doctest::Approx(10));
  CHECK(a[1] == doctest::Approx(0.5));

  st.f_solvent = {cplx(0, -4), cplx(-2, 0)};
  st.k_mask = {1, 0.5};
  st.envelope = {0.5, 1};
  a = scale_and_combine(st, r);
  CHECK(a[0] == doctest::Approx(3));  // 2 * 0.5 * |3|
  CHECK(a[1] == doctest::Approx(0)); // |1 - 1|
}

TEST_CASE("per-bin scale solver") {
  Problem pr(11);
  ForwardModel fm(pr.cell, pr.sg, pr.refl, table());
  auto st = fm.initial_state(pr.model);
  ReflectionSet r = fm.reflections();

  // F_obs = 2 |F_p|, no solvent
  for (std::size_t i = 0; i != r.size(); ++i)
    r.f_obs[i] = 2 * std::abs(st.f_protein[i]);
  auto s0 = solve_scales(st.f_protein, {}, {}, r);
  for (double k : s0.k_total)
    CHECK(k == doctest::Approx(2).epsilon(1e-12));

  // F_obs = |F_p + 0.35 F_s|
  for (std::size_t i = 0; i != r.size(); ++i)
    r.f_obs[i] = std::abs(st.f_protein[i] + 0.35 * st.f_solvent[i]);
  auto s1 = solve_scales(st.f_protein, st.f_solvent, {}, r);
  for (int b = 0; b != r.n_bins; ++b) {
    INFO("bin " << b);
    CHECK(std::abs(s1.k_mask[b] - 0.35) <= 0.02 + 1e-12);
    CHECK(s1.k_total[b] == doctest::Approx(1).epsilon(0.05));
  }

  // free F_obs have no influence
  ReflectionSet r2 = r;
  for (std::size_t i = 0; i != r2.size(); ++i)
    if (r2.free[i])
      r2.f_obs[i] *= 7;
  auto s2 = solve_scales(st.f_protein, st.f_solvent, {}, r2);
  CHECK(s2.k_total == s1.k_total);
  CHECK(s2.k_mask == s1.k_mask);

  // zero F_obs
  std::fill(r.f_obs.begin(), r.f_obs.end(), 0.0);
  for (double k : solve_scales(st.f_protein, st.f_solvent, {}, r).k_total)
    CHECK(k == 0.0);

  // zero model amplitude: warning, k_total 0
  std::vector<std::string> warnings;
  auto old = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  std::vector<cplx> zeros(r.size(), cplx(0));
  auto s3 = solve_scales(zeros, {}, {}, fm.reflections());
  set_warning_sink(old);
  CHECK(!warnings.empty());
  for (double k : s3.k_total)
    CHECK(k == 0.0);
}

TEST_CASE("re-solving scales never raises the working R") {
  Problem pr(12);
  ForwardModel fm(pr.cell, pr.sg, pr.refl, table());
  auto st = fm.initial_state(pr.model);
  fm.solve_scales(st);
  auto work = fm.reflections().working_mask();
  double r0 = r_factor(fm.reflections().f_obs, st.f_calc_amp, work);
  AtomicModel moved = perturb(pr.model, 0.2, 5);
  fm.update_protein(st, moved);
  fm.update_amplitudes(st);
  double r_before = r_factor(fm.reflections().f_obs, st.f_calc_amp, work);
  fm.solve_scales(st);
  double r_after = r_factor(fm.reflections().f_obs, st.f_calc_amp, work);
  CHECK(r_after <= r_before + 1e-15);
  CHECK(r0 > 0);
}

TEST_CASE("coordinate and B gradients match finite differences") {
  for (Objective obj : {Objective::gauss, Objective::rice, Objective::r_factor}) {
    INFO(objective_name(obj));
    Problem pr(21);
    ForwardModel fm(pr.cell, pr.sg, pr.refl, table());
    auto st = fm.initial_state(pr.model);
    fm.solve_scales(st);
    RefinementConfig rc;
    rc.objective = obj;
    auto value = [&](const AtomicModel& m) {
      StructureFactorState s = st;
      fm.update_protein(s, m);
      fm.update_amplitudes(s);
      return refinement_objective(fm, s, rc).value;
    };
    LossValue lv = refinement_objective(fm, st, rc);
    ModelGradient g = fm.loss_gradients(pr.model, st, lv.grad);
    REQUIRE(g.d_xyz.size() == pr.model.size());
    double h = obj == Objective::r_factor ? 1e-7 : 1e-5;
    double tol = obj == Objective::r_factor ? 1e-3 : 1e-5;
    double scale = 0;
    for (const Vec3& v : g.d_xyz)
      scale = std::max(scale, v.cwiseAbs().maxCoeff());
    for (std::size_t j = 0; j < pr.model.size(); j += 3)
      for (int c = 0; c != 3; ++c) {
        AtomicModel p = pr.model, m = pr.model;
        p.atoms[j].xyz[c] += h;
        m.atoms[j].xyz[c] -= h;
        double fd = (value(p) - value(m)) / (2 * h);
        INFO("atom " << j << " axis " << c);
        CHECK(std::abs(g.d_xyz[j][c] - fd) <= tol * scale);
      }
    double bscale = 0;
    for (double v : g.d_b)
      bscale = std::max(bscale, std::abs(v));
    for (std::size_t j = 0; j < pr.model.size(); j += 2) {
      AtomicModel p = pr.model, m = pr.model;
      p.atoms[j].b_iso += h;
      m.atoms[j].b_iso -= h;
      double fd = (value(p) - value(m)) / (2 * h);
      INFO("B of atom " << j);
      CHECK(std::abs(g.d_b[j] - fd) <= tol * bscale);
    }
  }
}

TEST_CASE("free reflections do not enter the gradient") {
  Problem pr(31);
  ReflectionSet other = pr.refl;
  for (std::size_t i = 0; i != other.size(); ++i)
    if (other.free[i])
      other.f_obs[i] = other.f_obs[i] * 3 + 1;
  REQUIRE(pr.refl.free_count() > 0);
  for (Objective obj : {Objective::gauss, Objective::rice, Objective::r_factor, Objective::neg_cc}) {
    INFO(objective_name(obj));
    RefinementConfig rc;
    rc.objective = obj;
    ForwardModel fa(pr.cell, pr.sg, pr.refl, table());
    ForwardModel fb(pr.cell, pr.sg, other, table());
    auto sa = fa.initial_state(pr.model), sb = fb.initial_state(pr.model);
    fa.solve_scales(sa);
    fb.solve_scales(sb);
    LossValue la = refinement_objective(fa, sa, rc), lb = refinement_objective(fb, sb, rc);
    CHECK(la.value == lb.value);
    auto ga = fa.loss_gradients(pr.model, sa, la.grad);
    auto gb = fb.loss_gradients(pr.model, sb, lb.grad);
    CHECK(ga.d_xyz == gb.d_xyz);
    CHECK(ga.d_b == gb.d_b);
  }
}

TEST_CASE("isotropic U equals a B offset") {
  Problem pr(41, false);
  ForwardConfig fc;
  fc.use_solvent = false;
  ForwardModel fm(pr.cell, pr.sg, pr.refl, table(), fc);
  double db = 12;
  AtomicModel shifted = pr.model;
  for (Atom& a : shifted.atoms)
    a.b_iso += db;
  auto sa = fm.initial_state(shifted);
  auto sb = fm.initial_state(pr.model);
  fm.set_u_aniso(sb, Mat3::Identity() * db / (8 * std::numbers::pi * std::numbers::pi));
  fm.update_amplitudes(sb);
  CHECK(max_rel_diff(sb.f_calc_amp, sa.f_calc_amp) < 1e-12);

  // dL/dU against finite differences for L = sum w |F_c|
  std::vector<double> w(pr.refl.size());
  std::mt19937_64 rng(3);
  for (double& x : w)
    x = std::uniform_real_distribution<double>(-1, 1)(rng);
  Mat3 u0;
  u0 << 0.2, 0.01, -0.02, 0.01, 0.15, 0.03, -0.02, 0.03, 0.1;
  fm.set_u_aniso(sb, u0);
  fm.update_amplitudes(sb);
  Mat3 g = fm.u_aniso_gradient(sb, w);
  auto loss = [&](const Mat3& u) {
    auto s = sb;
    fm.set_u_aniso(s, u);
    fm.update_amplitudes(s);
    double l = 0;
    for (std::size_t i = 0; i != w.size(); ++i)
      l += w[i] * s.f_calc_amp[i];
    return l;
  };
  double h = 1e-6;
  for (int i = 0; i != 3; ++i) {
    Mat3 e = Mat3::Zero();
    e(i, i) = h;
    double fd = (loss(u0 + e) - loss(u0 - e)) / (2 * h);
    CHECK(g(i, i) == doctest::Approx(fd).epsilon(1e-5));
  }
}
