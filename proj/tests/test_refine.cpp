#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "support.hpp"
#include "xtalforge/align.hpp"
#include "xtalforge/diagnostics.hpp"
#include "xtalforge/refine.hpp"

using namespace xft;

namespace {

const ScatteringTable& table() { return ScatteringTable::bundled(); }

SynthBundle crystal(std::uint64_t seed, double b_lo = 20, double b_hi = 20, bool solvent = true) {
  SynthSpec spec;
  spec.n_atoms = 20;
  spec.seed = seed;
  spec.b_lo = b_lo;
  spec.b_hi = b_hi;
  spec.solvent = solvent;
  return synthesize(spec, table());
}

ForwardConfig fconfig(bool solvent = true) {
  ForwardConfig f;
  f.use_solvent = solvent;
  return f;
}

double coord_rmsd(const AtomicModel& a, const AtomicModel& b) {
  return rmsd(a.positions(), b.positions());
}

} // namespace

TEST_CASE("Adam") {
  std::vector<double> p = {1, -2, 3}, zero(3, 0.0);
  AdamState s;
  adam_step(p, zero, s, 0.1);
  CHECK(p == std::vector<double>{1, -2, 3});

  // first step with constant gradient: m_hat = g, v_hat = g^2, move = lr g / (|g| + eps)
  std::vector<double> q = {0, 0}, g = {3, -0.5};
  AdamState s2;
  adam_step(q, g, s2, 0.02);
  CHECK(q[0] == doctest::Approx(-0.02 * 3 / (3 + 1e-8)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(0.02 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));

  // two parameter groups, stepped separately or together, agree
  std::vector<double> a = {1, 2}, b = {5}, ab = {1, 2, 5};
  AdamState sa, sb, sab;
  for (int i = 0; i != 5; ++i) {
    std::vector<double> ga = {a[0] - 0.5, 2 * a[1]}, gb = {std::sin(b[0])};
    std::vector<double> gab = {ab[0] - 0.5, 2 * ab[1], std::sin(ab[2])};
    adam_step(a, ga, sa, 0.1);
    adam_step(b, gb, sb, 0.1);
    adam_step(ab, gab, sab, 0.1);
  }
  CHECK(a[0] == ab[0]);
  CHECK(a[1] == ab[1]);
  CHECK(b[0] == ab[2]);

  CHECK_THROWS_AS(adam_step(a, std::vector<double>{1}, sa, 0.1), std::invalid_argument);
}

TEST_CASE("pLDDT to B") {
  CHECK(plddt_to_b(100) == 1.0);
  CHECK(plddt_to_b(0) == 80.0);
  CHECK(plddt_to_b(50) == doctest::Approx(40.5));
  double prev = plddt_to_b(0.0);
  for (int i = 1; i <= 100; ++i) {
    double b = plddt_to_b(double(i));
    CHECK(b <= prev);
    CHECK(b >= 1.0);
    prev = b;
  }
  CHECK_THROWS_AS(plddt_to_b(-1), std::invalid_argument);
  CHECK_THROWS_AS(plddt_to_b(100.5), std::invalid_argument);
  std::vector<double> v = {90, 70};
  CHECK(plddt_to_b(v) == std::vector<double>{plddt_to_b(90), plddt_to_b(70)});

  AtomicModel m = random_model(4, UnitCell(10, 10, 10, 90, 90, 90), 1);
  m.atoms[0].b_iso = 100;
  m.atoms[1].b_iso = 0;
  m.atoms[2].b_iso = 95;
  m.atoms[3].b_iso = 150;
  RefinementConfig rc;
  AtomicModel u = m;
  initialize_b(u, rc);
  for (const Atom& a : u.atoms)
    CHECK(a.b_iso == 20.0);
  AtomicModel f = m;
  rc.b_init = BInit::from_file;
  initialize_b(f, rc);
  CHECK(f.atoms[1].b_iso == 1.0);
  CHECK(f.atoms[3].b_iso == 80.0);
  AtomicModel p = m;
  rc.b_init = BInit::from_plddt;
  m.atoms[3].b_iso = 50;
  p = m;
  initialize_b(p, rc);
  CHECK(p.atoms[0].b_iso == 1.0);
  CHECK(p.atoms[1].b_iso == 80.0);
  CHECK(parse_b_init("plddt") == BInit::from_plddt);
  CHECK_THROWS_AS(parse_b_init("wilson"), std::invalid_argument);
  CHECK(parse_objective("cc") == Objective::neg_cc);
  CHECK_THROWS_AS(parse_objective("ml"), std::invalid_argument);
}

TEST_CASE("perfect start stays put") {
  SynthBundle b = crystal(5);
  ForwardModel fm(b.cell, b.sg, b.refl, table());
  for (Objective o : {Objective::r_factor, Objective::gauss}) {
    INFO(objective_name(o));
    RefinementConfig rc;
    rc.objective = o;
    rc.b_init = BInit::from_file;
    RefinementResult r = refine(fm, b.truth, rc);
    CHECK(r.records.size() == 51);
    CHECK(coord_rmsd(r.model, b.truth) < 1e-3);
    CHECK(r.records[0].r_work < 1e-6);
  }
}

TEST_CASE("perturbed synthetic model is recovered") {
  SynthBundle b = crystal(7);
  ForwardModel fm(b.cell, b.sg, b.refl, table());
  AtomicModel start = perturb(b.truth, 0.3, 8);
  RefinementConfig rc;
  rc.n_steps = 200;
  rc.b_init = BInit::from_file;
  Coords ref = b.truth.positions();
  RefinementResult r = refine(fm, start, rc, ref);
  CHECK(coord_rmsd(start, b.truth) > 0.3);
  CHECK(coord_rmsd(r.model, b.truth) <= 0.1);
  CHECK(r.final.r_work <= 0.05);
  CHECK(r.final.r_work < r.initial.r_work);
  CHECK(r.records.back().rmsd < r.records.front().rmsd);
  CHECK(r.records.size() == 201);
  for (std::size_t i = 0; i != r.records.size(); ++i) {
    CHECK(r.records[i].step == int(i));
    CHECK(r.records[i].scales_solved == (i % 10 == 0));
  }
  // the returned model is the best iterate
  double best = r.records[0].objective;
  for (const auto& rec : r.records)
    best = std::min(best, rec.objective);
  CHECK(r.records[r.best_step].objective == best);

  auto m = metric_records(r, rc.objective);
  REQUIRE(m.size() == 201);
  CHECK(m[3]["phase"] == "refine");
  CHECK(m[3]["step"] == 3);
  CHECK(m[3]["objective"] == "r_factor");
  CHECK(m[3].contains("r_free"));
  CHECK(m[3].contains("rmsd_ref"));
}

TEST_CASE("B refinement helps with heterogeneous B") {
  int better_or_equal = 0;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    SynthBundle b = crystal(seed, 8, 60);
    ForwardModel fm(b.cell, b.sg, b.refl, table());
    AtomicModel start = perturb(b.truth, 0.3, seed + 100);
    RefinementConfig rc;
    rc.n_steps = 100;
    initialize_b(start, rc);  // uniform 20
    RefinementResult with_b = refine(fm, start, rc);
    rc.refine_b = false;
    RefinementResult frozen = refine(fm, start, rc);
    for (const Atom& a : frozen.model.atoms)
      CHECK(a.b_iso == rc.b_uniform);
    double r1 = coord_rmsd(with_b.model, b.truth), r0 = coord_rmsd(frozen.model, b.truth);
    MESSAGE("seed " << seed << ": RMSD with B " << r1 << ", frozen " << r0);
    better_or_equal += r1 <= r0;
  }
  CHECK(better_or_equal == 3);
}

TEST_CASE("B factors stay inside the bounds") {
  SynthBundle b = crystal(21, 5, 70);
  ForwardModel fm(b.cell, b.sg, b.refl, table());
  RefinementConfig rc;
  rc.n_steps = 30;
  rc.lr_b = 40;
  rc.increase_guard = 1e9;
  rc.b_init = BInit::from_file;
  AtomicModel start = perturb(b.truth, 0.2, 3);
  RefinementResult r = refine(fm, start, rc);
  for (const Atom& a : r.model.atoms) {
    CHECK(a.b_iso >= 1.0);
    CHECK(a.b_iso <= 80.0);
  }
  auto [lo, hi] = std::minmax_element(r.model.atoms.begin(), r.model.atoms.end(),
                                      [](const Atom& x, const Atom& y) { return x.b_iso < y.b_iso; });
  CHECK((lo->b_iso == 1.0 || hi->b_iso == 80.0));
}

TEST_CASE("logged objective equals a fresh recomputation") {
  SynthBundle b = crystal(31, 20, 20, false);
  ForwardModel fm(b.cell, b.sg, b.refl, table(), fconfig(false));
  AtomicModel start = perturb(b.truth, 0.25, 4);
  for (Objective o : {Objective::r_factor, Objective::neg_cc}) {
    INFO(objective_name(o));
    RefinementConfig rc;
    rc.objective = o;
    rc.n_steps = 25;
    rc.b_init = BInit::from_file;
    RefinementResult r = refine(fm, start, rc);
    StructureFactorState st = fm.initial_state(r.model);
    st.k_total = r.state.k_total;
    st.k_mask = r.state.k_mask;
    fm.update_amplitudes(st);
    auto work = fm.reflections().working_mask();
    double fresh = o == Objective::r_factor
                       ? r_factor(fm.reflections().f_obs, st.f_calc_amp, work)
                       : -pearson_cc(fm.reflections().f_obs, st.f_calc_amp, work);
    CHECK(std::abs(r.records[r.best_step].objective - fresh) <= 1e-10);
  }
}

TEST_CASE("free reflections never steer refinement") {
  SynthBundle b = crystal(41);
  ReflectionSet other = b.refl;
  REQUIRE(other.free_count() > 0);
  for (std::size_t i = 0; i != other.size(); ++i)
    if (other.free[i])
      other.f_obs[i] = 2 * other.f_obs[i] + 5;
  ForwardModel fa(b.cell, b.sg, b.refl, table()), fb(b.cell, b.sg, other, table());
  AtomicModel start = perturb(b.truth, 0.3, 6);
  for (Objective o : {Objective::r_factor, Objective::gauss, Objective::rice}) {
    INFO(objective_name(o));
    RefinementConfig rc;
    rc.objective = o;
    rc.n_steps = 20;
    RefinementResult ra = refine(fa, start, rc), rb = refine(fb, start, rc);
    CHECK(ra.model.positions() == rb.model.positions());
    CHECK(ra.model.b_factors() == rb.model.b_factors());
    CHECK(ra.records.back().r_work == rb.records.back().r_work);
    CHECK(ra.records.back().r_free != rb.records.back().r_free);
  }
}

TEST_CASE("objective increase halves the rates, then aborts") {
  SynthBundle b = crystal(51);
  ForwardModel fm(b.cell, b.sg, b.refl, table());
  RefinementConfig rc;
  rc.lr_xyz = 3.0;
  rc.n_steps = 20;
  AtomicModel start = perturb(b.truth, 0.2, 9);
  std::vector<std::string> warnings;
  auto old = set_warning_sink([&](const std::string& w) { warnings.push_back(w); });
  RefinementResult r = refine(fm, start, rc);
  set_warning_sink(old);
  CHECK(r.lr_halved);
  CHECK(r.aborted);
  CHECK(warnings.size() == 2);
  CHECK(r.records.size() < 21);
  double final_obj = r.records[r.best_step].objective;
  CHECK(final_obj <= r.records[0].objective);

  RefinementConfig zero;
  zero.n_steps = 0;
  zero.b_init = BInit::from_file;
  RefinementResult z = refine(fm, start, zero);
  CHECK(z.records.size() == 1);
  CHECK(z.model.positions() == start.positions());

  RefinementConfig badcfg;
  badcfg.b_min = 0;
  CHECK_THROWS_AS(refine(fm, start, badcfg), std::invalid_argument);
  CHECK_THROWS_AS(refine(fm, start, RefinementConfig{}, Coords(3)), std::invalid_argument);
}
