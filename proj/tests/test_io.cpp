#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bit>
#include <cstring>

#include "support.hpp"
#include "xtalforge/diagnostics.hpp"
#include "xtalforge/io.hpp"

using namespace xft;

namespace {

// Silences and counts warnings for the lifetime of the object.
struct WarningCounter {
  int n = 0;
  WarningSink prev;
  WarningCounter() { prev = set_warning_sink([this](const std::string&) { ++n; }); }
  ~WarningCounter() { set_warning_sink(prev); }
};

std::string expect_parse_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.what();
  }
  FAIL("expected ParseError");
  return {};
}

} // namespace

// ---------------------------------------------------------------- PDB

TEST_CASE("pdb: one-atom fixture") {
  PdbStructure s = read_pdb(read_file(data_path("one_atom.pdb")));
  REQUIRE(s.model.size() == 1);
  const Atom& a = s.model.atoms[0];
  CHECK(a.element == "C");
  CHECK(a.name == " CA ");
  CHECK(a.occ == 0.5);
  CHECK(a.b_iso == 25.0);
  CHECK(a.xyz == Vec3(1, 2, 3));
  CHECK(s.cell.a == 10.0);
  CHECK(s.cell.gamma == 90.0);
  CHECK(s.space_group == "P 1");

  std::string again = write_pdb(s.model, s.cell, s.space_group);
  PdbStructure t = read_pdb(again);
  REQUIRE(t.model.size() == 1);
  CHECK(t.model.atoms[0].xyz == a.xyz);
  CHECK(t.model.atoms[0].occ == a.occ);
  CHECK(t.model.atoms[0].b_iso == a.b_iso);
  CHECK(t.model.atoms[0].name == a.name);
  CHECK(write_pdb(t.model, t.cell, t.space_group) == again);
}

TEST_CASE("pdb: alternate locations and hydrogens") {
  PdbStructure s = read_pdb(read_file(data_path("altloc.pdb")));
  CHECK(s.altlocs_dropped == 2);
  CHECK(s.hydrogens == 1);
  REQUIRE(s.model.size() == 4);
  CHECK(s.model.atoms[1].altloc == 'B');  // occupancy 0.6 over 0.4
  CHECK(s.model.atoms[1].occ == 0.6);
  CHECK(s.model.atoms[2].altloc == 'A');  // 0.5 / 0.5 tie
  CHECK(s.model.atoms[3].element == "H");
}

TEST_CASE("pdb: errors") {
  std::string atom = "ATOM      1  CA  GLY A   1       1.000   2.000   3.000  1.00 20.00           C\n";
  CHECK(expect_parse_error([&] { read_pdb(atom); }).find("CRYST1") != std::string::npos);
  std::string cryst = "CRYST1   10.000   10.000   10.000  90.00  90.00  90.00 P 1           1\n";
  std::string bad = atom;
  bad.replace(38, 8, "   1.x00");
  std::string msg = expect_parse_error([&] { read_pdb(cryst + atom + bad); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK(msg.find("y coordinate") != std::string::npos);
  CHECK_THROWS_AS(read_pdb(cryst + atom.substr(0, 40)), ParseError);

  AtomicModel m = read_pdb(cryst + atom).model;
  m.atoms[0].xyz[0] = 12345.0;
  CHECK_THROWS_AS(write_pdb(m, UnitCell(10, 10, 10, 90, 90, 90), "P 1"), std::range_error);
  m.atoms[0].xyz[0] = -1000.5;
  CHECK_THROWS_AS(write_pdb(m, UnitCell(10, 10, 10, 90, 90, 90), "P 1"), std::range_error);
}

TEST_CASE("pdb: column precision") {
  UnitCell cell(50, 60, 70, 90, 95, 90);
  AtomicModel m = random_model(500, cell, 11, 1, 99);
  m.atoms[0].b_iso = 79.999;
  PdbStructure s = read_pdb(write_pdb(m, cell, "P 1 21 1"));
  REQUIRE(s.model.size() == 500);
  double worst = 0, worst_b = 0;
  for (std::size_t i = 0; i != 500; ++i) {
    worst = std::max(worst, (s.model.atoms[i].xyz - m.atoms[i].xyz).cwiseAbs().maxCoeff());
    worst_b = std::max(worst_b, std::abs(s.model.atoms[i].b_iso - m.atoms[i].b_iso));
    CHECK(s.model.atoms[i].element == m.atoms[i].element);
  }
  CHECK(worst <= 5e-4);
  CHECK(worst_b <= 5e-3);
  CHECK(s.model.atoms[0].b_iso == 80.0);
  CHECK(s.space_group == "P 1 21 1");
  CHECK(s.cell.approx_equal(cell, 1e-6));
}

// ---------------------------------------------------------------- MTZ

TEST_CASE("mtz: fixtures from an independent writer") {
  for (const char* name : {"three_le.mtz", "three_be.mtz"}) {
    INFO(name);
    ReflectionFile f = read_mtz(read_file(data_path(name)));
    REQUIRE(f.refl.size() == 3);
    CHECK(f.refl.free_count() == 1);
    CHECK(f.refl.free[0] == 1);
    CHECK(f.refl.hkl[1] == Miller{0, 2, 1});
    CHECK(f.refl.f_obs[1] == 7.75);
    CHECK(f.refl.sigma[2] == 0.125);
    REQUIRE(f.cell);
    CHECK(f.cell->c == 50.0);
    CHECK(f.space_group == "P 21 21 21");
    CHECK(f.symops.size() == 4);
    CHECK(f.f_label == "FP");
    CHECK(f.sigma_label == "SIGFP");
    CHECK(f.free_label == "FreeR_flag");
    SpaceGroup sg = resolve_space_group(f.space_group, f.symops);
    CHECK(sg.size() == 4);
  }
  MtzOptions one;
  one.free_value = 1;
  CHECK(read_mtz(read_file(data_path("three_le.mtz")), one).refl.free_count() == 2);
}

TEST_CASE("mtz: missing values are dropped and counted") {
  WarningCounter w;
  ReflectionFile f = read_mtz(read_file(data_path("missing_le.mtz")));
  CHECK(f.dropped == 2);
  CHECK(f.refl.size() == 2);
  CHECK(w.n >= 1);
}

TEST_CASE("mtz: round trip is bit-exact") {
  std::string orig = read_file(data_path("three_be.mtz"));
  ReflectionFile f = read_mtz(orig);
  SpaceGroup sg = resolve_space_group(f.space_group, f.symops);
  std::string w1 = write_mtz(f.refl, *f.cell, sg);
  ReflectionFile g = read_mtz(w1);
  CHECK(g.refl == f.refl);
  CHECK(write_mtz(g.refl, *g.cell, resolve_space_group(g.space_group, g.symops)) == w1);

  // random data, float-representable values
  UnitCell cell(40, 50, 60, 90, 90, 90);
  SpaceGroup p212121 = find_space_group("P 21 21 21");
  ReflectionSet r = hkl_set(cell, p212121, 3.0, 4, 0.05);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0, 1000);
  for (std::size_t i = 0; i != r.size(); ++i) {
    r.f_obs[i] = u(rng);
    r.sigma[i] = u(rng) / 100;
  }
  std::string bytes = write_mtz(r, cell, p212121);
  ReflectionFile h = read_mtz(bytes);
  REQUIRE(h.refl.size() == r.size());
  for (std::size_t i = 0; i != r.size(); ++i) {
    CHECK(h.refl.hkl[i] == r.hkl[i]);
    CHECK(std::bit_cast<std::uint64_t>(h.refl.f_obs[i]) ==
          std::bit_cast<std::uint64_t>(r.f_obs[i]));
    CHECK(h.refl.sigma[i] == r.sigma[i]);
    CHECK(h.refl.free[i] == r.free[i]);
  }
  CHECK(free_set_digest(h.refl) == free_set_digest(r));
  CHECK(h.cell->approx_equal(cell, 1e-6));
  CHECK(resolve_space_group(h.space_group, h.symops).size() == 4);
}

TEST_CASE("mtz: malformed and truncated input") {
  std::string good = read_file(data_path("three_le.mtz"));
  CHECK(expect_parse_error([&] { read_mtz("XYZ " + good.substr(4)); }).find("magic") !=
        std::string::npos);
  // every truncation before the END record is rejected with a ParseError
  std::size_t end_rec = good.find("END" + std::string(77, ' '));
  REQUIRE(end_rec != std::string::npos);
  for (std::size_t n = 0; n < end_rec + 80; n += 7)
    CHECK_THROWS_AS(read_mtz(good.substr(0, n)), ParseError);
  // corrupt the header pointer
  std::string bad = good;
  std::uint32_t huge = 1u << 30;
  std::memcpy(bad.data() + 4, &huge, 4);
  CHECK_THROWS_AS(read_mtz(bad), ParseError);
  // remove the H column label
  bad = good;
  auto pos = bad.find("COLUMN H ");
  REQUIRE(pos != std::string::npos);
  bad.replace(pos, 9, "COLUMN Q ");
  CHECK(expect_parse_error([&] { read_mtz(bad); }).find("H, K or L") != std::string::npos);
}

// ---------------------------------------------------------------- text reflections

TEST_CASE("text reflections") {
  ReflectionFile one = read_reflection_text("#xtalforge-refl v1\n1 0 0 12.5 0.3 0\n");
  REQUIRE(one.refl.size() == 1);
  CHECK(one.refl.free_count() == 0);
  CHECK(one.refl.f_obs[0] == 12.5);

  ReflectionFile empty = read_reflection_text("#xtalforge-refl v1\n");
  CHECK(empty.refl.size() == 0);
  CHECK_NOTHROW(empty.refl.validate());

  std::string msg = expect_parse_error(
      [] { read_reflection_text("#xtalforge-refl v1\n1 0 0 1 1 0\n2 0 0 1 1\n"); });
  CHECK(msg.find("row 2") != std::string::npos);
  CHECK_THROWS_AS(read_reflection_text("1 0 0 1 1 0\n"), ParseError);
  CHECK_THROWS_AS(read_reflection_text("#xtalforge-refl v1\n1 0 0 1 1 2\n"), ParseError);

  // 1000 random rows, bit-exact
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> ui(-30, 30);
  std::uniform_real_distribution<double> ud(0, 1e4);
  ReflectionSet r;
  std::set<Miller> seen;
  while (r.size() < 1000) {
    Miller m{ui(rng), ui(rng), ui(rng)};
    if (m.is_zero() || !seen.insert(m).second)
      continue;
    r.add(m, ud(rng), ud(rng) * 1e-3, rng() % 20 == 0);
  }
  UnitCell cell(11.1, 22.2, 33.3, 80, 90, 100);
  ReflectionFile back = read_reflection_text(write_reflection_text(r, cell, "P 1"));
  CHECK(back.refl == r);
  for (std::size_t i = 0; i != r.size(); ++i)
    CHECK(std::bit_cast<std::uint64_t>(back.refl.f_obs[i]) ==
          std::bit_cast<std::uint64_t>(r.f_obs[i]));
  CHECK(back.cell->alpha == 80.0);
  CHECK(back.space_group == "P 1");

  // dispatch on content
  CHECK(read_reflections(write_reflection_text(r)).refl.size() == 1000);
  CHECK(read_reflections(read_file(data_path("three_le.mtz"))).refl.size() == 3);
  CHECK_THROWS_AS(read_reflections("garbage"), ParseError);
}

// ---------------------------------------------------------------- metrics and config

TEST_CASE("metrics log: one record per line") {
  std::vector<MetricRecord> recs;
  for (int i = 0; i != 3; ++i) {
    MetricRecord m;
    m["step"] = i;
    m["objective"] = "r_factor";
    m["value"] = 0.1 / (i + 1);
    m["r_work"] = 0.2;
    m["r_free"] = 0.25;
    m["cc"] = 0.9;
    recs.push_back(m);
  }
  std::string text = format_metrics_log(recs);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  auto back = parse_metrics_log(text);
  REQUIRE(back.size() == 3);
  CHECK(back[2]["value"].get<double>() == 0.1 / 3);
  CHECK(back[1].dump() == recs[1].dump());
  CHECK_THROWS_AS(parse_metrics_log("{\"a\": 1}\n{oops\n"), ParseError);
}

TEST_CASE("config files") {
  Config c = Config::parse("top = 1\n[guidance]\n# comment\nstep_size = 0.02  # trailing\n"
                           "n_steps=100\n[refine]\nobjective = cc\n");
  CHECK(c.get("", "top") == "1");
  CHECK(c.get("guidance", "step_size") == "0.02");
  CHECK(c.get("guidance", "n_steps") == "100");
  CHECK(c.get("refine", "objective") == "cc");
  CHECK_FALSE(c.has("refine", "n_steps"));

  Config d;
  d.set("guidance", "n_steps", "7");
  c.merge(d);
  CHECK(c.get("guidance", "n_steps") == "7");
  CHECK(Config::parse(c.to_string()).sections() == c.sections());

  std::string msg = expect_parse_error([] { Config::parse("[ok]\na = 1\nno equals sign\n"); });
  CHECK(msg.find("line 3") != std::string::npos);
  CHECK_THROWS_AS(Config::parse("[unterminated\n"), ParseError);

  CHECK(parse_double("2.5", "x") == 2.5);
  CHECK_THROWS_AS(parse_double("2.5q", "x"), ParseError);
  CHECK(parse_int("-3", "x") == -3);
  CHECK_THROWS_AS(parse_int("3.0", "x"), ParseError);
  CHECK(parse_bool("On", "x"));
  CHECK_FALSE(parse_bool("false", "x"));
  CHECK_THROWS_AS(parse_bool("maybe", "x"), ParseError);
  for (double v : {0.1, 1e-300, 123456.789, -2.5e17})
    CHECK(parse_double(format_double(v), "v") == v);
}
