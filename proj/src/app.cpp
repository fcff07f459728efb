#include "xtalforge/app.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <omp.h>

#include "xtalforge/align.hpp"
#include "xtalforge/diagnostics.hpp"
#include "xtalforge/score.hpp"

namespace fs = std::filesystem;

namespace xtalforge {

// ---------------------------------------------------------------- config binding

namespace {

struct Field {
  std::string key;
  std::function<void(std::string_view, const std::string&)> set;
  std::function<std::string()> get;
};

std::uint64_t parse_u64(std::string_view s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError(what + ": expected a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

std::vector<double> parse_numbers(std::string_view s, std::size_t n, const std::string& what) {
  std::vector<double> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok)
    out.push_back(parse_double(tok, what));
  if (out.size() != n)
    throw ParseError(what + ": expected " + std::to_string(n) + " numbers, got '" +
                     std::string(s) + "'");
  return out;
}

Field f_double(const char* k, double& v) {
  return {k, [&v](std::string_view s, const std::string& w) { v = parse_double(s, w); },
          [&v] { return format_double(v); }};
}
Field f_int(const char* k, int& v) {
  return {k, [&v](std::string_view s, const std::string& w) { v = parse_int(s, w); },
          [&v] { return std::to_string(v); }};
}
Field f_bool(const char* k, bool& v) {
  return {k, [&v](std::string_view s, const std::string& w) { v = parse_bool(s, w); },
          [&v] { return std::string(v ? "true" : "false"); }};
}
Field f_u64(const char* k, std::uint64_t& v) {
  return {k, [&v](std::string_view s, const std::string& w) { v = parse_u64(s, w); },
          [&v] { return std::to_string(v); }};
}
Field f_size(const char* k, std::size_t& v) {
  return {k,
          [&v](std::string_view s, const std::string& w) {
            v = static_cast<std::size_t>(parse_u64(s, w));
          },
          [&v] { return std::to_string(v); }};
}
Field f_string(const char* k, std::string& v) {
  return {k, [&v](std::string_view s, const std::string&) { v = std::string(s); },
          [&v] { return v; }};
}

std::vector<Field> fields(GuidanceConfig& g) {
  return {f_int("n_steps", g.n_steps),
          f_int("guidance_start", g.guidance_start),
          f_double("step_size", g.step_size),
          f_double("lambda_gauss", g.lambda_gauss),
          f_double("lambda_rice", g.lambda_rice),
          f_double("sigma_a", g.sigma_a),
          f_u64("seed", g.seed),
          f_double("beta_min", g.beta_min),
          f_double("beta_max", g.beta_max),
          f_bool("align", g.align),
          {"align_weights",
           [&g](std::string_view s, const std::string& w) {
             if (s == "heavy_atoms")
               g.align_weights = AlignWeights::heavy_atoms;
             else if (s == "c_alpha")
               g.align_weights = AlignWeights::c_alpha;
             else
               throw ParseError(w + ": expected heavy_atoms or c_alpha, got '" + std::string(s) +
                                "'");
           },
           [&g] {
             return std::string(g.align_weights == AlignWeights::c_alpha ? "c_alpha"
                                                                         : "heavy_atoms");
           }}};
}

std::vector<Field> fields(RefinementConfig& r) {
  return {f_int("n_steps", r.n_steps),
          {"objective",
           [&r](std::string_view s, const std::string& w) {
             try {
               r.objective = parse_objective(s);
             } catch (const std::invalid_argument& e) {
               throw ParseError(w + ": " + e.what());
             }
           },
           [&r] { return objective_name(r.objective); }},
          f_double("lr_xyz", r.lr_xyz),
          f_double("lr_b", r.lr_b),
          f_double("lr_u", r.lr_u),
          f_double("adam_beta1", r.adam_beta1),
          f_double("adam_beta2", r.adam_beta2),
          f_double("adam_eps", r.adam_eps),
          f_double("b_min", r.b_min),
          f_double("b_max", r.b_max),
          f_int("scale_solve_interval", r.scale_solve_interval),
          f_bool("refine_xyz", r.refine_xyz),
          f_bool("refine_b", r.refine_b),
          f_bool("refine_u_aniso", r.refine_u_aniso),
          {"b_init",
           [&r](std::string_view s, const std::string& w) {
             try {
               r.b_init = parse_b_init(s);
             } catch (const std::invalid_argument& e) {
               throw ParseError(w + ": " + e.what());
             }
           },
           [&r] { return b_init_name(r.b_init); }},
          f_double("b_uniform", r.b_uniform),
          f_double("increase_guard", r.increase_guard),
          f_double("sigma_a", r.likelihood.sigma_a),
          f_double("lambda_gauss", r.likelihood.lambda_gauss),
          f_double("lambda_rice", r.likelihood.lambda_rice)};
}

std::vector<Field> fields(ForwardConfig& f) {
  return {f_int("n_bins", f.n_bins),
          f_double("k_total_init", f.k_total_init),
          f_double("k_mask_init", f.k_mask_init),
          f_bool("use_solvent", f.use_solvent),
          f_double("r_probe", f.r_probe),
          f_double("r_shrink", f.r_shrink),
          f_double("grid_spacing", f.grid_spacing),
          f_size("max_grid_points", f.max_grid_points),
          {"u_aniso",
           [&f](std::string_view s, const std::string& w) {
             auto p = parse_numbers(s, 6, w);
             f.u_aniso << p[0], p[3], p[4], p[3], p[1], p[5], p[4], p[5], p[2];
           },
           [&f] {
             const Mat3& u = f.u_aniso;
             return format_double(u(0, 0)) + " " + format_double(u(1, 1)) + " " +
                    format_double(u(2, 2)) + " " + format_double(u(0, 1)) + " " +
                    format_double(u(0, 2)) + " " + format_double(u(1, 2));
           }}};
}

std::string cell_text(const UnitCell& c) {
  return format_double(c.a) + " " + format_double(c.b) + " " + format_double(c.c) + " " +
         format_double(c.alpha) + " " + format_double(c.beta) + " " + format_double(c.gamma);
}

UnitCell parse_cell(std::string_view s, const std::string& what) {
  auto p = parse_numbers(s, 6, what);
  try {
    return UnitCell(p[0], p[1], p[2], p[3], p[4], p[5]);
  } catch (const std::invalid_argument& e) {
    throw ParseError(what + ": " + e.what());
  }
}

std::vector<Field> fields(SynthSpec& s) {
  return {{"cell",
           [&s](std::string_view v, const std::string& w) { s.cell = parse_cell(v, w); },
           [&s] { return cell_text(s.cell); }},
          f_string("space_group", s.space_group),
          f_int("n_atoms", s.n_atoms),
          f_u64("seed", s.seed),
          f_double("d_min", s.d_min),
          f_double("bond", s.bond),
          f_double("min_contact", s.min_contact),
          f_double("domain_radius", s.domain_radius),
          f_double("b_lo", s.b_lo),
          f_double("b_hi", s.b_hi),
          f_double("free_fraction", s.free_fraction),
          f_double("sigma_rel", s.sigma_rel),
          f_double("noise_rel", s.noise_rel),
          f_double("k_total", s.k_total),
          f_double("k_mask", s.k_mask),
          f_bool("solvent", s.solvent)};
}

void apply_fields(const Config& c, const std::string& section, const std::vector<Field>& fs) {
  auto it = c.sections().find(section);
  if (it == c.sections().end())
    return;
  for (const auto& [key, value] : it->second) {
    auto f = std::find_if(fs.begin(), fs.end(), [&](const Field& x) { return x.key == key; });
    if (f == fs.end())
      throw ParseError("[" + section + "] unknown key '" + key + "'");
    f->set(value, section + "." + key);
  }
}

void store_fields(Config& c, const std::string& section, const std::vector<Field>& fs) {
  for (const Field& f : fs)
    c.set(section, f.key, f.get());
}

} // namespace

void apply_config(const Config& c, GuidanceConfig& g) { apply_fields(c, "guidance", fields(g)); }
void apply_config(const Config& c, RefinementConfig& r) { apply_fields(c, "refine", fields(r)); }
void apply_config(const Config& c, ForwardConfig& f) { apply_fields(c, "forward", fields(f)); }
void apply_config(const Config& c, SynthSpec& s) { apply_fields(c, "synth", fields(s)); }

void store_config(Config& c, const GuidanceConfig& g) {
  GuidanceConfig x = g;
  store_fields(c, "guidance", fields(x));
}
void store_config(Config& c, const RefinementConfig& r) {
  RefinementConfig x = r;
  store_fields(c, "refine", fields(x));
}
void store_config(Config& c, const ForwardConfig& f) {
  ForwardConfig x = f;
  store_fields(c, "forward", fields(x));
}
void store_config(Config& c, const SynthSpec& s) {
  SynthSpec x = s;
  store_fields(c, "synth", fields(x));
}

PriorSpec parse_prior_spec(std::string_view text) {
  Config c = Config::parse(text);
  PriorSpec p;
  std::vector<Field> fs = {f_string("type", p.type), f_string("center", p.center),
                           f_double("sigma0", p.sigma0), f_int("fold_step", p.fold_step),
                           f_double("collapse", p.collapse)};
  for (const auto& [section, kv] : c.sections())
    if (section != "prior")
      throw ParseError("prior file: unexpected section [" + section + "]");
  apply_fields(c, "prior", fs);
  if (p.type != "gaussian" && p.type != "collapsing")
    throw ParseError("prior.type: expected gaussian or collapsing, got '" + p.type + "'");
  if (p.center.empty())
    throw ParseError("prior.center: missing");
  if (!(p.sigma0 >= 0))
    throw ParseError("prior.sigma0: must be >= 0");
  return p;
}

std::string format_prior_spec(const PriorSpec& p) {
  Config c;
  c.set("prior", "type", p.type);
  c.set("prior", "center", p.center);
  c.set("prior", "sigma0", format_double(p.sigma0));
  if (p.type == "collapsing") {
    c.set("prior", "fold_step", std::to_string(p.fold_step));
    c.set("prior", "collapse", format_double(p.collapse));
  }
  return c.to_string();
}

// ---------------------------------------------------------------- commands

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out = "xtalforge-out";
  std::optional<std::uint64_t> seed;
  std::string reference;
  int threads = 0;

  std::string model, reflections, prior;
  std::string seeds;
  std::optional<int> steps;
  std::string objective;
  std::optional<double> rho;
  std::optional<int> guidance_start;
  std::optional<int> sampling_steps;
  std::string cell, space_group;
  bool swap_free = false;
  bool force = false;
  std::optional<int> n_atoms;
  std::optional<double> d_min;
  std::optional<double> noise;
  std::optional<double> perturb;
  std::optional<double> offset;
  std::optional<double> sigma0;
};

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '#', ' ');
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Phase bookkeeping and the manifest of one run.
class Run {
public:
  Run(std::string command, fs::path out) : command_(std::move(command)), out_(std::move(out)) {
    start_ = std::chrono::steady_clock::now();
  }

  template <class F>
  auto phase(const std::string& name, F&& f) {
    phase_ = name;
    auto t0 = std::chrono::steady_clock::now();
    struct Stop {
      Run* r;
      std::string name;
      std::chrono::steady_clock::time_point t0;
      ~Stop() {
        r->timings_[name] +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    } stop{this, name, t0};
    return f();
  }

  const std::string& current_phase() const { return phase_; }
  Config& resolved() { return resolved_; }
  const fs::path& out() const { return out_; }

  std::string read_input(const std::string& key, const std::string& path) {
    std::string bytes;
    try {
      bytes = read_file(path);
    } catch (const std::exception& e) {
      throw std::runtime_error(key + " '" + path + "': " + e.what());
    }
    resolved_.set("run", key, path);
    digests_[key] = hex64(fnv1a(bytes.data(), bytes.size()));
    return bytes;
  }

  void note(const std::string& key, const std::string& value) { notes_[key] = value; }

  void write_output(const std::string& name, std::string_view bytes) {
    fs::create_directories(out_);
    write_file((out_ / name).string(), bytes);
  }

  void write_manifest(bool ok, const std::string& error, int warnings) {
    Config m = resolved_;
    m.set("manifest", "command", command_);
    m.set("manifest", "tool_version", tool_version);
    m.set("manifest", "status", ok ? "ok" : "failed");
    if (!ok) {
      m.set("manifest", "failed_phase", phase_);
      m.set("manifest", "error", one_line(error));
    }
    m.set("manifest", "warnings", std::to_string(warnings));
    for (const auto& [k, v] : notes_)
      m.set("manifest", k, v);
    for (const auto& [k, v] : digests_)
      m.set("digests", k, "fnv1a64:" + v);
    double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    for (const auto& [k, v] : timings_)
      m.set("timing", k + "_seconds", format_double(v));
    m.set("timing", "total_seconds", format_double(total));
    fs::create_directories(out_);
    write_file((out_ / "manifest").string(), m.to_string());
  }

private:
  std::string command_;
  fs::path out_;
  std::string phase_ = "setup";
  Config resolved_;
  std::map<std::string, std::string> digests_, notes_;
  std::map<std::string, double> timings_;
  std::chrono::steady_clock::time_point start_;
};

// Command-level inputs live in [run]; CLI values win over the file.
std::string run_value(const Config& c, const std::string& key, const std::string& cli) {
  if (!cli.empty())
    return cli;
  return c.get("run", key).value_or("");
}

std::string require_input(const Config& c, const std::string& key, const std::string& cli) {
  std::string v = run_value(c, key, cli);
  if (v.empty())
    throw std::invalid_argument("missing input: " + key);
  return v;
}

PdbStructure load_pdb(Run& run, const std::string& key, const std::string& path) {
  std::string text = run.read_input(key, path);
  try {
    return read_pdb(text);
  } catch (const std::exception& e) {
    throw ParseError(key + " '" + path + "': " + e.what());
  }
}

ReflectionFile load_reflections(Run& run, const std::string& path) {
  std::string bytes = run.read_input("reflections", path);
  try {
    return read_reflections(bytes);
  } catch (const std::exception& e) {
    throw ParseError("reflections '" + path + "': " + e.what());
  }
}

std::vector<std::string> sorted_triplets(const SpaceGroup& sg) {
  std::vector<std::string> t;
  for (const SymOp& op : sg.ops)
    t.push_back(op.triplet());
  std::sort(t.begin(), t.end());
  return t;
}

struct Crystal {
  UnitCell cell;
  SpaceGroup sg;
  ReflectionSet refl;
};

// Cell and space group from the reflection file, falling back to the
// model; a disagreement beyond 1% (or different operators) is an error
// unless forced.
Crystal crystal_for(const Config& c, ReflectionFile rf, const PdbStructure* pdb, bool force) {
  Crystal out;
  std::string cell_override = c.get("run", "cell").value_or("");
  std::string sg_override = c.get("run", "space_group").value_or("");
  if (!cell_override.empty())
    out.cell = parse_cell(cell_override, "run.cell");
  else if (rf.cell)
    out.cell = *rf.cell;
  else if (pdb)
    out.cell = pdb->cell;
  else
    throw std::invalid_argument("no unit cell: the reflection file has none and no model or "
                                "--cell was given");
  if (cell_override.empty() && rf.cell && pdb && !rf.cell->approx_equal(pdb->cell, 0.01)) {
    if (!force)
      throw std::invalid_argument("model cell (" + cell_text(pdb->cell) +
                                  ") differs from the data cell (" + cell_text(*rf.cell) +
                                  ") by more than 1%; use --force to proceed");
    warn("model and data cells differ by more than 1%, continuing (--force)");
  }

  if (!sg_override.empty())
    out.sg = resolve_space_group(sg_override);
  else if (!rf.space_group.empty() || !rf.symops.empty())
    out.sg = resolve_space_group(rf.space_group, rf.symops);
  else if (pdb && !pdb->space_group.empty())
    out.sg = resolve_space_group(pdb->space_group);
  else
    throw std::invalid_argument("no space group in the inputs; pass --space-group");
  if (sg_override.empty() && pdb && !pdb->space_group.empty() &&
      (!rf.space_group.empty() || !rf.symops.empty())) {
    SpaceGroup model_sg = resolve_space_group(pdb->space_group);
    if (sorted_triplets(model_sg) != sorted_triplets(out.sg)) {
      if (!force)
        throw std::invalid_argument("model space group '" + pdb->space_group +
                                    "' differs from the data space group '" + out.sg.name +
                                    "'; use --force to proceed");
      warn("model and data space groups differ, continuing (--force)");
    }
  }
  out.refl = std::move(rf.refl);
  out.refl.validate();
  assign_metadata(out.refl, out.cell, out.sg);
  return out;
}

MetricRecord agreement_record(const std::string& phase, const Agreement& a) {
  MetricRecord r;
  r["phase"] = phase;
  r["r_work"] = a.r_work;
  r["r_free"] = a.r_free;
  r["cc"] = a.cc_work;
  return r;
}

std::string fixed(double v, int prec = 4) {
  if (!std::isfinite(v))
    return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::string tok;
  std::istringstream in(s);
  while (std::getline(in, tok, ','))
    if (!tok.empty())
      out.push_back(parse_u64(tok, "seeds"));
  if (out.empty())
    throw ParseError("seeds: empty list");
  return out;
}

// ---- stats

void cmd_stats(const Options& o, const Config& c, Run& run, std::ostream& out) {
  ForwardConfig fcfg;
  apply_config(c, fcfg);
  store_config(run.resolved(), fcfg);
  Crystal x = run.phase("load", [&] {
    ReflectionFile rf = load_reflections(run, require_input(c, "reflections", o.reflections));
    return crystal_for(c, std::move(rf), nullptr, o.force);
  });
  const ReflectionSet& r = x.refl;
  std::vector<MetricRecord> recs;
  run.phase("stats", [&] {
    std::size_t n = r.size();
    std::size_t n_centric = std::count(r.centric.begin(), r.centric.end(), char(1));
    std::size_t n_free = r.free_count();
    out << "reflections " << n << "\n";
    if (n == 0)
      return;
    double dmin = r.d_min(), dmax = r.d_max();
    out << "resolution " << fixed(dmax, 3) << " - " << fixed(dmin, 3) << " A\n";
    out << "centric " << n_centric << "\n";
    out << "free " << n_free << " fraction " << fixed(double(n_free) / n, 4) << "\n";
    MetricRecord head;
    head["phase"] = "stats";
    head["reflections"] = n;
    head["d_max"] = dmax;
    head["d_min"] = dmin;
    head["centric"] = n_centric;
    head["free"] = n_free;
    head["free_fraction"] = double(n_free) / n;
    recs.push_back(head);

    // bins equally spaced in 1/d^3 between the observed limits
    int nb = std::max(1, fcfg.n_bins);
    double lo = 1 / (dmax * dmax * dmax), hi = 1 / (dmin * dmin * dmin);
    auto bin_of = [&](double d) {
      double u = hi > lo ? (1 / (d * d * d) - lo) / (hi - lo) : 0.0;
      return std::clamp(static_cast<int>(u * nb), 0, nb - 1);
    };
    std::vector<std::size_t> obs(nb), possible(nb), cen(nb);
    std::vector<double> f2(nb);
    for (std::size_t i = 0; i != n; ++i) {
      int b = bin_of(r.d[i]);
      ++obs[b];
      cen[b] += r.centric[i] ? 1 : 0;
      f2[b] += r.f_obs[i] * r.f_obs[i] / r.epsilon[i];
    }
    for (const Miller& m : unique_reflections(x.cell, x.sg, dmin)) {
      double d = resolution(x.cell, m);
      if (d <= dmax * (1 + 1e-9))
        ++possible[bin_of(d)];
    }
    out << "bin  d_max    d_min    n_obs  n_possible  completeness  centric  <|F|^2/eps>\n";
    for (int b = 0; b != nb; ++b) {
      double bl = lo + (hi - lo) * b / nb, bh = lo + (hi - lo) * (b + 1) / nb;
      double d_hi = std::cbrt(1 / bl), d_lo = std::cbrt(1 / bh);
      double comp = possible[b] ? double(obs[b]) / possible[b] : 0.0;
      double mean = obs[b] ? f2[b] / obs[b] : 0.0;
      char line[160];
      std::snprintf(line, sizeof line, "%3d  %7.3f  %7.3f  %5zu  %10zu  %12.4f  %7zu  %.6g\n", b,
                    d_hi, d_lo, obs[b], possible[b], comp, cen[b], mean);
      out << line;
      MetricRecord rec;
      rec["phase"] = "stats_bin";
      rec["bin"] = b;
      rec["d_max"] = d_hi;
      rec["d_min"] = d_lo;
      rec["n_obs"] = obs[b];
      rec["n_possible"] = possible[b];
      rec["completeness"] = comp;
      rec["centric"] = cen[b];
      rec["mean_f2_over_eps"] = mean;
      recs.push_back(rec);
    }
  });
  run.phase("write", [&] { run.write_output("metrics.log", format_metrics_log(recs)); });
}

// ---- score

void cmd_score(const Options& o, const Config& c, Run& run, std::ostream& out) {
  ForwardConfig fcfg;
  apply_config(c, fcfg);
  store_config(run.resolved(), fcfg);
  bool swap = o.swap_free || parse_bool(c.get("run", "swap_free_flags").value_or("false"),
                                        "run.swap_free_flags");
  run.resolved().set("run", "swap_free_flags", swap ? "true" : "false");
  PdbStructure pdb;
  std::optional<PdbStructure> ref;
  Crystal x = run.phase("load", [&] {
    pdb = load_pdb(run, "model", require_input(c, "model", o.model));
    std::string rp = run_value(c, "reference", o.reference);
    if (!rp.empty())
      ref = load_pdb(run, "reference", rp);
    ReflectionFile rf = load_reflections(run, require_input(c, "reflections", o.reflections));
    return crystal_for(c, std::move(rf), &pdb, o.force);
  });
  if (swap)
    x.refl.swap_free_flags();
  Agreement a = run.phase("score", [&] {
    ForwardModel fm(x.cell, x.sg, x.refl, ScatteringTable::bundled(), fcfg);
    return score_model(fm, pdb.model);
  });
  MetricRecord rec = agreement_record("score", a);
  out << "R_work " << fixed(a.r_work, 6) << "\n";
  out << "R_free " << fixed(a.r_free, 6) << "\n";
  out << "CC " << fixed(a.cc_work, 6) << "\n";
  if (ref) {
    double g = rmsd(pdb.model, ref->model, RmsdSubset::all_atoms);
    rec["rmsd_ref"] = g;
    out << "RMSD_all " << fixed(g, 4) << "\n";
    if (!pdb.model.calpha_indices().empty()) {
      double ca = rmsd(pdb.model, ref->model, RmsdSubset::c_alpha);
      rec["rmsd_ref_ca"] = ca;
      out << "RMSD_CA " << fixed(ca, 4) << "\n";
    }
  }
  run.phase("write", [&] { run.write_output("metrics.log", format_metrics_log({rec})); });
}

// ---- refine

MetricRecord summary_record(const RefinementResult& r, int steps) {
  MetricRecord m;
  m["phase"] = "summary";
  m["steps"] = steps;
  m["best_step"] = r.best_step;
  m["initial_r_work"] = r.initial.r_work;
  m["initial_r_free"] = r.initial.r_free;
  m["initial_cc"] = r.initial.cc_work;
  m["final_r_work"] = r.final.r_work;
  m["final_r_free"] = r.final.r_free;
  m["final_cc"] = r.final.cc_work;
  m["lr_halved"] = r.lr_halved;
  m["aborted"] = r.aborted;
  return m;
}

void cmd_refine(const Options& o, Config c, Run& run, std::ostream& out) {
  if (o.steps)
    c.set("refine", "n_steps", std::to_string(*o.steps));
  if (!o.objective.empty())
    c.set("refine", "objective", o.objective);
  ForwardConfig fcfg;
  RefinementConfig rcfg;
  apply_config(c, fcfg);
  apply_config(c, rcfg);
  store_config(run.resolved(), fcfg);
  store_config(run.resolved(), rcfg);
  run.note("b_policy", rcfg.b_init == BInit::from_plddt
                           ? "from_plddt: B = b_max - (b_max - b_min) * pLDDT / 100"
                           : b_init_name(rcfg.b_init));
  PdbStructure pdb;
  std::optional<PdbStructure> ref;
  Crystal x = run.phase("load", [&] {
    pdb = load_pdb(run, "model", require_input(c, "model", o.model));
    std::string rp = run_value(c, "reference", o.reference);
    if (!rp.empty())
      ref = load_pdb(run, "reference", rp);
    ReflectionFile rf = load_reflections(run, require_input(c, "reflections", o.reflections));
    return crystal_for(c, std::move(rf), &pdb, o.force);
  });
  ForwardModel fm(x.cell, x.sg, x.refl, ScatteringTable::bundled(), fcfg);
  AtomicModel start = pdb.model;
  initialize_b(start, rcfg);
  Coords refxyz;
  if (ref)
    refxyz = ref->model.positions();
  RefinementResult res = run.phase("phase2", [&] { return refine(fm, start, rcfg, refxyz); });
  out << "R_work " << fixed(res.initial.r_work) << " -> " << fixed(res.final.r_work) << "\n";
  out << "R_free " << fixed(res.initial.r_free) << " -> " << fixed(res.final.r_free) << "\n";
  out << "CC " << fixed(res.initial.cc_work) << " -> " << fixed(res.final.cc_work) << "\n";
  run.phase("write", [&] {
    std::vector<MetricRecord> recs = metric_records(res, rcfg.objective, "refine");
    recs.push_back(summary_record(res, rcfg.n_steps));
    run.write_output("model.pdb", write_pdb(res.model, x.cell, x.sg.name));
    run.write_output("metrics.log", format_metrics_log(recs));
  });
}

// ---- guide

struct GuideOutcome {
  std::uint64_t seed = 0;
  Agreement final;
  double rmsd_ref = std::numeric_limits<double>::quiet_NaN();
};

std::vector<MetricRecord> trace_records(const std::vector<TraceStep>& trace) {
  std::vector<MetricRecord> out;
  for (const TraceStep& t : trace) {
    MetricRecord m;
    m["phase"] = "guide";
    m["step"] = t.step;
    m["guided"] = t.guided;
    m["skipped"] = t.skipped;
    m["objective"] = "guidance";
    m["value"] = t.loss;
    m["rho"] = t.rho;
    m["grad_norm"] = t.grad_norm;
    m["r_work"] = t.r_work;
    m["r_free"] = t.r_free;
    out.push_back(std::move(m));
  }
  return out;
}

void cmd_guide(const Options& o, Config c, Run& top, std::ostream& out) {
  if (o.seed)
    c.set("guidance", "seed", std::to_string(*o.seed));
  if (o.rho)
    c.set("guidance", "step_size", format_double(*o.rho));
  if (o.guidance_start)
    c.set("guidance", "guidance_start", std::to_string(*o.guidance_start));
  if (o.sampling_steps)
    c.set("guidance", "n_steps", std::to_string(*o.sampling_steps));
  if (o.steps)
    c.set("refine", "n_steps", std::to_string(*o.steps));
  if (!o.objective.empty())
    c.set("refine", "objective", o.objective);
  if (!o.seeds.empty())
    c.set("run", "seeds", o.seeds);
  ForwardConfig fcfg;
  GuidanceConfig gcfg;
  RefinementConfig rcfg;
  apply_config(c, fcfg);
  apply_config(c, gcfg);
  apply_config(c, rcfg);
  gcfg.validate();
  rcfg.validate();

  std::vector<std::uint64_t> seeds;
  std::string seed_list = c.get("run", "seeds").value_or("");
  if (!seed_list.empty())
    seeds = parse_seeds(seed_list);
  else
    seeds = {gcfg.seed};

  // inputs are loaded once, every seed gets its own Run in a subdirectory
  // when more than one is requested
  PdbStructure center, refpdb;
  PriorSpec ps;
  bool has_ref = false;
  Crystal x = top.phase("load", [&] {
    std::string prior_path = require_input(c, "prior", o.prior);
    ps = parse_prior_spec(top.read_input("prior", prior_path));
    fs::path cp = fs::path(ps.center);
    if (cp.is_relative())
      cp = fs::path(prior_path).parent_path() / cp;
    center = load_pdb(top, "prior_center", cp.string());
    top.resolved().set("run", "prior_center", cp.string());
    std::string rp = run_value(c, "reference", o.reference);
    if (!rp.empty()) {
      refpdb = load_pdb(top, "reference", rp);
      has_ref = true;
      if (refpdb.model.size() != center.model.size())
        throw std::invalid_argument("reference and prior center have different atom counts");
    }
    ReflectionFile rf = load_reflections(top, require_input(c, "reflections", o.reflections));
    return crystal_for(c, std::move(rf), &center, o.force);
  });
  ForwardModel fm(x.cell, x.sg, x.refl, ScatteringTable::bundled(), fcfg);
  const AtomicModel& align_model = has_ref ? refpdb.model : center.model;
  Coords align_ref = align_model.positions();
  std::vector<double> weights = alignment_weights(align_model, gcfg.align_weights);
  Coords rmsd_ref = has_ref ? refpdb.model.positions() : Coords{};

  std::unique_ptr<DenoisingPrior> prior;
  ToyGaussianPrior base(center.model.positions(), ps.sigma0);
  if (ps.type == "collapsing")
    prior = std::make_unique<CollapsingPrior>(base, ps.fold_step, ps.collapse);
  else
    prior = std::make_unique<ToyGaussianPrior>(base);
  LikelihoodConfig lik;
  lik.sigma_a = gcfg.sigma_a;
  lik.lambda_gauss = gcfg.lambda_gauss;
  lik.lambda_rice = gcfg.lambda_rice;

  std::vector<GuideOutcome> outcomes;
  for (std::uint64_t seed : seeds) {
    GuidanceConfig g = gcfg;
    g.seed = seed;
    bool batch = seeds.size() > 1;
    Run local("guide", batch ? top.out() / ("seed_" + std::to_string(seed)) : top.out());
    Run& run = batch ? local : top;
    if (batch)
      run.resolved() = top.resolved();
    store_config(run.resolved(), fcfg);
    store_config(run.resolved(), g);
    store_config(run.resolved(), rcfg);
    run.resolved().set("prior", "type", ps.type);
    run.resolved().set("prior", "sigma0", format_double(ps.sigma0));
    if (ps.type == "collapsing") {
      run.resolved().set("prior", "fold_step", std::to_string(ps.fold_step));
      run.resolved().set("prior", "collapse", format_double(ps.collapse));
    }
    auto body = [&] {
      CrystalGuidance guidance(fm, center.model, lik);
      GuidanceFn fn;
      if (g.step_size > 0)
        fn = std::ref(guidance);
      SampleResult s = run.phase("phase1", [&] {
        return dps_sample(*prior, fn, align_ref, weights, g);
      });
      AtomicModel sampled = center.model;
      sampled.set_positions(s.x0);
      initialize_b(sampled, rcfg);
      RefinementResult r =
          run.phase("phase2", [&] { return refine(fm, sampled, rcfg, rmsd_ref); });
      run.phase("write", [&] {
        std::vector<MetricRecord> recs = trace_records(s.trace);
        for (MetricRecord& m : metric_records(r, rcfg.objective, "refine"))
          recs.push_back(std::move(m));
        recs.push_back(summary_record(r, rcfg.n_steps));
        run.write_output("model.pdb", write_pdb(r.model, x.cell, x.sg.name));
        run.write_output("metrics.log", format_metrics_log(recs));
      });
      run.note("guidance_calls", std::to_string(s.guidance_calls));
      GuideOutcome oc;
      oc.seed = seed;
      oc.final = r.final;
      if (!r.records.empty())
        oc.rmsd_ref = r.records[r.best_step].rmsd;
      outcomes.push_back(oc);
      out << "seed " << seed << "  R_work " << fixed(r.final.r_work) << "  R_free "
          << fixed(r.final.r_free) << "\n";
    };
    if (!batch) {
      body();
      continue;
    }
    int warnings = 0;
    WarningSink prev = set_warning_sink([&](const std::string& m) {
      ++warnings;
      std::fprintf(stderr, "warning: %s\n", m.c_str());
    });
    try {
      body();
      set_warning_sink(prev);
      run.write_manifest(true, "", warnings);
    } catch (const std::exception& e) {
      set_warning_sink(prev);
      run.write_manifest(false, e.what(), warnings);
      throw;
    }
  }

  if (seeds.size() > 1) {
    std::stable_sort(outcomes.begin(), outcomes.end(), [](const auto& a, const auto& b) {
      double fa = std::isnan(a.final.r_free) ? INFINITY : a.final.r_free;
      double fb = std::isnan(b.final.r_free) ? INFINITY : b.final.r_free;
      return fa < fb;
    });
    std::vector<MetricRecord> recs;
    out << "ranking by R_free\n";
    for (std::size_t i = 0; i != outcomes.size(); ++i) {
      const GuideOutcome& oc = outcomes[i];
      MetricRecord m = agreement_record("ranking", oc.final);
      m["rank"] = i + 1;
      m["seed"] = oc.seed;
      if (std::isfinite(oc.rmsd_ref))
        m["rmsd_ref"] = oc.rmsd_ref;
      recs.push_back(m);
      out << "  " << i + 1 << ". seed " << oc.seed << "  R_free " << fixed(oc.final.r_free)
          << "  R_work " << fixed(oc.final.r_work) << "\n";
    }
    top.phase("write", [&] {
      top.write_output("metrics.log", format_metrics_log(recs));
      std::string best = read_file(
          (top.out() / ("seed_" + std::to_string(outcomes.front().seed)) / "model.pdb").string());
      top.write_output("model.pdb", best);
    });
    top.resolved().set("run", "seeds", seed_list);
    store_config(top.resolved(), fcfg);
    store_config(top.resolved(), gcfg);
    store_config(top.resolved(), rcfg);
    top.note("best_seed", std::to_string(outcomes.front().seed));
  }
}

// ---- synth

void cmd_synth(const Options& o, Config c, Run& run, std::ostream& out) {
  if (o.seed)
    c.set("synth", "seed", std::to_string(*o.seed));
  if (o.n_atoms)
    c.set("synth", "n_atoms", std::to_string(*o.n_atoms));
  if (o.d_min)
    c.set("synth", "d_min", format_double(*o.d_min));
  if (o.noise)
    c.set("synth", "noise_rel", format_double(*o.noise));
  if (!o.cell.empty())
    c.set("synth", "cell", o.cell);
  if (!o.space_group.empty())
    c.set("synth", "space_group", o.space_group);
  if (o.perturb)
    c.set("run", "perturb", format_double(*o.perturb));
  if (o.offset)
    c.set("run", "offset", format_double(*o.offset));
  if (o.sigma0)
    c.set("run", "sigma0", format_double(*o.sigma0));
  SynthSpec spec;
  apply_config(c, spec);
  store_config(run.resolved(), spec);
  double perturb_sigma = parse_double(c.get("run", "perturb").value_or("0"), "run.perturb");
  double offset = parse_double(c.get("run", "offset").value_or("0"), "run.offset");
  double sigma0 = parse_double(c.get("run", "sigma0").value_or("0.5"), "run.sigma0");
  run.resolved().set("run", "perturb", format_double(perturb_sigma));
  run.resolved().set("run", "offset", format_double(offset));
  run.resolved().set("run", "sigma0", format_double(sigma0));

  SynthBundle b = run.phase("synth", [&] {
    try {
      find_space_group(spec.space_group);
    } catch (const std::exception&) {
      throw std::invalid_argument("unsupported space group '" + spec.space_group + "'");
    }
    return synthesize(spec, ScatteringTable::bundled());
  });
  assign_metadata(b.refl, b.cell, b.sg);
  assign_bins(b.refl, 10);

  MetricRecord rec;
  rec["phase"] = "synth";
  rec["n_atoms"] = b.truth.size();
  rec["n_reflections"] = b.refl.size();
  rec["n_free"] = b.refl.free_count();
  std::vector<char> all(b.refl.size(), 1);
  EValues ev = normalize_amplitudes(b.refl.f_obs, b.refl, all);
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i != b.refl.size(); ++i)
    if (!b.refl.centric[i]) {
      s += ev.e[i] * ev.e[i];
      ++n;
    }
  rec["mean_e2_acentric"] = n ? s / n : 0.0;
  out << "atoms " << b.truth.size() << "  reflections " << b.refl.size() << "  free "
      << b.refl.free_count() << "\n";

  run.phase("write", [&] {
    run.write_output("model.pdb", write_pdb(b.truth, b.cell, b.sg.name));
    run.write_output("reflections.mtz", write_mtz(b.refl, b.cell, b.sg));
    run.write_output("reflections.refl", write_reflection_text(b.refl, b.cell, b.sg.name));
    if (perturb_sigma > 0)
      run.write_output("start.pdb",
                       write_pdb(perturb(b.truth, perturb_sigma, spec.seed + 1), b.cell, b.sg.name));
    AtomicModel center = offset > 0 ? domain_shift(b.truth, offset, spec.seed + 2) : b.truth;
    rec["prior_offset_rmsd"] = rmsd(center.positions(), b.truth.positions());
    run.write_output("prior_center.pdb", write_pdb(center, b.cell, b.sg.name));
    PriorSpec ps;
    ps.center = "prior_center.pdb";
    ps.sigma0 = sigma0;
    run.write_output("prior.txt", format_prior_spec(ps));
    run.write_output("metrics.log", format_metrics_log({rec}));
  });
}

// ---- symexpand

void cmd_symexpand(const Options& o, const Config& c, Run& run, std::ostream& out) {
  PdbStructure pdb = run.phase("load", [&] {
    return load_pdb(run, "model", require_input(c, "model", o.model));
  });
  std::string sg_name = run_value(c, "space_group", o.space_group);
  if (sg_name.empty())
    sg_name = pdb.space_group;
  if (sg_name.empty())
    throw std::invalid_argument("model has no space group; pass --space-group");
  run.resolved().set("run", "space_group", sg_name);
  SpaceGroup sg = resolve_space_group(sg_name);
  AtomicModel p1 = run.phase("expand", [&] { return expand_to_p1(pdb.model, pdb.cell, sg); });
  int serial = 1;
  for (Atom& a : p1.atoms)
    a.serial = serial++;
  out << "expanded " << pdb.model.size() << " atoms by " << sg.size() << " operators to "
      << p1.size() << "\n";
  MetricRecord rec;
  rec["phase"] = "symexpand";
  rec["atoms_in"] = pdb.model.size();
  rec["operators"] = sg.size();
  rec["atoms_out"] = p1.size();
  run.phase("write", [&] {
    run.write_output("model.pdb", write_pdb(p1, pdb.cell, "P 1"));
    run.write_output("metrics.log", format_metrics_log({rec}));
  });
}

} // namespace

// ---------------------------------------------------------------- entry

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"xtalforge: crystallographic refinement and guided sampling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version);

  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config_path, "config file (key = value sections)");
    s->add_option("--out", o.out, "output directory")->capture_default_str();
    s->add_option("--seed", o.seed, "random seed");
    s->add_option("--reference", o.reference, "reference model (PDB)");
    s->add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)");
    s->add_flag("--force", o.force, "proceed despite cell or space-group mismatch");
    s->add_option("--cell", o.cell, "unit cell 'a b c alpha beta gamma'");
    s->add_option("--space-group", o.space_group, "space group name");
  };

  CLI::App* stats = app.add_subcommand("stats", "reflection file summary");
  common(stats);
  stats->add_option("reflections", o.reflections, "MTZ or text reflection file");

  CLI::App* score = app.add_subcommand("score", "R_work, R_free and CC of a model");
  common(score);
  score->add_option("model", o.model, "model (PDB)");
  score->add_option("reflections", o.reflections, "reflections");
  score->add_flag("--swap-free-flags", o.swap_free, "exchange working and free sets");

  CLI::App* refine_cmd = app.add_subcommand("refine", "coordinate and B-factor refinement");
  common(refine_cmd);
  refine_cmd->add_option("model", o.model, "starting model (PDB)");
  refine_cmd->add_option("reflections", o.reflections, "reflections");
  refine_cmd->add_option("--steps", o.steps, "refinement steps");
  refine_cmd->add_option("--objective", o.objective, "r_factor | neg_cc | gauss | rice");

  CLI::App* guide = app.add_subcommand("guide", "guided sampling followed by refinement");
  common(guide);
  guide->add_option("reflections", o.reflections, "reflections");
  guide->add_option("prior", o.prior, "toy prior file");
  guide->add_option("--seeds", o.seeds, "comma-separated seeds, ranked by R_free");
  guide->add_option("--rho", o.rho, "guidance step size");
  guide->add_option("--guidance-start", o.guidance_start, "guidance active for t <= this");
  guide->add_option("--sampling-steps", o.sampling_steps, "diffusion steps T");
  guide->add_option("--steps", o.steps, "refinement steps");
  guide->add_option("--objective", o.objective, "refinement objective");

  CLI::App* synth = app.add_subcommand("synth", "synthetic crystal bundle");
  common(synth);
  synth->add_option("--atoms", o.n_atoms, "atom count");
  synth->add_option("--d-min", o.d_min, "resolution limit (A)");
  synth->add_option("--noise", o.noise, "amplitude noise relative to sigma");
  synth->add_option("--perturb", o.perturb, "write start.pdb perturbed by this sigma (A)");
  synth->add_option("--offset", o.offset, "prior center domain shift (A RMSD)");
  synth->add_option("--sigma0", o.sigma0, "prior spread written to prior.txt");

  CLI::App* symexpand = app.add_subcommand("symexpand", "expand a model to P1");
  common(symexpand);
  symexpand->add_option("model", o.model, "model (PDB)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }
  for (CLI::App* s : {stats, score, refine_cmd, guide, synth, symexpand})
    if (s->parsed())
      o.command = s->get_name();

  Run run(o.command, o.out);
  int warnings = 0;
  WarningSink prev = set_warning_sink([&](const std::string& m) {
    ++warnings;
    err << "warning: " << m << "\n";
  });
  int prev_threads = omp_get_max_threads();
  if (o.threads > 0)
    omp_set_num_threads(o.threads);
  int code = 0;
  try {
    Config c;
    if (!o.config_path.empty()) {
      c = run.phase("config", [&] {
        std::string text = run.read_input("config", o.config_path);
        return Config::parse(text);
      });
    }
    if (!o.cell.empty())
      c.set("run", "cell", o.cell);
    if (!o.space_group.empty() && o.command != "synth")
      c.set("run", "space_group", o.space_group);
    for (const char* k : {"cell", "space_group"})
      if (auto v = c.get("run", k))
        run.resolved().set("run", k, *v);
    if (o.command == "stats")
      cmd_stats(o, c, run, out);
    else if (o.command == "score")
      cmd_score(o, c, run, out);
    else if (o.command == "refine")
      cmd_refine(o, c, run, out);
    else if (o.command == "guide")
      cmd_guide(o, c, run, out);
    else if (o.command == "synth")
      cmd_synth(o, c, run, out);
    else if (o.command == "symexpand")
      cmd_symexpand(o, c, run, out);
    run.write_manifest(true, "", warnings);
  } catch (const std::exception& e) {
    err << "error [" << run.current_phase() << "]: " << e.what() << "\n";
    try {
      run.write_manifest(false, e.what(), warnings);
    } catch (const std::exception& e2) {
      err << "error: could not write the manifest: " << e2.what() << "\n";
    }
    code = 1;
  }
  omp_set_num_threads(prev_threads);
  set_warning_sink(prev);
  return code;
}

} // namespace xtalforge
