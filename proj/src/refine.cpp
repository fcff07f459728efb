#include "xtalforge/refine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "xtalforge/align.hpp"
#include "xtalforge/diagnostics.hpp"

namespace xtalforge {

std::string objective_name(Objective o) {
  switch (o) {
  case Objective::r_factor: return "r_factor";
  case Objective::neg_cc: return "neg_cc";
  case Objective::gauss: return "gauss";
  case Objective::rice: return "rice";
  }
  return "?";
}

Objective parse_objective(std::string_view name) {
  if (name == "r_factor" || name == "r")
    return Objective::r_factor;
  if (name == "neg_cc" || name == "cc")
    return Objective::neg_cc;
  if (name == "gauss")
    return Objective::gauss;
  if (name == "rice")
    return Objective::rice;
  throw std::invalid_argument("unknown objective '" + std::string(name) +
                              "' (r_factor, neg_cc, gauss, rice)");
}

std::string b_init_name(BInit b) {
  switch (b) {
  case BInit::uniform: return "uniform";
  case BInit::from_file: return "from_file";
  case BInit::from_plddt: return "from_plddt";
  }
  return "?";
}

BInit parse_b_init(std::string_view name) {
  if (name == "uniform")
    return BInit::uniform;
  if (name == "from_file" || name == "file")
    return BInit::from_file;
  if (name == "from_plddt" || name == "plddt")
    return BInit::from_plddt;
  throw std::invalid_argument("unknown b_init '" + std::string(name) +
                              "' (uniform, from_file, from_plddt)");
}

void RefinementConfig::validate() const {
  if (n_steps < 0)
    throw std::invalid_argument("n_steps must be >= 0");
  if (!(b_min > 0 && b_min < b_max))
    throw std::invalid_argument("B bounds must satisfy 0 < b_min < b_max");
  if (!(lr_xyz > 0 && lr_b > 0 && lr_u > 0))
    throw std::invalid_argument("learning rates must be > 0");
  if (scale_solve_interval < 1)
    throw std::invalid_argument("scale_solve_interval must be >= 1");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1 && adam_eps > 0))
    throw std::invalid_argument("invalid Adam parameters");
}

void adam_step(std::span<double> p, std::span<const double> g, AdamState& st, double lr,
               double b1, double b2, double eps) {
  if (p.size() != g.size())
    throw std::invalid_argument("adam_step: parameter and gradient sizes differ");
  if (st.m.empty()) {
    st.m.assign(p.size(), 0.0);
    st.v.assign(p.size(), 0.0);
  }
  if (st.m.size() != p.size())
    throw std::invalid_argument("adam_step: state size does not match parameters");
  ++st.t;
  double c1 = 1 - std::pow(b1, st.t);
  double c2 = 1 - std::pow(b2, st.t);
  for (std::size_t i = 0; i != p.size(); ++i) {
    st.m[i] = b1 * st.m[i] + (1 - b1) * g[i];
    st.v[i] = b2 * st.v[i] + (1 - b2) * g[i] * g[i];
    double mh = st.m[i] / c1;
    double vh = st.v[i] / c2;
    p[i] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

double plddt_to_b(double plddt, double b_min, double b_max) {
  if (!(plddt >= 0 && plddt <= 100))
    throw std::invalid_argument("pLDDT must lie in [0, 100]");
  return b_max - (b_max - b_min) * plddt / 100.0;
}

std::vector<double> plddt_to_b(std::span<const double> plddt, double b_min, double b_max) {
  std::vector<double> out;
  out.reserve(plddt.size());
  for (double p : plddt)
    out.push_back(plddt_to_b(p, b_min, b_max));
  return out;
}

void initialize_b(AtomicModel& model, const RefinementConfig& cfg) {
  switch (cfg.b_init) {
  case BInit::uniform:
    for (Atom& a : model.atoms)
      a.b_iso = cfg.b_uniform;
    break;
  case BInit::from_plddt:
    for (Atom& a : model.atoms)
      a.b_iso = plddt_to_b(a.b_iso, cfg.b_min, cfg.b_max);
    break;
  case BInit::from_file:
    for (Atom& a : model.atoms)
      a.b_iso = std::clamp(a.b_iso, cfg.b_min, cfg.b_max);
    break;
  }
}

LossValue refinement_objective(const ForwardModel& fm, const StructureFactorState& st,
                               const RefinementConfig& cfg) {
  const ReflectionSet& refl = fm.reflections();
  auto work = refl.working_mask();
  switch (cfg.objective) {
  case Objective::r_factor:
    return r_factor_loss(refl.f_obs, st.f_calc_amp, work);
  case Objective::neg_cc:
    return neg_cc_loss(refl.f_obs, st.f_calc_amp, work);
  case Objective::gauss:
  case Objective::rice: {
    NormalizedAmplitudes norm = normalize_to_e(st.f_calc_amp, refl, work);
    LossValue lv = cfg.objective == Objective::gauss
                       ? gauss_nll(norm, work)
                       : rice_nll(norm, refl.centric, cfg.likelihood, work);
    lv.grad = e_gradient_to_amplitude(norm, st.f_calc_amp, refl, work, lv.grad);
    return lv;
  }
  }
  throw std::logic_error("unhandled objective");
}

namespace {

std::array<double, 6> u_params(const Mat3& u) {
  return {u(0, 0), u(1, 1), u(2, 2), u(0, 1), u(0, 2), u(1, 2)};
}

Mat3 u_matrix(const std::array<double, 6>& p) {
  Mat3 u;
  u << p[0], p[3], p[4], p[3], p[1], p[5], p[4], p[5], p[2];
  return u;
}

} // namespace

RefinementResult refine(const ForwardModel& fm, AtomicModel model, const RefinementConfig& cfg,
                        std::span<const Vec3> reference) {
  auto t_start = std::chrono::steady_clock::now();
  cfg.validate();
  model.validate();
  if (!reference.empty() && reference.size() != model.size())
    throw std::invalid_argument("reference atom count does not match the model");
  std::size_t n = model.size();

  StructureFactorState st = fm.initial_state(model);
  fm.solve_scales(st);
  LossValue lv = refinement_objective(fm, st, cfg);
  if (!std::isfinite(lv.value))
    throw std::runtime_error("refine: objective is not finite at the starting model");

  RefinementResult res;
  res.initial = agreement(fm, st);
  auto record = [&](int step, double obj, bool solved) {
    Agreement a = agreement(fm, st);
    RefinementRecord r{step, obj, a.r_work, a.r_free, a.cc_work, solved};
    if (!reference.empty()) {
      Coords x = model.positions();
      r.rmsd = rmsd(x, reference);
    }
    res.records.push_back(r);
  };
  record(0, lv.value, true);

  double obj0 = lv.value;
  double best = obj0;
  AtomicModel best_model = model;
  StructureFactorState best_state = st;
  double lr_scale = 1.0;

  AdamState adam_xyz, adam_b, adam_u;
  std::vector<double> xyz(3 * n), gxyz(3 * n), b(n), gb(n);
  std::array<double, 6> up = u_params(st.u_aniso), gu{};

  for (int step = 1; step <= cfg.n_steps; ++step) {
    ModelGradient mg = fm.loss_gradients(model, st, lv.grad);
    for (std::size_t j = 0; j != n; ++j) {
      for (int k = 0; k != 3; ++k) {
        xyz[3 * j + k] = model.atoms[j].xyz[k];
        gxyz[3 * j + k] = mg.d_xyz[j][k];
      }
      b[j] = model.atoms[j].b_iso;
      gb[j] = mg.d_b[j];
    }
    if (cfg.refine_xyz)
      adam_step(xyz, gxyz, adam_xyz, cfg.lr_xyz * lr_scale, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps);
    if (cfg.refine_b)
      adam_step(b, gb, adam_b, cfg.lr_b * lr_scale, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps);
    for (std::size_t j = 0; j != n; ++j) {
      for (int k = 0; k != 3; ++k)
        model.atoms[j].xyz[k] = xyz[3 * j + k];
      model.atoms[j].b_iso = std::clamp(b[j], cfg.b_min, cfg.b_max);
    }
    if (cfg.refine_u_aniso) {
      Mat3 g = fm.u_aniso_gradient(st, lv.grad);
      gu = {g(0, 0), g(1, 1), g(2, 2), 2 * g(0, 1), 2 * g(0, 2), 2 * g(1, 2)};
      adam_step(up, gu, adam_u, cfg.lr_u * lr_scale, cfg.adam_beta1, cfg.adam_beta2,
                cfg.adam_eps);
      fm.set_u_aniso(st, u_matrix(up));
    }

    fm.update_protein(st, model);
    bool solve = step % cfg.scale_solve_interval == 0;
    if (solve) {
      if (fm.config().use_solvent)
        fm.update_solvent(st, model);
      fm.solve_scales(st);
    } else {
      fm.update_amplitudes(st);
    }
    lv = refinement_objective(fm, st, cfg);
    record(step, lv.value, solve);

    bool bad = !std::isfinite(lv.value) ||
               lv.value > obj0 + cfg.increase_guard * std::abs(obj0);
    if (bad) {
      if (res.lr_halved) {
        warn("refine: objective rose again after halving the learning rates, stopping at step " +
             std::to_string(step));
        res.aborted = true;
        break;
      }
      warn("refine: objective rose by more than " + format_double(100 * cfg.increase_guard) +
           "% at step " + std::to_string(step) + ", halving learning rates");
      res.lr_halved = true;
      lr_scale *= 0.5;
      model = best_model;
      st = best_state;
      lv = refinement_objective(fm, st, cfg);
      continue;
    }
    if (lv.value < best) {
      best = lv.value;
      best_model = model;
      best_state = st;
      res.best_step = step;
    }
  }

  res.model = std::move(best_model);
  res.state = std::move(best_state);
  res.final = agreement(fm, res.state);
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

std::vector<MetricRecord> metric_records(const RefinementResult& r, Objective o,
                                         std::string_view phase) {
  std::vector<MetricRecord> out;
  for (const RefinementRecord& rec : r.records) {
    MetricRecord m;
    m["phase"] = phase;
    m["step"] = rec.step;
    m["objective"] = objective_name(o);
    m["value"] = rec.objective;
    m["r_work"] = rec.r_work;
    m["r_free"] = rec.r_free;
    m["cc"] = rec.cc;
    m["scales_solved"] = rec.scales_solved;
    if (std::isfinite(rec.rmsd))
      m["rmsd_ref"] = rec.rmsd;
    out.push_back(std::move(m));
  }
  return out;
}

} // namespace xtalforge
