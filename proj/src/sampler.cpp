#include "xtalforge/sampler.hpp"

#include <cmath>
#include <random>
#include <string>

#include "xtalforge/diagnostics.hpp"

namespace xtalforge {

void GuidanceConfig::validate() const {
  if (n_steps < 1)
    throw std::invalid_argument("n_steps must be >= 1");
  if (guidance_start < 0 || guidance_start > n_steps)
    throw std::invalid_argument("guidance_start must lie in [0, n_steps]");
  if (!(step_size >= 0))
    throw std::invalid_argument("step_size must be >= 0");
  if (!(lambda_gauss >= 0 && lambda_rice >= 0))
    throw std::invalid_argument("likelihood weights must be >= 0");
  if (!(sigma_a >= 0 && sigma_a <= 1))
    throw std::invalid_argument("sigma_a must lie in [0, 1]");
}

VpSchedule vp_schedule(int n_steps, double beta_min, double beta_max) {
  if (n_steps < 1)
    throw std::invalid_argument("schedule needs at least one step");
  if (!(beta_min > 0 && beta_min <= beta_max && beta_max < 1))
    throw std::invalid_argument("schedule requires 0 < beta_min <= beta_max < 1");
  VpSchedule s;
  s.beta.assign(n_steps + 1, 0.0);
  s.alpha_bar.assign(n_steps + 1, 1.0);
  for (int t = 1; t <= n_steps; ++t) {
    double frac = n_steps == 1 ? 0.0 : double(t - 1) / (n_steps - 1);
    s.beta[t] = beta_min + frac * (beta_max - beta_min);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1 - s.beta[t]);
  }
  return s;
}

// ---------------------------------------------------------------- priors

ToyGaussianPrior::ToyGaussianPrior(Coords mu, std::vector<double> sigma0)
    : mu_(std::move(mu)), sigma0_(std::move(sigma0)) {
  if (sigma0_.size() != mu_.size())
    throw std::invalid_argument("prior spread needs one value per atom");
  for (double s : sigma0_)
    if (!(s >= 0))
      throw std::invalid_argument("prior spread must be >= 0");
}

ToyGaussianPrior::ToyGaussianPrior(Coords mu, double sigma0)
    : ToyGaussianPrior(mu, std::vector<double>(mu.size(), sigma0)) {}

double ToyGaussianPrior::gain(std::size_t j, int t, const VpSchedule& s) const {
  double ab = s.alpha_bar.at(t);
  double v = sigma0_[j] * sigma0_[j];
  double denom = ab * v + 1 - ab;
  return denom > 0 ? std::sqrt(ab) * v / denom : 1.0;
}

Coords ToyGaussianPrior::denoise(const Coords& x, int t, const VpSchedule& s) const {
  if (x.size() != mu_.size())
    throw std::invalid_argument("denoise: coordinate count does not match prior");
  double sab = std::sqrt(s.alpha_bar.at(t));
  Coords out(x.size());
  for (std::size_t j = 0; j != x.size(); ++j)
    out[j] = mu_[j] + gain(j, t, s) * (x[j] - sab * mu_[j]);
  return out;
}

Coords ToyGaussianPrior::vjp(const Coords& x, int t, const VpSchedule& s, const Coords& g) const {
  if (x.size() != mu_.size() || g.size() != mu_.size())
    throw std::invalid_argument("vjp: size mismatch");
  Coords out(g.size());
  for (std::size_t j = 0; j != g.size(); ++j)
    out[j] = gain(j, t, s) * g[j];
  return out;
}

CollapsingPrior::CollapsingPrior(ToyGaussianPrior base, int fold_step, double collapse)
    : base_(std::move(base)), fold_step_(fold_step), collapse_(collapse) {
  if (!(collapse >= 0 && collapse <= 1))
    throw std::invalid_argument("collapse factor must lie in [0, 1]");
  centroid_ = Vec3::Zero();
  for (const Vec3& m : base_.mean())
    centroid_ += m;
  if (!base_.mean().empty())
    centroid_ /= double(base_.mean().size());
}

double CollapsingPrior::contraction(int t, const VpSchedule& s) const {
  int T = s.n_steps();
  if (t <= fold_step_ || T <= fold_step_)
    return 1.0;
  double u = double(t - fold_step_) / (T - fold_step_);
  return 1.0 - u * (1.0 - collapse_);
}

Coords CollapsingPrior::denoise(const Coords& x, int t, const VpSchedule& s) const {
  Coords out = base_.denoise(x, t, s);
  double f = contraction(t, s);
  for (Vec3& v : out)
    v = centroid_ + f * (v - centroid_);
  return out;
}

Coords CollapsingPrior::vjp(const Coords& x, int t, const VpSchedule& s, const Coords& g) const {
  Coords out = base_.vjp(x, t, s, g);
  double f = contraction(t, s);
  for (Vec3& v : out)
    v *= f;
  return out;
}

// ---------------------------------------------------------------- sampler

namespace {

bool all_finite(const Coords& x) {
  for (const Vec3& v : x)
    if (!v.allFinite())
      return false;
  return true;
}

double norm(const Coords& x) {
  double s = 0;
  for (const Vec3& v : x)
    s += v.squaredNorm();
  return std::sqrt(s);
}

} // namespace

SampleResult dps_sample(const DenoisingPrior& prior, const GuidanceFn& guidance,
                        std::span<const Vec3> reference, std::span<const double> align_weights,
                        const GuidanceConfig& cfg) {
  cfg.validate();
  VpSchedule sched = vp_schedule(cfg.n_steps, cfg.beta_min, cfg.beta_max);
  std::size_t n = prior.size();
  bool use_ref = cfg.align && !reference.empty();
  if (use_ref && reference.size() != n)
    throw std::invalid_argument("reference atom count does not match the prior");
  std::vector<double> weights(align_weights.begin(), align_weights.end());
  if (weights.empty())
    weights.assign(n, 1.0);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    Coords z(n);
    for (Vec3& v : z)
      for (int k = 0; k != 3; ++k)
        v[k] = normal(rng);
    return z;
  };

  SampleResult res;
  Coords x = draw();
  double rho = cfg.step_size;
  bool halve_next = false;
  for (int t = cfg.n_steps; t >= 1; --t) {
    TraceStep tr;
    tr.step = t;
    Coords x0 = prior.denoise(x, t, sched);
    double ab = sched.alpha_bar[t];
    double sab = std::sqrt(ab);
    Coords drift(n);
    for (std::size_t j = 0; j != n; ++j)
      drift[j] = 0.5 * x[j] + (sab * x0[j] - x[j]) / (1 - ab);

    if (guidance && t <= cfg.guidance_start) {
      tr.guided = true;
      double rho_t = halve_next ? 0.5 * rho : rho;
      halve_next = false;
      tr.rho = rho_t;
      RigidTransform rt;
      Coords x0c = x0;
      if (use_ref) {
        rt = kabsch(x0, reference, weights);
        x0c = xtalforge::apply(rt, x0);
      }
      GuidanceEval ev = guidance(x0c);
      ++res.guidance_calls;
      tr.loss = ev.loss;
      tr.r_work = ev.r_work;
      tr.r_free = ev.r_free;
      Coords g = ev.grad;
      if (g.size() != n)
        throw std::logic_error("guidance gradient has the wrong size");
      if (use_ref)
        for (Vec3& v : g)
          v = rt.rotation.transpose() * v;
      tr.grad_norm = norm(g);
      if (!std::isfinite(ev.loss) || !all_finite(g)) {
        tr.skipped = true;
        halve_next = true;
        warn("sampler: non-finite guidance gradient at step " + std::to_string(t) +
             ", step skipped and guidance halved for the next guided step");
      } else if (rho_t > 0) {
        Coords pb = prior.vjp(x, t, sched, g);
        for (std::size_t j = 0; j != n; ++j)
          drift[j] -= rho_t * pb[j];
      }
    }

    double beta = sched.beta[t];
    double sb = std::sqrt(beta);
    Coords z = draw();
    for (std::size_t j = 0; j != n; ++j) {
      x[j] += beta * drift[j];
      if (t > 1)
        x[j] += sb * z[j];
    }
    res.trace.push_back(tr);
    if (!all_finite(x))
      throw SamplingError("sampler: non-finite coordinates at step " + std::to_string(t),
                          res.trace);
  }

  res.x0_sampling = prior.denoise(x, 0, sched);
  if (use_ref) {
    res.to_reference = kabsch(res.x0_sampling, reference, weights);
    res.x0 = xtalforge::apply(res.to_reference, res.x0_sampling);
  } else {
    res.x0 = res.x0_sampling;
  }
  return res;
}

// ---------------------------------------------------------------- guidance

CrystalGuidance::CrystalGuidance(const ForwardModel& fm, AtomicModel templ, LikelihoodConfig lik)
    : fm_(&fm), model_(std::move(templ)), lik_(lik) {
  lik_.validate(true);
}

GuidanceEval CrystalGuidance::operator()(const Coords& x0) {
  ++calls_;
  model_.set_positions(x0);
  const ReflectionSet& refl = fm_->reflections();
  auto work = refl.working_mask();
  StructureFactorState st = fm_->initial_state(model_);
  NormalizedAmplitudes norm = normalize_to_e(st.f_calc_amp, refl, work);
  LossValue lv = guidance_loss(norm, refl.centric, lik_, work);
  std::vector<double> d_amp = e_gradient_to_amplitude(norm, st.f_calc_amp, refl, work, lv.grad);
  ModelGradient mg = fm_->loss_gradients(model_, st, d_amp);

  GuidanceEval ev;
  ev.loss = lv.value;
  ev.grad = std::move(mg.d_xyz);
  fm_->solve_scales(st);
  Agreement a = agreement(*fm_, st);
  ev.r_work = a.r_work;
  ev.r_free = a.r_free;
  return ev;
}

} // namespace xtalforge
