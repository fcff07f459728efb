// Variance-preserving reverse diffusion with likelihood guidance on the
// posterior-mean estimate (diffusion posterior sampling).
//
// Step t runs from T (noise) down to 1; t = 0 is the clean end. Guidance
// is active for t <= guidance_start.

#ifndef XTALFORGE_SAMPLER_HPP_
#define XTALFORGE_SAMPLER_HPP_

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "xtalforge/align.hpp"
#include "xtalforge/forward.hpp"
#include "xtalforge/likelihood.hpp"
#include "xtalforge/score.hpp"

namespace xtalforge {

struct GuidanceConfig {
  int n_steps = 200;
  int guidance_start = 50;
  double step_size = 0.01;  // rho
  double lambda_gauss = 0.9;
  double lambda_rice = 0.1;
  double sigma_a = 0.85;
  std::uint64_t seed = 0;
  double beta_min = 1e-4;
  double beta_max = 0.05;
  bool align = true;
  AlignWeights align_weights = AlignWeights::heavy_atoms;

  void validate() const;
};

// beta[t], alpha_bar[t] for t = 0..T; beta[0] = 0 and alpha_bar[0] = 1.
struct VpSchedule {
  std::vector<double> beta;
  std::vector<double> alpha_bar;

  int n_steps() const { return static_cast<int>(beta.size()) - 1; }
};

VpSchedule vp_schedule(int n_steps, double beta_min, double beta_max);

class DenoisingPrior {
public:
  virtual ~DenoisingPrior() = default;
  virtual std::size_t size() const = 0;
  // Posterior-mean estimate of X_0 given X_t.
  virtual Coords denoise(const Coords& x_t, int t, const VpSchedule& s) const = 0;
  // G^T dX0/dX_t, evaluated at x_t.
  virtual Coords vjp(const Coords& x_t, int t, const VpSchedule& s, const Coords& g) const = 0;
};

// Isotropic Gaussian prior N(mu_j, sigma0_j^2 I) per atom. Under the VP
// forward process X_t ~ N(sqrt(ab) mu, ab sigma0^2 + 1 - ab), so
//   E[X_0 | X_t] = mu + c (X_t - sqrt(ab) mu),
//   c = sqrt(ab) sigma0^2 / (ab sigma0^2 + 1 - ab).
class ToyGaussianPrior : public DenoisingPrior {
public:
  ToyGaussianPrior(Coords mu, std::vector<double> sigma0);
  ToyGaussianPrior(Coords mu, double sigma0);

  std::size_t size() const override { return mu_.size(); }
  Coords denoise(const Coords& x_t, int t, const VpSchedule& s) const override;
  Coords vjp(const Coords& x_t, int t, const VpSchedule& s, const Coords& g) const override;

  const Coords& mean() const { return mu_; }
  const std::vector<double>& sigma0() const { return sigma0_; }
  double gain(std::size_t atom, int t, const VpSchedule& s) const;

private:
  Coords mu_;
  std::vector<double> sigma0_;
};

// Gaussian prior whose early estimates have not formed the fold yet: for
// t > fold_step the posterior mean is contracted towards the centroid of
// mu, by a factor falling linearly from 1 at fold_step to `collapse` at T.
// Mimics a learned denoiser that only produces a coarse blob at high noise.
class CollapsingPrior : public DenoisingPrior {
public:
  CollapsingPrior(ToyGaussianPrior base, int fold_step, double collapse);

  std::size_t size() const override { return base_.size(); }
  Coords denoise(const Coords& x_t, int t, const VpSchedule& s) const override;
  Coords vjp(const Coords& x_t, int t, const VpSchedule& s, const Coords& g) const override;

  double contraction(int t, const VpSchedule& s) const;

private:
  ToyGaussianPrior base_;
  int fold_step_;
  double collapse_;
  Vec3 centroid_;
};

struct GuidanceEval {
  double loss = 0;
  Coords grad;  // dL/dX0 in the frame of the coordinates passed in
  double r_work = std::numeric_limits<double>::quiet_NaN();
  double r_free = std::numeric_limits<double>::quiet_NaN();
};

// Receives crystal-frame coordinates.
using GuidanceFn = std::function<GuidanceEval(const Coords& x0)>;

struct TraceStep {
  int step = 0;
  bool guided = false;
  bool skipped = false;  // non-finite gradient, contribution dropped
  double rho = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  double r_work = std::numeric_limits<double>::quiet_NaN();
  double r_free = std::numeric_limits<double>::quiet_NaN();
};

struct SampleResult {
  Coords x0;              // final structure, aligned to the reference if one was given
  Coords x0_sampling;     // same structure in the sampling frame
  RigidTransform to_reference;
  std::vector<TraceStep> trace;
  int guidance_calls = 0;
};

// Thrown when the trajectory leaves the finite domain; carries the trace.
struct SamplingError : std::runtime_error {
  SamplingError(const std::string& msg, std::vector<TraceStep> t)
      : std::runtime_error(msg), trace(std::move(t)) {}
  std::vector<TraceStep> trace;
};

// Euler-Maruyama on the reverse VP SDE:
//   x_{t-1} = x_t + beta_t (x_t / 2 + score_t - rho J^T dL/dX0) + sqrt(beta_t) z
// with score_t = (sqrt(ab_t) X0 - x_t) / (1 - ab_t) and no noise on the
// final step. With a reference, X0 is superposed onto it before the
// guidance call and the gradient rotated back. `align_weights` may be
// empty (uniform).
SampleResult dps_sample(const DenoisingPrior& prior, const GuidanceFn& guidance,
                        std::span<const Vec3> reference, std::span<const double> align_weights,
                        const GuidanceConfig& cfg);

// Guidance from a crystallographic data set: |F_c| of X0 with the constant
// initial scales, E-normalization over the working set and the weighted
// Gaussian + Rice loss. R_work and R_free are reported after a separate
// scale solve.
class CrystalGuidance {
public:
  CrystalGuidance(const ForwardModel& fm, AtomicModel templ, LikelihoodConfig lik);

  GuidanceEval operator()(const Coords& x0);
  int calls() const { return calls_; }

private:
  const ForwardModel* fm_;
  AtomicModel model_;
  LikelihoodConfig lik_;
  int calls_ = 0;
};

} // namespace xtalforge

#endif
