// E-value normalization, Gaussian and Rice negative log-likelihoods, and
// agreement metrics (R-factor, Pearson CC).
//
// All functions take a mask selecting the reflections that contribute;
// values outside the mask never influence the result.

#ifndef XTALFORGE_LIKELIHOOD_HPP_
#define XTALFORGE_LIKELIHOOD_HPP_

#include <span>
#include <vector>

#include "xtalforge/model.hpp"

namespace xtalforge {

using Mask = std::span<const char>;

struct LikelihoodConfig {
  double sigma_a = 0.85;
  double lambda_gauss = 0.9;
  double lambda_rice = 0.1;
  int n_bins = 10;

  void validate(bool for_guidance = false) const;
};

// e(h) = |F(h)| / sqrt(eps(h) <|F|^2/eps>_bin), bin means over the mask.
struct EValues {
  std::vector<double> e;
  std::vector<double> bin_mean;  // <|F|^2/eps> per bin
  std::vector<int> bin_count;    // masked reflections per bin
};

// Throws std::domain_error when a bin with masked reflections has all-zero
// amplitudes.
EValues normalize_amplitudes(std::span<const double> amp, const ReflectionSet& refl, Mask mask);

struct NormalizedAmplitudes {
  std::vector<double> e_obs;
  std::vector<double> e_calc;
  std::vector<double> sigma_tilde;  // sigma / RMS(F_o) over the mask
  std::vector<double> bin_mean_obs;
  std::vector<double> bin_mean_calc;
};

NormalizedAmplitudes normalize_to_e(std::span<const double> f_calc, const ReflectionSet& refl,
                                    Mask mask);

// Pulls dL/de_calc back to dL/d|F_calc|, including the dependence of the
// bin means on every masked |F_calc|.
std::vector<double> e_gradient_to_amplitude(const NormalizedAmplitudes& norm,
                                            std::span<const double> f_calc,
                                            const ReflectionSet& refl, Mask mask,
                                            std::span<const double> d_e);

struct LossValue {
  double value = 0;
  std::vector<double> grad;  // per reflection, zero outside the mask
};

constexpr double sigma_tilde_floor = 1e-6;

LossValue gauss_nll(const NormalizedAmplitudes& norm, Mask mask);

// Log densities of the observed E given the calculated E.
double rice_log_density_acentric(double e_obs, double e_calc, double sigma_a, double sigma_tilde);
double rice_log_density_centric(double e_obs, double e_calc, double sigma_a, double sigma_tilde);

// Throws std::domain_error when 1 - sigma_a^2 + (2|1) sigma_tilde^2 <= 0.
LossValue rice_nll(const NormalizedAmplitudes& norm, std::span<const char> centric,
                   const LikelihoodConfig& cfg, Mask mask);

// lambda_gauss * L_gauss + lambda_rice * L_rice
LossValue guidance_loss(const NormalizedAmplitudes& norm, std::span<const char> centric,
                        const LikelihoodConfig& cfg, Mask mask);

// log I0(z) and I1(z)/I0(z), stable for large z.
double log_bessel_i0(double z);
double bessel_i1_over_i0(double z);

// sum ||F_o| - |F_c|| / sum |F_o|; throws std::invalid_argument on an empty
// mask or zero sum of F_o.
double r_factor(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask);
// R with the subgradient sign(0) = 0.
LossValue r_factor_loss(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask);

// Throws std::invalid_argument with fewer than 2 values or zero variance.
double pearson_cc(std::span<const double> a, std::span<const double> b, Mask mask);
// -CC(F_o, F_c) and its gradient with respect to F_c.
LossValue neg_cc_loss(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask);

} // namespace xtalforge

#endif
