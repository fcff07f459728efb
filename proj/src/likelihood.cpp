#include "xtalforge/likelihood.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace xtalforge {

namespace {

constexpr double pi = std::numbers::pi;
// Below this argument the power series of I0/I1 is used; above it the
// Hankel asymptotic expansion converges to full double precision.
constexpr double bessel_switch = 30.0;

void check_sizes(std::size_t a, std::size_t b, std::size_t m) {
  if (a != b || a != m)
    throw std::invalid_argument("array lengths do not match the mask");
}

// sum_k t_k with t_k = t_{k-1} * ratio(k) / z, truncated where the terms
// stop decreasing (optimal truncation of the asymptotic series)
template <typename Ratio>
double asymptotic_sum(double z, Ratio ratio) {
  double sum = 1, term = 1;
  for (int k = 1; k < 200; ++k) {
    double next = term * ratio(k) / z;
    if (std::fabs(next) >= std::fabs(term) || std::fabs(next) < 1e-17 * std::fabs(sum))
      break;
    sum += next;
    term = next;
  }
  return sum;
}

double asym_i0(double z) {
  return asymptotic_sum(z, [](int k) { double m = 2 * k - 1; return m * m / (8.0 * k); });
}

double asym_i1(double z) {
  return asymptotic_sum(z, [](int k) { double m = 2 * k - 1; return -(4 - m * m) / (8.0 * k); });
}

double log_cosh(double x) {
  double a = std::fabs(x);
  return a + std::log1p(std::exp(-2 * a)) - std::log(2.0);
}

double sigma2_of(bool centric, double sigma_a, double sigma_tilde) {
  double s2 = 1 - sigma_a * sigma_a + (centric ? 1 : 2) * sigma_tilde * sigma_tilde;
  if (!(s2 > 0))
    throw std::domain_error("degenerate Rice variance: 1 - sigma_A^2 + sigma^2 <= 0");
  return s2;
}

} // namespace

void LikelihoodConfig::validate(bool for_guidance) const {
  if (!(sigma_a >= 0 && sigma_a <= 1))
    throw std::invalid_argument("sigma_a must lie in [0, 1]");
  if (!(lambda_gauss >= 0 && lambda_rice >= 0))
    throw std::invalid_argument("likelihood weights must be non-negative");
  if (for_guidance && lambda_gauss == 0 && lambda_rice == 0)
    throw std::invalid_argument("guidance needs a non-zero likelihood weight");
  if (n_bins < 1)
    throw std::invalid_argument("n_bins must be >= 1");
}

EValues normalize_amplitudes(std::span<const double> amp, const ReflectionSet& refl, Mask mask) {
  check_sizes(amp.size(), refl.size(), mask.size());
  int nb = std::max(refl.n_bins, 1);
  EValues out;
  out.bin_mean.assign(nb, 0.0);
  out.bin_count.assign(nb, 0);
  auto bin_of = [&](std::size_t i) { return refl.bin.empty() ? 0 : refl.bin[i]; };
  auto eps_of = [&](std::size_t i) { return refl.epsilon.empty() ? 1.0 : double(refl.epsilon[i]); };
  for (std::size_t i = 0; i != amp.size(); ++i)
    if (mask[i]) {
      out.bin_mean[bin_of(i)] += amp[i] * amp[i] / eps_of(i);
      ++out.bin_count[bin_of(i)];
    }
  for (int b = 0; b != nb; ++b) {
    if (out.bin_count[b] == 0)
      continue;
    out.bin_mean[b] /= out.bin_count[b];
    if (!(out.bin_mean[b] > 0))
      throw std::domain_error("all amplitudes are zero in resolution bin " + std::to_string(b));
  }
  out.e.assign(amp.size(), 0.0);
  for (std::size_t i = 0; i != amp.size(); ++i) {
    double m = out.bin_mean[bin_of(i)];
    if (m > 0)
      out.e[i] = amp[i] / std::sqrt(eps_of(i) * m);
  }
  return out;
}

NormalizedAmplitudes normalize_to_e(std::span<const double> f_calc, const ReflectionSet& refl,
                                    Mask mask) {
  EValues obs = normalize_amplitudes(refl.f_obs, refl, mask);
  EValues calc = normalize_amplitudes(f_calc, refl, mask);
  NormalizedAmplitudes n;
  n.e_obs = std::move(obs.e);
  n.e_calc = std::move(calc.e);
  n.bin_mean_obs = std::move(obs.bin_mean);
  n.bin_mean_calc = std::move(calc.bin_mean);
  double ss = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i != refl.size(); ++i)
    if (mask[i]) {
      ss += refl.f_obs[i] * refl.f_obs[i];
      ++cnt;
    }
  double rms = cnt ? std::sqrt(ss / cnt) : 0.0;
  n.sigma_tilde.assign(refl.size(), 0.0);
  if (rms > 0)
    for (std::size_t i = 0; i != refl.size(); ++i)
      n.sigma_tilde[i] = refl.sigma[i] / rms;
  return n;
}

std::vector<double> e_gradient_to_amplitude(const NormalizedAmplitudes& norm,
                                            std::span<const double> f_calc,
                                            const ReflectionSet& refl, Mask mask,
                                            std::span<const double> d_e) {
  std::size_t n = refl.size();
  int nb = std::max(refl.n_bins, 1);
  auto bin_of = [&](std::size_t i) { return refl.bin.empty() ? 0 : refl.bin[i]; };
  auto eps_of = [&](std::size_t i) { return refl.epsilon.empty() ? 1.0 : double(refl.epsilon[i]); };
  std::vector<double> ge(nb, 0.0);
  std::vector<int> count(nb, 0);
  for (std::size_t i = 0; i != n; ++i)
    if (mask[i]) {
      ge[bin_of(i)] += d_e[i] * norm.e_calc[i];
      ++count[bin_of(i)];
    }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i != n; ++i) {
    if (!mask[i])
      continue;
    int b = bin_of(i);
    double m = norm.bin_mean_calc[b];
    if (!(m > 0))
      continue;
    double eps = eps_of(i);
    out[i] = d_e[i] / std::sqrt(eps * m) - f_calc[i] * ge[b] / (count[b] * eps * m);
  }
  return out;
}

LossValue gauss_nll(const NormalizedAmplitudes& norm, Mask mask) {
  LossValue out;
  out.grad.assign(norm.e_obs.size(), 0.0);
  for (std::size_t i = 0; i != norm.e_obs.size(); ++i) {
    if (!mask[i])
      continue;
    double s = std::max(norm.sigma_tilde[i], sigma_tilde_floor);
    double r = norm.e_obs[i] - norm.e_calc[i];
    out.value += r * r / (2 * s * s);
    out.grad[i] = -r / (s * s);
  }
  return out;
}

double log_bessel_i0(double z) {
  z = std::fabs(z);
  if (z < bessel_switch) {
    double q = 0.25 * z * z, term = 1, sum = 1;
    for (int k = 1; k < 500; ++k) {
      term *= q / (double(k) * k);
      sum += term;
      if (term < 1e-17 * sum)
        break;
    }
    return std::log(sum);
  }
  return z - 0.5 * std::log(2 * pi * z) + std::log(asym_i0(z));
}

double bessel_i1_over_i0(double z) {
  double sign = z < 0 ? -1 : 1;
  z = std::fabs(z);
  if (z == 0)
    return 0;
  if (z < bessel_switch) {
    double q = 0.25 * z * z;
    double t0 = 1, s0 = 1, t1 = 0.5 * z, s1 = t1;
    for (int k = 1; k < 500; ++k) {
      t0 *= q / (double(k) * k);
      t1 *= q / (double(k) * (k + 1));
      s0 += t0;
      s1 += t1;
      if (t0 < 1e-17 * s0 && t1 < 1e-17 * s1)
        break;
    }
    return sign * s1 / s0;
  }
  return sign * asym_i1(z) / asym_i0(z);
}

double rice_log_density_acentric(double e_obs, double e_calc, double sigma_a, double sigma_tilde) {
  double s2 = sigma2_of(false, sigma_a, sigma_tilde);
  double sc = sigma_a * e_calc;
  double eo = std::max(e_obs, 1e-300);
  return std::log(2 * eo / s2) - (e_obs * e_obs + sc * sc) / s2 +
         log_bessel_i0(2 * sigma_a * e_obs * e_calc / s2);
}

double rice_log_density_centric(double e_obs, double e_calc, double sigma_a, double sigma_tilde) {
  double s2 = sigma2_of(true, sigma_a, sigma_tilde);
  double sc = sigma_a * e_calc;
  return 0.5 * std::log(2 / (pi * s2)) - (e_obs * e_obs + sc * sc) / (2 * s2) +
         log_cosh(sigma_a * e_obs * e_calc / s2);
}

LossValue rice_nll(const NormalizedAmplitudes& norm, std::span<const char> centric,
                   const LikelihoodConfig& cfg, Mask mask) {
  LossValue out;
  std::size_t n = norm.e_obs.size();
  out.grad.assign(n, 0.0);
  const double sa = cfg.sigma_a;
  for (std::size_t i = 0; i != n; ++i) {
    if (!mask[i])
      continue;
    double eo = norm.e_obs[i], ec = norm.e_calc[i], st = norm.sigma_tilde[i];
    bool is_c = !centric.empty() && centric[i];
    double s2 = sigma2_of(is_c, sa, st);
    if (is_c) {
      out.value -= rice_log_density_centric(eo, ec, sa, st);
      out.grad[i] = sa * sa * ec / s2 - (sa * eo / s2) * std::tanh(sa * eo * ec / s2);
    } else {
      out.value -= rice_log_density_acentric(eo, ec, sa, st);
      out.grad[i] = 2 * sa * sa * ec / s2 -
                    (2 * sa * eo / s2) * bessel_i1_over_i0(2 * sa * eo * ec / s2);
    }
  }
  return out;
}

LossValue guidance_loss(const NormalizedAmplitudes& norm, std::span<const char> centric,
                        const LikelihoodConfig& cfg, Mask mask) {
  LossValue out;
  out.grad.assign(norm.e_obs.size(), 0.0);
  if (cfg.lambda_gauss != 0) {
    LossValue g = gauss_nll(norm, mask);
    out.value += cfg.lambda_gauss * g.value;
    for (std::size_t i = 0; i != g.grad.size(); ++i)
      out.grad[i] += cfg.lambda_gauss * g.grad[i];
  }
  if (cfg.lambda_rice != 0) {
    LossValue r = rice_nll(norm, centric, cfg, mask);
    out.value += cfg.lambda_rice * r.value;
    for (std::size_t i = 0; i != r.grad.size(); ++i)
      out.grad[i] += cfg.lambda_rice * r.grad[i];
  }
  return out;
}

double r_factor(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask) {
  return r_factor_loss(f_obs, f_calc, mask).value;
}

LossValue r_factor_loss(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask) {
  check_sizes(f_obs.size(), f_calc.size(), mask.size());
  double num = 0, den = 0;
  std::size_t cnt = 0;
  for (std::size_t i = 0; i != f_obs.size(); ++i)
    if (mask[i]) {
      num += std::fabs(f_obs[i] - f_calc[i]);
      den += f_obs[i];
      ++cnt;
    }
  if (cnt == 0)
    throw std::invalid_argument("R-factor over an empty reflection set");
  if (!(den > 0))
    throw std::invalid_argument("R-factor undefined: sum of F_obs is zero");
  LossValue out;
  out.value = num / den;
  out.grad.assign(f_obs.size(), 0.0);
  for (std::size_t i = 0; i != f_obs.size(); ++i)
    if (mask[i]) {
      double d = f_obs[i] - f_calc[i];
      out.grad[i] = d > 0 ? -1 / den : (d < 0 ? 1 / den : 0.0);
    }
  return out;
}

namespace {

struct CcParts {
  double mean_a, mean_b, saa, sbb, sab;
};

CcParts cc_parts(std::span<const double> a, std::span<const double> b, Mask mask) {
  check_sizes(a.size(), b.size(), mask.size());
  double sa = 0, sb = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i != a.size(); ++i)
    if (mask[i]) {
      sa += a[i];
      sb += b[i];
      ++n;
    }
  if (n < 2)
    throw std::invalid_argument("correlation needs at least 2 values");
  CcParts p{sa / n, sb / n, 0, 0, 0};
  for (std::size_t i = 0; i != a.size(); ++i)
    if (mask[i]) {
      double da = a[i] - p.mean_a, db = b[i] - p.mean_b;
      p.saa += da * da;
      p.sbb += db * db;
      p.sab += da * db;
    }
  if (!(p.saa > 0 && p.sbb > 0))
    throw std::invalid_argument("correlation undefined for zero variance");
  return p;
}

} // namespace

double pearson_cc(std::span<const double> a, std::span<const double> b, Mask mask) {
  CcParts p = cc_parts(a, b, mask);
  return p.sab / std::sqrt(p.saa * p.sbb);
}

LossValue neg_cc_loss(std::span<const double> f_obs, std::span<const double> f_calc, Mask mask) {
  CcParts p = cc_parts(f_obs, f_calc, mask);
  double norm = std::sqrt(p.saa * p.sbb);
  double cc = p.sab / norm;
  LossValue out;
  out.value = -cc;
  out.grad.assign(f_obs.size(), 0.0);
  for (std::size_t i = 0; i != f_obs.size(); ++i)
    if (mask[i]) {
      double da = f_obs[i] - p.mean_a, db = f_calc[i] - p.mean_b;
      out.grad[i] = -(da / norm - cc * db / p.sbb);
    }
  return out;
}

} // namespace xtalforge
