// Shared fixtures and brute-force oracles for the unit tests.

#ifndef XTALFORGE_TESTS_SUPPORT_HPP_
#define XTALFORGE_TESTS_SUPPORT_HPP_

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "xtalforge/forward.hpp"
#include "xtalforge/synth.hpp"

namespace xft {

using namespace xtalforge;
namespace fs = std::filesystem;

inline std::string data_path(const std::string& name) {
  return std::string(XF_TEST_DATA_DIR) + "/" + name;
}

inline fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("xtalforge_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Atoms uniformly in the cell, B in [b_lo, b_hi], occupancy in [0.5, 1].
inline AtomicModel random_model(int n, const UnitCell& cell, std::uint64_t seed,
                                double b_lo = 5, double b_hi = 40) {
  static const char* elements[] = {"C", "N", "O", "S"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  AtomicModel m;
  for (int i = 0; i != n; ++i) {
    Atom a;
    a.name = " X  ";
    a.element = elements[rng() % 4];
    a.res_name = "UNK";
    a.chain = "A";
    a.res_seq = i + 1;
    a.serial = i + 1;
    a.xyz = cell.orthogonalize(Vec3(u(rng), u(rng), u(rng)));
    a.b_iso = b_lo + (b_hi - b_lo) * u(rng);
    a.occ = 0.5 + 0.5 * u(rng);
    m.atoms.push_back(a);
  }
  return m;
}

// Unique reflections to d_min with metadata, F_obs = 0, a few free.
inline ReflectionSet hkl_set(const UnitCell& cell, const SpaceGroup& sg, double d_min,
                             std::uint64_t seed = 1, double free_fraction = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  ReflectionSet r;
  for (const Miller& m : unique_reflections(cell, sg, d_min))
    r.add(m, 0.0, 0.0, u(rng) < free_fraction);
  assign_metadata(r, cell, sg);
  return r;
}

// F(h) = sum_ops sum_atoms occ f(s) exp(-B s^2) exp(-2 pi i h.(R x + t)),
// with s = 1/(2d), summed term by term.
inline std::vector<std::complex<double>> naive_f(const AtomicModel& m, const UnitCell& cell,
                                                 const SpaceGroup& sg,
                                                 const std::vector<Miller>& hkl,
                                                 const ScatteringTable& table) {
  std::vector<std::complex<double>> out;
  for (const Miller& h : hkl) {
    double d2inv = cell.inv_d2(h);
    double s = 0.5 * std::sqrt(d2inv);
    std::complex<double> f = 0;
    for (const SymOp& op : sg.ops)
      for (const Atom& a : m.atoms) {
        Vec3 x = cell.fractionalize(a.xyz);
        Vec3 y = Vec3::Zero();
        for (int i = 0; i != 3; ++i) {
          for (int j = 0; j != 3; ++j)
            y[i] += op.rot[i][j] * x[j];
          y[i] += double(op.tran[i]) / SymOp::DEN;
        }
        double phase = 2 * std::numbers::pi * (h.h * y[0] + h.k * y[1] + h.l * y[2]);
        double amp = a.occ * table.get(a.element).at_s(s) * std::exp(-a.b_iso * s * s);
        f += amp * std::polar(1.0, -phase);
      }
    out.push_back(f);
  }
  return out;
}

// F_s(h) = (V / N) sum_grid mask exp(-2 pi i h.(i/nx, j/ny, k/nz))
inline std::vector<std::complex<double>> naive_dft(const SolventGrid& g, const UnitCell& cell,
                                                   const std::vector<Miller>& hkl) {
  std::vector<std::complex<double>> out;
  double scale = cell.volume() / double(g.size());
  for (const Miller& h : hkl) {
    std::complex<double> f = 0;
    for (int i = 0; i != g.nx; ++i)
      for (int j = 0; j != g.ny; ++j)
        for (int k = 0; k != g.nz; ++k)
          if (g.at(i, j, k)) {
            double ph = 2 * std::numbers::pi *
                        (h.h * double(i) / g.nx + h.k * double(j) / g.ny + h.l * double(k) / g.nz);
            f += std::polar(1.0, -ph);
          }
    out.push_back(scale * f);
  }
  return out;
}

// max_i |a_i - b_i| / max_i |b_i|
template <class A, class B>
double max_rel_diff(const A& a, const B& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i != a.size(); ++i) {
    num = std::max(num, double(std::abs(a[i] - b[i])));
    den = std::max(den, double(std::abs(b[i])));
  }
  return den > 0 ? num / den : num;
}

// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol,
// started from `panels` equal panels so narrow peaks are not missed.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double tol, int panels = 64) {
  struct Rec {
    const F& f;
    double go(double a, double b, double fa, double fm, double fb, double whole, double tol,
              int depth) const {
      double m = 0.5 * (a + b), lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      double flm = f(lm), frm = f(rm);
      double left = (m - a) / 6 * (fa + 4 * flm + fm);
      double right = (b - m) / 6 * (fm + 4 * frm + fb);
      double diff = left + right - whole;
      if (depth <= 0 || std::abs(diff) <= 15 * tol)
        return left + right + diff / 15;
      return go(a, m, fa, flm, fm, left, tol / 2, depth - 1) +
             go(m, b, fm, frm, fb, right, tol / 2, depth - 1);
    }
  } rec{f};
  double sum = 0, w = (b - a) / panels;
  for (int i = 0; i != panels; ++i) {
    double lo = a + i * w, hi = lo + w;
    double fa = f(lo), fb = f(hi), fm = f(0.5 * (lo + hi));
    sum += rec.go(lo, hi, fa, fm, fb, w / 6 * (fa + 4 * fm + fb), tol / panels, 40);
  }
  return sum;
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0, 1);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

} // namespace xft

#endif
