#include "xtalforge/kernels.hpp"

#include <cmath>
#include <numbers>

namespace xtalforge {

namespace {

constexpr double two_pi = 2 * std::numbers::pi;

// Per-reflection symmetry images: R^T h and the phase shift h.t.
struct Image {
  double h, k, l, shift;
};

std::vector<Image> images_of(const SfProblem& p, std::size_t r) {
  std::vector<Image> out;
  out.reserve(p.ops.size());
  for (const SymOp& op : p.ops) {
    Miller m = op.apply_to_hkl(p.hkl[r]);
    out.push_back({double(m.h), double(m.k), double(m.l), op.phase_shift(p.hkl[r])});
  }
  return out;
}

} // namespace

SfProblem make_sf_problem(const AtomicModel& model, const UnitCell& cell,
                          const SpaceGroup& sg, const std::vector<Miller>& hkl,
                          const ScatteringTable& table) {
  SfProblem p;
  p.ops = sg.ops;
  p.hkl = hkl;
  p.stol2.reserve(hkl.size());
  for (const Miller& m : hkl)
    p.stol2.push_back(0.25 * cell.inv_d2(m));
  std::vector<std::string> names;
  for (const Atom& a : model.atoms) {
    std::size_t e = 0;
    while (e != names.size() && names[e] != a.element)
      ++e;
    if (e == names.size()) {
      p.coefs.push_back(table.get(a.element));
      names.push_back(a.element);
    }
    p.frac.push_back(cell.fractionalize(a.xyz));
    p.occ.push_back(a.occ);
    p.b_iso.push_back(a.b_iso);
    p.elem.push_back(static_cast<int>(e));
  }
  std::size_t ne = p.coefs.size();
  p.fe.resize(hkl.size() * ne);
  for (std::size_t r = 0; r != hkl.size(); ++r)
    for (std::size_t e = 0; e != ne; ++e)
      p.fe[r * ne + e] = p.coefs[e].at_s(std::sqrt(p.stol2[r]));
  return p;
}

std::vector<cplx> f_protein_serial(const SfProblem& p) {
  std::vector<cplx> out(p.hkl.size());
  for (std::size_t r = 0; r != p.hkl.size(); ++r) {
    double s = std::sqrt(p.stol2[r]);
    cplx sum = 0;
    for (const SymOp& op : p.ops) {
      for (std::size_t j = 0; j != p.frac.size(); ++j) {
        Vec3 x = op.apply(p.frac[j]);
        double dot = p.hkl[r].h * x[0] + p.hkl[r].k * x[1] + p.hkl[r].l * x[2];
        double amp = p.coefs[p.elem[j]].at_s(s) * p.occ[j] * dwf_iso(p.b_iso[j], s);
        sum += amp * std::polar(1.0, -two_pi * dot);
      }
    }
    out[r] = sum;
  }
  return out;
}

std::vector<cplx> f_protein_omp(const SfProblem& p) {
  const long n_refl = static_cast<long>(p.hkl.size());
  const std::size_t n_atoms = p.frac.size();
  const std::size_t ne = p.coefs.size();
  std::vector<cplx> out(p.hkl.size());
#pragma omp parallel for schedule(static)
  for (long r = 0; r < n_refl; ++r) {
    std::vector<Image> img = images_of(p, r);
    const double* fe = p.fe.data() + r * ne;
    double re = 0, im = 0;
    for (const Image& g : img)
      for (std::size_t j = 0; j != n_atoms; ++j) {
        const Vec3& x = p.frac[j];
        double phi = two_pi * (g.h * x[0] + g.k * x[1] + g.l * x[2] + g.shift);
        double amp = fe[p.elem[j]] * p.occ[j] * std::exp(-p.b_iso[j] * p.stol2[r]);
        re += amp * std::cos(phi);
        im -= amp * std::sin(phi);
      }
    out[r] = {re, im};
  }
  return out;
}

SfGradient sf_gradient_serial(const SfProblem& p, const std::vector<cplx>& w) {
  SfGradient g;
  g.d_frac.assign(p.frac.size(), Vec3::Zero());
  g.d_b.assign(p.frac.size(), 0.0);
  for (std::size_t j = 0; j != p.frac.size(); ++j)
    for (std::size_t r = 0; r != p.hkl.size(); ++r) {
      if (w[r] == cplx(0))
        continue;
      double s = std::sqrt(p.stol2[r]);
      double amp = p.coefs[p.elem[j]].at_s(s) * p.occ[j] * dwf_iso(p.b_iso[j], s);
      for (const SymOp& op : p.ops) {
        Vec3 x = op.apply(p.frac[j]);
        double dot = p.hkl[r].h * x[0] + p.hkl[r].k * x[1] + p.hkl[r].l * x[2];
        cplx z = w[r] * std::polar(1.0, -two_pi * dot);
        Miller rh = op.apply_to_hkl(p.hkl[r]);
        g.d_frac[j] += two_pi * amp * z.imag() * Vec3(rh.h, rh.k, rh.l);
        g.d_b[j] -= p.stol2[r] * amp * z.real();
      }
    }
  return g;
}

SfGradient sf_gradient_omp(const SfProblem& p, const std::vector<cplx>& w) {
  const long n_atoms = static_cast<long>(p.frac.size());
  const std::size_t n_refl = p.hkl.size();
  const std::size_t ne = p.coefs.size();
  // images are shared by all atoms; build them once
  std::vector<std::vector<Image>> images(n_refl);
  for (std::size_t r = 0; r != n_refl; ++r)
    if (w[r] != cplx(0))
      images[r] = images_of(p, r);
  SfGradient g;
  g.d_frac.assign(p.frac.size(), Vec3::Zero());
  g.d_b.assign(p.frac.size(), 0.0);
#pragma omp parallel for schedule(static)
  for (long j = 0; j < n_atoms; ++j) {
    const Vec3& x = p.frac[j];
    double gx = 0, gy = 0, gz = 0, gb = 0;
    for (std::size_t r = 0; r != n_refl; ++r) {
      if (images[r].empty())
        continue;
      double amp = p.fe[r * ne + p.elem[j]] * p.occ[j] * std::exp(-p.b_iso[j] * p.stol2[r]);
      double wr = w[r].real(), wi = w[r].imag();
      double sum_re = 0;
      for (const Image& im : images[r]) {
        double phi = two_pi * (im.h * x[0] + im.k * x[1] + im.l * x[2] + im.shift);
        double c = std::cos(phi), s = std::sin(phi);
        // w * e^{-i phi}
        double zr = wr * c + wi * s;
        double zi = wi * c - wr * s;
        double t = two_pi * amp * zi;
        gx += t * im.h;
        gy += t * im.k;
        gz += t * im.l;
        sum_re += zr;
      }
      gb -= p.stol2[r] * amp * sum_re;
    }
    g.d_frac[j] = Vec3(gx, gy, gz);
    g.d_b[j] = gb;
  }
  return g;
}

} // namespace xtalforge
