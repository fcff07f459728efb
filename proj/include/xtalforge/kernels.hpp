// Direct-summation structure-factor kernels.
//
// Each kernel has a plain serial reference version, kept for testing and
// benchmarking, and an OpenMP version. The OpenMP kernels parallelize over
// independent outputs (reflections for F, atoms for gradients), so each
// output is accumulated in the same order as in the serial kernel and the
// results do not depend on the thread count.

#ifndef XTALFORGE_KERNELS_HPP_
#define XTALFORGE_KERNELS_HPP_

#include <complex>
#include <vector>

#include "xtalforge/model.hpp"
#include "xtalforge/scatter.hpp"

namespace xtalforge {

using cplx = std::complex<double>;

// Flattened inputs of the protein structure-factor sum.
struct SfProblem {
  std::vector<SymOp> ops;
  std::vector<Miller> hkl;
  std::vector<double> stol2;        // (sin(theta)/lambda)^2 = 1/(4 d^2)
  Coords frac;                      // asymmetric-unit atoms
  std::vector<double> occ;
  std::vector<double> b_iso;
  std::vector<int> elem;            // index into elements / coefs
  std::vector<GaussianCoefs> coefs; // one per distinct element
  std::vector<double> fe;           // fe[r * n_elem + e] = f_e(s_r)
};

// Throws std::out_of_range for elements missing from the table.
SfProblem make_sf_problem(const AtomicModel& model, const UnitCell& cell,
                          const SpaceGroup& sg, const std::vector<Miller>& hkl,
                          const ScatteringTable& table);

// F(h) = sum_G sum_j f_j(s) O_j exp(-B_j s^2) exp(-2 pi i h.G(x_j))
std::vector<cplx> f_protein_serial(const SfProblem& p);
std::vector<cplx> f_protein_omp(const SfProblem& p);

// Given per-reflection weights w_h = dL/d|F_c| * d|F_c|/d|F_p + k F_s| *
// conj(u_h), with u_h the unit phasor of F_p + k F_s, accumulate
//   dL/dfrac_j = 2 pi sum A Im(w e^{-i phi}) R^T h
//   dL/dB_j    = -sum s^2 A Re(w e^{-i phi})
struct SfGradient {
  Coords d_frac;
  std::vector<double> d_b;
};

SfGradient sf_gradient_serial(const SfProblem& p, const std::vector<cplx>& w);
SfGradient sf_gradient_omp(const SfProblem& p, const std::vector<cplx>& w);

} // namespace xtalforge

#endif
