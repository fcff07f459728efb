// Unit cell geometry, space-group operators and per-reflection symmetry
// metadata (resolution, centric flag, epsilon factor).

#ifndef XTALFORGE_CELL_SYM_HPP_
#define XTALFORGE_CELL_SYM_HPP_

#include <array>
#include <compare>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace xtalforge {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Miller {
  int h = 0, k = 0, l = 0;

  Miller operator-() const { return {-h, -k, -l}; }
  bool is_zero() const { return h == 0 && k == 0 && l == 0; }
  auto operator<=>(const Miller&) const = default;
};

class UnitCell {
public:
  UnitCell() : UnitCell(1, 1, 1, 90, 90, 90) {}
  // Throws std::invalid_argument for non-positive lengths, angles outside
  // (0, 180) or a degenerate (zero-volume) parallelepiped.
  UnitCell(double a, double b, double c, double alpha, double beta, double gamma);

  double a, b, c, alpha, beta, gamma;

  double volume() const { return volume_; }
  // PDB convention: a along x, b in the xy plane.
  const Mat3& orth() const { return orth_; }
  const Mat3& frac() const { return frac_; }
  // G* = frac * frac^T; 1/d^2 = h^T G* h
  const Mat3& reciprocal_metric() const { return rmetric_; }

  Vec3 orthogonalize(const Vec3& f) const { return orth_ * f; }
  Vec3 fractionalize(const Vec3& x) const { return frac_ * x; }

  double inv_d2(const Miller& hkl) const;
  // Scattering vector in an orthonormal reciprocal basis, |s| = 1/d.
  Vec3 reciprocal_vector(const Miller& hkl) const;
  // Reciprocal axis lengths |a*|, |b*|, |c*|.
  Vec3 reciprocal_lengths() const;

  bool approx_equal(const UnitCell& o, double rel_tol) const;

private:
  double volume_;
  Mat3 orth_, frac_, rmetric_;
};

// Rotation is an integer matrix acting on fractional coordinates; the
// translation is stored in twelfths and kept in [0, 12).
struct SymOp {
  static constexpr int DEN = 12;
  using Rot = std::array<std::array<int, 3>, 3>;
  using Tran = std::array<int, 3>;

  Rot rot{};
  Tran tran{};

  static SymOp identity();

  int det() const;
  Vec3 apply(const Vec3& frac) const;
  // (this * other)(x) = this(other(x)), translation reduced modulo lattice.
  SymOp combine(const SymOp& other) const;
  // R^T h, the reciprocal-space image of a Miller index.
  Miller apply_to_hkl(const Miller& hkl) const;
  // h . t as a fraction of a full turn.
  double phase_shift(const Miller& hkl) const;
  std::string triplet() const;

  bool operator==(const SymOp&) const = default;
};

// Grammar per coordinate: term (+|- term)*, with term one of x, y, z,
// n*x, nx, n, n/m. Whitespace is ignored, letters are case-insensitive.
SymOp parse_symop(std::string_view text);

struct SpaceGroup {
  std::string name;
  std::vector<SymOp> ops;

  SpaceGroup() : name("P 1"), ops{SymOp::identity()} {}
  // Throws std::invalid_argument when the identity is missing.
  SpaceGroup(std::string name, std::vector<SymOp> ops);

  std::size_t size() const { return ops.size(); }
  bool is_closed() const;
};

SpaceGroup space_group_from_triplets(std::string name,
                                     const std::vector<std::string>& triplets);
// Bundled table: P1, P-1, P2, P21, P212121, C2, P43212, P3121, P3221.
// Spaces and the monoclinic "1" placeholders are ignored ("P 1 21 1" == P21).
SpaceGroup find_space_group(std::string_view name);
std::vector<std::string> bundled_space_group_names();

// Throws std::domain_error for (0,0,0).
double resolution(const UnitCell& cell, const Miller& hkl);
std::vector<char> centric_flags(const SpaceGroup& sg, const std::vector<Miller>& hkls);
std::vector<int> epsilon_factors(const SpaceGroup& sg, const std::vector<Miller>& hkls);

// Wrap into [0, 1) with values within 1e-9 of an integer snapped to 0.
double wrap_fraction(double f);

} // namespace xtalforge

#endif
