// Atomic scattering factors (4-Gaussian form) and isotropic Debye-Waller
// attenuation.

#ifndef XTALFORGE_SCATTER_HPP_
#define XTALFORGE_SCATTER_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace xtalforge {

struct GaussianCoefs {
  std::array<double, 4> a{}, b{};
  double c = 0;

  // s = sin(theta)/lambda
  double at_s(double s) const {
    double s2 = s * s;
    return a[0] * std::exp(-b[0] * s2) + a[1] * std::exp(-b[1] * s2) +
           a[2] * std::exp(-b[2] * s2) + a[3] * std::exp(-b[3] * s2) + c;
  }
};

class ScatteringTable {
public:
  // FNV-1a 64 of data/scattering_it92.txt; any edit to the file must fail
  // loudly rather than silently change the forward model.
  static constexpr std::uint64_t pinned_checksum = 0xbba3bc2b541f40c6ULL;

  // Table compiled into the library from data/scattering_it92.txt.
  static const ScatteringTable& bundled();
  // Parses the text format; when verify is set the checksum must match.
  static ScatteringTable parse(std::string_view text, bool verify = true);
  static ScatteringTable load(const std::string& path, bool verify = true);

  bool has(std::string_view element) const;
  // Throws std::out_of_range listing supported elements.
  const GaussianCoefs& get(std::string_view element) const;
  std::vector<std::string> elements() const;

private:
  std::map<std::string, GaussianCoefs, std::less<>> coefs_;
};

// "CL" -> "Cl", " c" -> "C"
std::string normalize_element(std::string_view symbol);

double form_factor(const ScatteringTable& table, std::string_view element, double s);

inline double dwf_iso(double b, double s) { return std::exp(-b * s * s); }
inline double dwf_iso_grad_b(double b, double s) { return -s * s * std::exp(-b * s * s); }

// van der Waals radius used by the solvent mask (Angstrom); 1.8 for
// elements outside the table.
double vdw_radius(std::string_view element);

} // namespace xtalforge

#endif
