#include "xtalforge/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <set>
#include <stdexcept>

namespace xtalforge {

bool Atom::is_calpha() const {
  auto first = name.find_first_not_of(' ');
  auto last = name.find_last_not_of(' ');
  return first != std::string::npos && name.substr(first, last - first + 1) == "CA" &&
         element == "C";
}

Coords AtomicModel::positions() const {
  Coords out;
  out.reserve(atoms.size());
  for (const Atom& a : atoms)
    out.push_back(a.xyz);
  return out;
}

void AtomicModel::set_positions(const Coords& xyz) {
  if (xyz.size() != atoms.size())
    throw std::invalid_argument("coordinate count does not match atom count");
  for (std::size_t i = 0; i != atoms.size(); ++i)
    atoms[i].xyz = xyz[i];
}

std::vector<double> AtomicModel::b_factors() const {
  std::vector<double> out;
  out.reserve(atoms.size());
  for (const Atom& a : atoms)
    out.push_back(a.b_iso);
  return out;
}

void AtomicModel::set_b_factors(const std::vector<double>& b) {
  if (b.size() != atoms.size())
    throw std::invalid_argument("B-factor count does not match atom count");
  for (std::size_t i = 0; i != atoms.size(); ++i)
    atoms[i].b_iso = b[i];
}

std::vector<std::size_t> AtomicModel::calpha_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i != atoms.size(); ++i)
    if (atoms[i].is_calpha())
      out.push_back(i);
  return out;
}

std::vector<std::size_t> AtomicModel::heavy_atom_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i != atoms.size(); ++i)
    if (!atoms[i].is_hydrogen())
      out.push_back(i);
  return out;
}

void AtomicModel::validate() const {
  for (const Atom& a : atoms) {
    if (!(a.occ >= 0 && a.occ <= 1))
      throw std::invalid_argument("atom " + std::to_string(a.serial) +
                                  ": occupancy outside [0,1]");
    if (!(a.b_iso > 0))
      throw std::invalid_argument("atom " + std::to_string(a.serial) +
                                  ": B-factor must be positive");
    if (!a.xyz.allFinite())
      throw std::invalid_argument("atom " + std::to_string(a.serial) +
                                  ": non-finite coordinates");
  }
}

Coords fractional_coords(const AtomicModel& model, const UnitCell& cell) {
  Coords out;
  out.reserve(model.size());
  for (const Atom& a : model.atoms)
    out.push_back(cell.fractionalize(a.xyz));
  return out;
}

AtomicModel expand_to_p1(const AtomicModel& model, const UnitCell& cell,
                         const SpaceGroup& sg) {
  AtomicModel out;
  out.atoms.reserve(model.size() * sg.size());
  Coords frac = fractional_coords(model, cell);
  for (const SymOp& op : sg.ops)
    for (std::size_t i = 0; i != model.size(); ++i) {
      Atom a = model.atoms[i];
      Vec3 f = op.apply(frac[i]);
      for (int k = 0; k != 3; ++k)
        f[k] = wrap_fraction(f[k]);
      a.xyz = cell.orthogonalize(f);
      out.atoms.push_back(std::move(a));
    }
  for (std::size_t i = 0; i != out.atoms.size(); ++i)
    out.atoms[i].serial = static_cast<int>(i + 1);
  return out;
}

void ReflectionSet::add(const Miller& m, double f, double sig, bool is_free) {
  hkl.push_back(m);
  f_obs.push_back(f);
  sigma.push_back(sig);
  free.push_back(is_free ? 1 : 0);
}

void ReflectionSet::validate() const {
  std::size_t n = hkl.size();
  if (f_obs.size() != n || sigma.size() != n || free.size() != n)
    throw std::invalid_argument("reflection arrays have inconsistent lengths");
  std::set<Miller> seen;
  for (std::size_t i = 0; i != n; ++i) {
    if (!seen.insert(hkl[i]).second)
      throw std::invalid_argument("duplicate reflection (" + std::to_string(hkl[i].h) +
                                  "," + std::to_string(hkl[i].k) + "," +
                                  std::to_string(hkl[i].l) + ")");
    if (!(std::isfinite(f_obs[i]) && f_obs[i] >= 0))
      throw std::invalid_argument("reflection " + std::to_string(i) +
                                  ": amplitude must be finite and >= 0");
    if (!(std::isfinite(sigma[i]) && sigma[i] >= 0))
      throw std::invalid_argument("reflection " + std::to_string(i) +
                                  ": sigma must be finite and >= 0");
  }
}

std::vector<char> ReflectionSet::working_mask() const {
  std::vector<char> m(free.size());
  for (std::size_t i = 0; i != free.size(); ++i)
    m[i] = free[i] ? 0 : 1;
  return m;
}

std::vector<char> ReflectionSet::free_mask() const {
  std::vector<char> m(free.size());
  for (std::size_t i = 0; i != free.size(); ++i)
    m[i] = free[i] ? 1 : 0;
  return m;
}

std::size_t ReflectionSet::free_count() const {
  return static_cast<std::size_t>(std::count_if(free.begin(), free.end(),
                                                [](char c) { return c != 0; }));
}

double ReflectionSet::d_min() const {
  return d.empty() ? 0.0 : *std::min_element(d.begin(), d.end());
}

double ReflectionSet::d_max() const {
  return d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
}

void ReflectionSet::swap_free_flags() {
  for (char& c : free)
    c = c ? 0 : 1;
}

bool operator==(const ReflectionSet& a, const ReflectionSet& b) {
  if (a.size() != b.size() || a.hkl != b.hkl || a.free != b.free)
    return false;
  // bitwise comparison so that NaN payloads and signed zeros count
  for (std::size_t i = 0; i != a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a.f_obs[i]) != std::bit_cast<std::uint64_t>(b.f_obs[i]) ||
        std::bit_cast<std::uint64_t>(a.sigma[i]) != std::bit_cast<std::uint64_t>(b.sigma[i]))
      return false;
  return true;
}

void assign_metadata(ReflectionSet& refl, const UnitCell& cell, const SpaceGroup& sg) {
  refl.d.resize(refl.size());
  for (std::size_t i = 0; i != refl.size(); ++i)
    refl.d[i] = resolution(cell, refl.hkl[i]);
  refl.centric = centric_flags(sg, refl.hkl);
  refl.epsilon = epsilon_factors(sg, refl.hkl);
}

void assign_bins(ReflectionSet& refl, int n_bins, int min_working) {
  if (n_bins < 1)
    throw std::invalid_argument("number of bins must be >= 1");
  if (refl.d.size() != refl.size())
    throw std::logic_error("assign_bins called before assign_metadata");
  std::size_t n = refl.size();
  refl.bin.assign(n, 0);
  refl.n_bins = n == 0 ? 0 : 1;
  if (n == 0)
    return;
  // log(1/d) spacing, bin 0 = lowest resolution
  double lo = std::log(1.0 / refl.d_max());
  double hi = std::log(1.0 / refl.d_min());
  double width = (hi - lo) / n_bins;
  std::vector<int> raw(n, 0);
  for (std::size_t i = 0; i != n; ++i) {
    int b = width > 0 ? static_cast<int>((std::log(1.0 / refl.d[i]) - lo) / width) : 0;
    raw[i] = std::clamp(b, 0, n_bins - 1);
  }
  std::vector<int> working(n_bins, 0);
  for (std::size_t i = 0; i != n; ++i)
    if (!refl.free[i])
      ++working[raw[i]];
  // groups of consecutive raw bins, each with >= min_working working refl.
  std::vector<int> group(n_bins, 0);
  int g = 0, acc = 0;
  for (int b = 0; b != n_bins; ++b) {
    group[b] = g;
    acc += working[b];
    if (acc >= min_working && b != n_bins - 1) {
      ++g;
      acc = 0;
    }
  }
  int n_groups = g + 1;
  if (acc < min_working && n_groups > 1) {
    for (int b = 0; b != n_bins; ++b)
      if (group[b] == g)
        group[b] = g - 1;
    --n_groups;
  }
  for (std::size_t i = 0; i != n; ++i)
    refl.bin[i] = group[raw[i]];
  refl.n_bins = n_groups;
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  auto p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i != n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t free_set_digest(const ReflectionSet& refl) {
  std::vector<Miller> free;
  for (std::size_t i = 0; i != refl.size(); ++i)
    if (refl.free[i])
      free.push_back(refl.hkl[i]);
  std::sort(free.begin(), free.end());
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const Miller& m : free) {
    int v[3] = {m.h, m.k, m.l};
    h = fnv1a(v, sizeof v, h);
  }
  return h;
}

} // namespace xtalforge
