#include "xtalforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

#include "xtalforge/align.hpp"

namespace xtalforge {

std::vector<Miller> unique_reflections(const UnitCell& cell, const SpaceGroup& sg, double d_min) {
  if (!(d_min > 0))
    throw std::invalid_argument("d_min must be > 0");
  Vec3 len = cell.reciprocal_lengths();
  int hmax = static_cast<int>(std::floor(1.0 / (d_min * len[0]) + 1e-9)) + 1;
  int kmax = static_cast<int>(std::floor(1.0 / (d_min * len[1]) + 1e-9)) + 1;
  int lmax = static_cast<int>(std::floor(1.0 / (d_min * len[2]) + 1e-9)) + 1;
  double lim = 1.0 / (d_min * d_min) * (1 + 1e-12);
  std::vector<Miller> out;
  for (int h = -hmax; h <= hmax; ++h)
    for (int k = -kmax; k <= kmax; ++k)
      for (int l = -lmax; l <= lmax; ++l) {
        Miller m{h, k, l};
        if (m.is_zero() || cell.inv_d2(m) > lim)
          continue;
        // keep the largest member of the orbit under the point group and Friedel
        Miller best = m;
        for (const SymOp& op : sg.ops) {
          Miller e = op.apply_to_hkl(m);
          best = std::max({best, e, -e});
        }
        if (best == m)
          out.push_back(m);
      }
  return out;
}

namespace {

struct BackboneAtom {
  const char* name;
  const char* element;
};
constexpr BackboneAtom backbone[4] = {{" N  ", "N"}, {" CA ", "C"}, {" C  ", "C"}, {" O  ", "O"}};

double round_to(double v, double scale) { return std::round(v * scale) / scale; }

} // namespace

SynthBundle synthesize(const SynthSpec& spec, const ScatteringTable& table) {
  if (spec.n_atoms < 1)
    throw std::invalid_argument("synth: n_atoms must be >= 1");
  SynthBundle out;
  out.cell = spec.cell;
  out.sg = find_space_group(spec.space_group);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Vec3 centre = spec.cell.orthogonalize(Vec3(0.5, 0.5, 0.5));
  double rad = spec.domain_radius;
  int half = spec.n_atoms / 2;
  auto lobe = [&](int i) {
    Vec3 c = centre;
    if (rad > 0)
      c[0] += (i < half ? -1.0 : 1.0) * (rad + 0.5 * spec.min_contact);
    return c;
  };
  auto inside = [&](const Vec3& p, int i) { return rad <= 0 || (p - lobe(i)).norm() <= rad; };
  std::vector<Vec3> pos;
  int restarts = 0;
  while (static_cast<int>(pos.size()) < spec.n_atoms) {
    int i = static_cast<int>(pos.size());
    if (i == 0 || (rad > 0 && i == half)) {
      // start of a lobe
      bool ok = false;
      for (int attempt = 0; attempt != 1000 && !ok; ++attempt) {
        Vec3 p = lobe(i);
        if (i != 0)
          p += 0.5 * rad * Vec3(unif(rng) - 0.5, unif(rng) - 0.5, unif(rng) - 0.5);
        ok = true;
        for (const Vec3& q : pos)
          ok = ok && (p - q).norm() >= spec.min_contact;
        if (ok)
          pos.push_back(p);
      }
      if (!ok)
        throw std::runtime_error("synth: could not place the second lobe");
      continue;
    }
    bool placed = false;
    for (int attempt = 0; attempt != 200 && !placed; ++attempt) {
      Vec3 d(normal(rng), normal(rng), normal(rng));
      if (d.norm() < 1e-12)
        continue;
      Vec3 p = pos.back() + spec.bond * d.normalized();
      bool ok = inside(p, i);
      for (std::size_t j = 0; j + 1 < pos.size() && ok; ++j)
        ok = (p - pos[j]).norm() >= spec.min_contact;
      if (ok) {
        pos.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      if (++restarts > 1000)
        throw std::runtime_error("synth: could not grow a clash-free chain");
      pos.resize(rad > 0 && i > half ? half + 1 : 1);
    }
  }

  for (int i = 0; i != spec.n_atoms; ++i) {
    Atom a;
    const BackboneAtom& bb = backbone[i % 4];
    a.name = bb.name;
    a.element = bb.element;
    a.res_name = "GLY";
    a.chain = "A";
    a.res_seq = i / 4 + 1;
    a.serial = i + 1;
    for (int k = 0; k != 3; ++k)
      a.xyz[k] = round_to(pos[i][k], 1e3);
    a.b_iso = round_to(spec.b_lo + (spec.b_hi - spec.b_lo) * unif(rng), 1e2);
    a.occ = 1.0;
    out.truth.atoms.push_back(a);
  }

  ReflectionSet& refl = out.refl;
  for (const Miller& m : unique_reflections(spec.cell, out.sg, spec.d_min))
    refl.add(m, 0.0, 0.0, unif(rng) < spec.free_fraction);

  ForwardConfig fc;
  fc.use_solvent = spec.solvent;
  fc.k_total_init = spec.k_total;
  fc.k_mask_init = spec.k_mask;
  ForwardModel fm(spec.cell, out.sg, refl, table, fc);
  StructureFactorState st = fm.initial_state(out.truth);
  const std::vector<double>& amp = st.f_calc_amp;
  double ms = 0;
  for (double f : amp)
    ms += f * f;
  double rms = amp.empty() ? 0.0 : std::sqrt(ms / amp.size());
  double sigma = spec.sigma_rel * rms;
  for (std::size_t i = 0; i != refl.size(); ++i) {
    double noise = spec.noise_rel > 0 ? spec.noise_rel * sigma * normal(rng) : 0.0;
    refl.f_obs[i] = std::max(0.0, amp[i] + noise);
    refl.sigma[i] = sigma;
  }
  return out;
}

AtomicModel perturb(const AtomicModel& model, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  AtomicModel out = model;
  for (Atom& a : out.atoms)
    for (int k = 0; k != 3; ++k)
      a.xyz[k] += normal(rng);
  return out;
}

AtomicModel conformational_offset(const AtomicModel& model, double rms, std::uint64_t seed) {
  std::size_t n = model.size();
  if (n == 0)
    return model;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Coords d(n);
  Vec3 mean = Vec3::Zero(), centroid = Vec3::Zero();
  for (std::size_t j = 0; j != n; ++j) {
    d[j] = Vec3(normal(rng), normal(rng), normal(rng));
    mean += d[j];
    centroid += model.atoms[j].xyz;
  }
  mean /= double(n);
  centroid /= double(n);
  for (Vec3& v : d)
    v -= mean;
  // remove the infinitesimal rigid rotation that best explains d
  Mat3 inertia = Mat3::Zero();
  Vec3 torque = Vec3::Zero();
  for (std::size_t j = 0; j != n; ++j) {
    Vec3 r = model.atoms[j].xyz - centroid;
    inertia += r.squaredNorm() * Mat3::Identity() - r * r.transpose();
    torque += r.cross(d[j]);
  }
  if (n >= 3) {
    Vec3 omega = inertia.ldlt().solve(torque);
    for (std::size_t j = 0; j != n; ++j)
      d[j] -= omega.cross(model.atoms[j].xyz - centroid);
  }
  double s = 0;
  for (const Vec3& v : d)
    s += v.squaredNorm();
  double scale = s > 0 ? rms / std::sqrt(s / n) : 0.0;
  AtomicModel out = model;
  for (std::size_t j = 0; j != n; ++j)
    out.atoms[j].xyz += scale * d[j];
  return out;
}

AtomicModel domain_shift(const AtomicModel& model, double target, std::uint64_t seed) {
  std::size_t n = model.size();
  if (n < 4)
    throw std::invalid_argument("domain_shift needs at least 4 atoms");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec3 dir(normal(rng), normal(rng), normal(rng));
  dir.normalize();
  Coords ref = model.positions();
  auto shifted = [&](double mag) {
    Coords x = ref;
    for (std::size_t j = n / 2; j != n; ++j)
      x[j] += mag * dir;
    return x;
  };
  double lo = 0, hi = 1;
  while (rmsd(shifted(hi), ref) < target)
    hi *= 2;
  for (int it = 0; it != 100; ++it) {
    double mid = 0.5 * (lo + hi);
    (rmsd(shifted(mid), ref) < target ? lo : hi) = mid;
  }
  AtomicModel out = model;
  out.set_positions(shifted(0.5 * (lo + hi)));
  return out;
}

} // namespace xtalforge
