#include "xtalforge/cell_sym.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <numeric>

namespace xtalforge {

namespace {

constexpr double deg = std::numbers::pi / 180.0;

int mod12(int v) { return ((v % SymOp::DEN) + SymOp::DEN) % SymOp::DEN; }

std::string normalize_sg_name(std::string_view name) {
  std::string out;
  for (char c : name)
    if (!std::isspace(static_cast<unsigned char>(c)) && c != '_')
      out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  // full monoclinic symbols: P121 -> P2, P1211 -> P21, C121 -> C2
  if (out.size() >= 4 && out[1] == '1' && out.back() == '1' && out != "P1")
    out = out.substr(0, 1) + out.substr(2, out.size() - 3);
  return out;
}

struct BundledGroup {
  const char* name;
  std::vector<const char*> ops;
};

const std::vector<BundledGroup>& bundled_groups() {
  static const std::vector<BundledGroup> groups = {
    {"P 1", {"x,y,z"}},
    {"P -1", {"x,y,z", "-x,-y,-z"}},
    {"P 1 2 1", {"x,y,z", "-x,y,-z"}},
    {"P 1 21 1", {"x,y,z", "-x,y+1/2,-z"}},
    {"P 21 21 21", {"x,y,z", "-x+1/2,-y,z+1/2", "-x,y+1/2,-z+1/2",
                    "x+1/2,-y+1/2,-z"}},
    {"C 1 2 1", {"x,y,z", "-x,y,-z", "x+1/2,y+1/2,z", "-x+1/2,y+1/2,-z"}},
    {"P 43 21 2", {"x,y,z", "-x,-y,z+1/2", "-y+1/2,x+1/2,z+3/4",
                   "y+1/2,-x+1/2,z+1/4", "-x+1/2,y+1/2,-z+3/4",
                   "x+1/2,-y+1/2,-z+1/4", "y,x,-z", "-y,-x,-z+1/2"}},
    {"P 31 2 1", {"x,y,z", "-y,x-y,z+1/3", "-x+y,-x,z+2/3", "y,x,-z",
                  "x-y,-y,-z+2/3", "-x,-x+y,-z+1/3"}},
    {"P 32 2 1", {"x,y,z", "-y,x-y,z+2/3", "-x+y,-x,z+1/3", "y,x,-z",
                  "x-y,-y,-z+1/3", "-x,-x+y,-z+2/3"}},
  };
  return groups;
}

class TripletParser {
public:
  explicit TripletParser(std::string_view text) : text_(text) {}

  SymOp parse() {
    SymOp op;
    std::array<int, 3> tran{};
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= text_.size(); ++i)
      if (i == text_.size() || text_[i] == ',') {
        parts.push_back(text_.substr(start, i - start));
        start = i + 1;
      }
    if (parts.size() != 3)
      throw ParseError("symmetry operator '" + std::string(text_) +
                       "': expected 3 comma-separated parts, got " +
                       std::to_string(parts.size()));
    for (int row = 0; row != 3; ++row)
      parse_row(parts[row], op.rot[row], tran[row]);
    for (int i = 0; i != 3; ++i)
      op.tran[i] = mod12(tran[i]);
    int d = op.det();
    if (d != 1 && d != -1)
      throw ParseError("symmetry operator '" + std::string(text_) +
                       "': rotation has determinant " + std::to_string(d));
    return op;
  }

private:
  std::string_view text_;

  [[noreturn]] void fail_token(std::string_view token, const char* why) const {
    throw ParseError("symmetry operator '" + std::string(text_) + "': " + why +
                     " at token '" + std::string(token) + "'");
  }

  void parse_row(std::string_view part, std::array<int, 3>& row, int& tran) {
    std::string s;
    for (char c : part)
      if (!std::isspace(static_cast<unsigned char>(c)))
        s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s.empty())
      fail_token(part, "empty expression");
    std::size_t pos = 0;
    bool first = true;
    while (pos < s.size()) {
      std::size_t term_start = pos;
      int sign = 1;
      if (s[pos] == '+' || s[pos] == '-') {
        sign = s[pos] == '-' ? -1 : 1;
        ++pos;
      } else if (!first) {
        fail_token(s.substr(pos), "expected '+' or '-'");
      }
      first = false;
      if (pos >= s.size())
        fail_token(s.substr(term_start), "dangling sign");
      long num = 1;
      bool has_num = false;
      if (std::isdigit(static_cast<unsigned char>(s[pos]))) {
        num = 0;
        while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos])))
          num = num * 10 + (s[pos++] - '0');
        has_num = true;
        if (pos < s.size() && s[pos] == '/') {
          ++pos;
          long den = 0;
          if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos])))
            fail_token(s.substr(term_start), "missing denominator");
          while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos])))
            den = den * 10 + (s[pos++] - '0');
          if (den == 0)
            fail_token(s.substr(term_start, pos - term_start), "zero denominator");
          if ((num * SymOp::DEN) % den != 0)
            fail_token(s.substr(term_start, pos - term_start),
                       "translation is not a multiple of 1/12");
          tran += sign * static_cast<int>(num * SymOp::DEN / den);
          continue;
        }
        if (pos < s.size() && s[pos] == '*')
          ++pos;
      }
      if (pos < s.size() && (s[pos] == 'x' || s[pos] == 'y' || s[pos] == 'z')) {
        row[s[pos] - 'x'] += sign * static_cast<int>(num);
        ++pos;
      } else if (has_num) {
        if (pos > 0 && s[pos - 1] == '*')
          fail_token(s.substr(term_start, pos - term_start), "'*' without axis");
        tran += sign * static_cast<int>(num * SymOp::DEN);
      } else {
        std::size_t end = pos;
        while (end < s.size() && s[end] != '+' && s[end] != '-')
          ++end;
        fail_token(s.substr(pos, std::max<std::size_t>(end - pos, 1)),
                   "unexpected character");
      }
    }
  }
};

} // namespace

UnitCell::UnitCell(double a_, double b_, double c_,
                   double alpha_, double beta_, double gamma_)
    : a(a_), b(b_), c(c_), alpha(alpha_), beta(beta_), gamma(gamma_) {
  if (!(a > 0 && b > 0 && c > 0))
    throw std::invalid_argument("unit cell lengths must be positive");
  for (double ang : {alpha, beta, gamma})
    if (!(ang > 0 && ang < 180))
      throw std::invalid_argument("unit cell angles must lie in (0, 180)");
  double ca = std::cos(alpha * deg), cb = std::cos(beta * deg),
         cg = std::cos(gamma * deg), sg = std::sin(gamma * deg);
  // exact zero for right angles keeps orthogonal cells diagonal
  if (alpha == 90) ca = 0;
  if (beta == 90) cb = 0;
  if (gamma == 90) { cg = 0; sg = 1; }
  double v2 = 1 - ca * ca - cb * cb - cg * cg + 2 * ca * cb * cg;
  // rounding leaves ~1e-16 for flat cells such as 120/120/120
  if (!(v2 > 1e-12))
    throw std::invalid_argument("unit cell angles do not form a valid cell");
  volume_ = a * b * c * std::sqrt(v2);
  orth_ << a, b * cg, c * cb,
           0, b * sg, c * (ca - cb * cg) / sg,
           0, 0, volume_ / (a * b * sg);
  frac_ = orth_.inverse();
  rmetric_ = frac_ * frac_.transpose();
}

double UnitCell::inv_d2(const Miller& m) const {
  Vec3 h(m.h, m.k, m.l);
  return h.dot(rmetric_ * h);
}

Vec3 UnitCell::reciprocal_vector(const Miller& m) const {
  return frac_.transpose() * Vec3(m.h, m.k, m.l);
}

Vec3 UnitCell::reciprocal_lengths() const {
  return {frac_.row(0).norm(), frac_.row(1).norm(), frac_.row(2).norm()};
}

bool UnitCell::approx_equal(const UnitCell& o, double rel_tol) const {
  auto close = [rel_tol](double x, double y) {
    return std::fabs(x - y) <= rel_tol * std::max(std::fabs(x), std::fabs(y));
  };
  return close(a, o.a) && close(b, o.b) && close(c, o.c) &&
         close(alpha, o.alpha) && close(beta, o.beta) && close(gamma, o.gamma);
}

SymOp SymOp::identity() {
  SymOp op;
  op.rot = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  return op;
}

int SymOp::det() const {
  const Rot& r = rot;
  return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
         r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
         r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
}

Vec3 SymOp::apply(const Vec3& f) const {
  Vec3 out;
  for (int i = 0; i != 3; ++i)
    out[i] = rot[i][0] * f[0] + rot[i][1] * f[1] + rot[i][2] * f[2] +
             static_cast<double>(tran[i]) / DEN;
  return out;
}

SymOp SymOp::combine(const SymOp& b) const {
  SymOp r;
  for (int i = 0; i != 3; ++i) {
    int t = tran[i];
    for (int j = 0; j != 3; ++j) {
      r.rot[i][j] = rot[i][0] * b.rot[0][j] + rot[i][1] * b.rot[1][j] +
                    rot[i][2] * b.rot[2][j];
      t += rot[i][j] * b.tran[j];
    }
    r.tran[i] = mod12(t);
  }
  return r;
}

Miller SymOp::apply_to_hkl(const Miller& m) const {
  return {rot[0][0] * m.h + rot[1][0] * m.k + rot[2][0] * m.l,
          rot[0][1] * m.h + rot[1][1] * m.k + rot[2][1] * m.l,
          rot[0][2] * m.h + rot[1][2] * m.k + rot[2][2] * m.l};
}

double SymOp::phase_shift(const Miller& m) const {
  return static_cast<double>(m.h * tran[0] + m.k * tran[1] + m.l * tran[2]) / DEN;
}

std::string SymOp::triplet() const {
  std::string out;
  for (int i = 0; i != 3; ++i) {
    std::string part;
    for (int j = 0; j != 3; ++j) {
      int v = rot[i][j];
      if (v == 0)
        continue;
      if (v < 0)
        part += '-';
      else if (!part.empty())
        part += '+';
      if (std::abs(v) != 1)
        part += std::to_string(std::abs(v)) + "*";
      part += static_cast<char>('x' + j);
    }
    if (tran[i] != 0) {
      int g = std::gcd(tran[i], DEN);
      if (!part.empty())
        part += '+';
      part += std::to_string(tran[i] / g) + "/" + std::to_string(DEN / g);
    }
    if (part.empty())
      part = "0";
    out += part;
    if (i != 2)
      out += ',';
  }
  return out;
}

SymOp parse_symop(std::string_view text) {
  return TripletParser(text).parse();
}

SpaceGroup::SpaceGroup(std::string name_, std::vector<SymOp> ops_)
    : name(std::move(name_)), ops(std::move(ops_)) {
  if (std::find(ops.begin(), ops.end(), SymOp::identity()) == ops.end())
    throw std::invalid_argument("space group " + name + " lacks the identity operator");
}

bool SpaceGroup::is_closed() const {
  for (const SymOp& x : ops)
    for (const SymOp& y : ops)
      if (std::find(ops.begin(), ops.end(), x.combine(y)) == ops.end())
        return false;
  return true;
}

SpaceGroup space_group_from_triplets(std::string name,
                                     const std::vector<std::string>& triplets) {
  std::vector<SymOp> ops;
  ops.reserve(triplets.size());
  for (const std::string& t : triplets)
    ops.push_back(parse_symop(t));
  return SpaceGroup(std::move(name), std::move(ops));
}

SpaceGroup find_space_group(std::string_view name) {
  std::string key = normalize_sg_name(name);
  for (const BundledGroup& g : bundled_groups())
    if (normalize_sg_name(g.name) == key) {
      std::vector<std::string> t(g.ops.begin(), g.ops.end());
      return space_group_from_triplets(g.name, t);
    }
  std::string known;
  for (const BundledGroup& g : bundled_groups())
    known += std::string(known.empty() ? "" : ", ") + g.name;
  throw std::invalid_argument("unsupported space group '" + std::string(name) +
                              "' (bundled: " + known + ")");
}

std::vector<std::string> bundled_space_group_names() {
  std::vector<std::string> out;
  for (const BundledGroup& g : bundled_groups())
    out.emplace_back(g.name);
  return out;
}

double resolution(const UnitCell& cell, const Miller& hkl) {
  if (hkl.is_zero())
    throw std::domain_error("resolution undefined for Miller index (0,0,0)");
  return 1.0 / std::sqrt(cell.inv_d2(hkl));
}

std::vector<char> centric_flags(const SpaceGroup& sg, const std::vector<Miller>& hkls) {
  std::vector<char> out(hkls.size(), 0);
  for (std::size_t i = 0; i != hkls.size(); ++i) {
    Miller minus = -hkls[i];
    for (const SymOp& op : sg.ops)
      if (op.apply_to_hkl(hkls[i]) == minus) {
        out[i] = 1;
        break;
      }
  }
  return out;
}

std::vector<int> epsilon_factors(const SpaceGroup& sg, const std::vector<Miller>& hkls) {
  std::vector<int> out(hkls.size(), 0);
  for (std::size_t i = 0; i != hkls.size(); ++i) {
    // pure lattice translations (centring) fix every hkl; count rotations
    // only once so that epsilon refers to the point-group stabilizer
    std::vector<SymOp::Rot> seen;
    for (const SymOp& op : sg.ops)
      if (op.apply_to_hkl(hkls[i]) == hkls[i] &&
          std::find(seen.begin(), seen.end(), op.rot) == seen.end())
        seen.push_back(op.rot);
    out[i] = static_cast<int>(seen.size());
  }
  return out;
}

double wrap_fraction(double f) {
  double w = f - std::floor(f);
  if (w < 1e-9 || w > 1 - 1e-9)
    w = 0;
  return w;
}

} // namespace xtalforge
