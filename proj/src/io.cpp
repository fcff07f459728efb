#include "xtalforge/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "xtalforge/diagnostics.hpp"
#include "xtalforge/scatter.hpp"

namespace xtalforge {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  return s;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    out.push_back(line);
    pos = end + 1;
  }
  return out;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
      ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j])))
      ++j;
    if (j > i)
      out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool to_double(std::string_view s, double& v) {
  s = trim(s);
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  if (s.empty())
    return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

bool to_int(std::string_view s, int& v) {
  s = trim(s);
  if (!s.empty() && s.front() == '+')
    s.remove_prefix(1);
  if (s.empty())
    return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

// 1-based inclusive PDB column range; short lines give an empty field.
std::string_view column(std::string_view line, std::size_t first, std::size_t last) {
  if (line.size() < first)
    return {};
  return line.substr(first - 1, std::min(last, line.size()) - first + 1);
}

} // namespace

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw std::runtime_error("write failed for '" + path + "'");
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

double parse_double(std::string_view text, std::string_view what) {
  double v;
  if (!to_double(text, v))
    throw ParseError(std::string(what) + ": expected a number, got '" + std::string(text) + "'");
  return v;
}

int parse_int(std::string_view text, std::string_view what) {
  int v;
  if (!to_int(text, v))
    throw ParseError(std::string(what) + ": expected an integer, got '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view text, std::string_view what) {
  std::string t = upper(trim(text));
  if (t == "TRUE" || t == "1" || t == "YES" || t == "ON")
    return true;
  if (t == "FALSE" || t == "0" || t == "NO" || t == "OFF")
    return false;
  throw ParseError(std::string(what) + ": expected true/false, got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- PDB

namespace {

std::string element_from_name(std::string_view name) {
  // columns 13-14 hold the right-justified element symbol
  std::string n(name);
  n.resize(4, ' ');
  if (std::isalpha(static_cast<unsigned char>(n[0])) && n[0] != 'H')
    return normalize_element(n.substr(0, 2));
  for (char c : n)
    if (std::isalpha(static_cast<unsigned char>(c)))
      return normalize_element(std::string(1, c));
  return {};
}

} // namespace

PdbStructure read_pdb(std::string_view text) {
  PdbStructure out;
  bool have_cell = false;
  std::vector<Atom> atoms;
  auto lines = split_lines(text);
  for (std::size_t ln = 0; ln != lines.size(); ++ln) {
    std::string_view line = lines[ln];
    std::string rec = upper(trim(column(line, 1, 6)));
    if (rec == "ENDMDL")
      break;
    if (rec == "CRYST1") {
      double p[6];
      const std::size_t cols[6][2] = {{7, 15}, {16, 24}, {25, 33}, {34, 40}, {41, 47}, {48, 54}};
      for (int i = 0; i != 6; ++i)
        if (!to_double(column(line, cols[i][0], cols[i][1]), p[i]))
          throw ParseError(where(ln + 1) + "malformed CRYST1 columns " +
                           std::to_string(cols[i][0]) + "-" + std::to_string(cols[i][1]));
      try {
        out.cell = UnitCell(p[0], p[1], p[2], p[3], p[4], p[5]);
      } catch (const std::exception& e) {
        throw ParseError(where(ln + 1) + e.what());
      }
      out.space_group = std::string(trim(column(line, 56, 66)));
      have_cell = true;
      continue;
    }
    if (rec != "ATOM" && rec != "HETATM")
      continue;
    if (line.size() < 54)
      throw ParseError(where(ln + 1) + "atom record shorter than 54 columns");
    Atom a;
    a.hetatm = rec == "HETATM";
    int serial = 0;
    to_int(column(line, 7, 11), serial);  // may overflow the column in big files
    a.serial = serial;
    a.name = std::string(column(line, 13, 16));
    a.name.resize(4, ' ');
    std::string_view alt = column(line, 17, 17);
    a.altloc = alt.empty() ? ' ' : alt[0];
    a.res_name = std::string(trim(column(line, 18, 20)));
    a.chain = std::string(trim(column(line, 22, 22)));
    if (!to_int(column(line, 23, 26), a.res_seq))
      throw ParseError(where(ln + 1) + "malformed residue number (columns 23-26)");
    std::string_view ic = column(line, 27, 27);
    a.icode = ic.empty() ? ' ' : ic[0];
    const char* axis[3] = {"x", "y", "z"};
    for (int k = 0; k != 3; ++k)
      if (!to_double(column(line, 31 + 8 * k, 38 + 8 * k), a.xyz[k]))
        throw ParseError(where(ln + 1) + "malformed " + axis[k] + " coordinate (columns " +
                         std::to_string(31 + 8 * k) + "-" + std::to_string(38 + 8 * k) + ")");
    std::string_view occ = column(line, 55, 60);
    if (!trim(occ).empty() && !to_double(occ, a.occ))
      throw ParseError(where(ln + 1) + "malformed occupancy (columns 55-60)");
    std::string_view b = column(line, 61, 66);
    if (!trim(b).empty() && !to_double(b, a.b_iso))
      throw ParseError(where(ln + 1) + "malformed B-factor (columns 61-66)");
    std::string_view el = trim(column(line, 77, 78));
    a.element = el.empty() ? element_from_name(a.name) : normalize_element(el);
    if (a.element.empty())
      throw ParseError(where(ln + 1) + "cannot determine element");
    atoms.push_back(std::move(a));
  }
  if (!have_cell)
    throw ParseError("missing CRYST1 record (unit cell is required)");

  // alternate conformers: keep one per atom site
  auto same_site = [](const Atom& x, const Atom& y) {
    return x.chain == y.chain && x.res_seq == y.res_seq && x.icode == y.icode &&
           x.name == y.name;
  };
  std::vector<char> keep(atoms.size(), 1);
  for (std::size_t i = 0; i != atoms.size(); ++i) {
    if (atoms[i].altloc == ' ' || !keep[i])
      continue;
    std::size_t best = i;
    for (std::size_t j = i + 1; j != atoms.size(); ++j) {
      if (atoms[j].altloc == ' ' || !same_site(atoms[i], atoms[j]))
        continue;
      const Atom& bj = atoms[j];
      const Atom& bb = atoms[best];
      if (bj.occ > bb.occ || (bj.occ == bb.occ && bj.altloc < bb.altloc)) {
        keep[best] = 0;
        best = j;
      } else {
        keep[j] = 0;
      }
    }
  }
  for (std::size_t i = 0; i != atoms.size(); ++i) {
    if (!keep[i]) {
      ++out.altlocs_dropped;
      continue;
    }
    if (atoms[i].is_hydrogen())
      ++out.hydrogens;
    out.model.atoms.push_back(std::move(atoms[i]));
  }
  return out;
}

namespace {

void put_fixed(std::string& line, const char* fmt, double v, int width, const char* what,
               int serial) {
  char buf[32];
  int n = std::snprintf(buf, sizeof buf, fmt, v);
  if (n != width || !std::isfinite(v))
    throw std::range_error("atom " + std::to_string(serial) + ": " + what + " " +
                           format_double(v) + " does not fit PDB columns");
  line += buf;
}

} // namespace

std::string write_pdb(const AtomicModel& model, const UnitCell& cell,
                      std::string_view space_group) {
  std::string out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "CRYST1%9.3f%9.3f%9.3f%7.2f%7.2f%7.2f %-11.11s%4d\n",
                cell.a, cell.b, cell.c, cell.alpha, cell.beta, cell.gamma,
                std::string(space_group).c_str(), 1);
  out += buf;
  for (std::size_t i = 0; i != model.size(); ++i) {
    const Atom& a = model.atoms[i];
    std::string name = a.name;
    if (name.size() < 4 && a.element.size() == 1 && (name.empty() || name[0] != ' '))
      name = " " + name;
    name.resize(4, ' ');
    int serial = static_cast<int>((i + 1) % 100000);
    std::string chain = a.chain.empty() ? " " : a.chain.substr(0, 1);
    std::snprintf(buf, sizeof buf, "%-6s%5d %4.4s%c%3.3s %1.1s%4d%c   ",
                  a.hetatm ? "HETATM" : "ATOM", serial, name.c_str(), a.altloc,
                  a.res_name.c_str(), chain.c_str(), a.res_seq, a.icode);
    std::string line = buf;
    for (int k = 0; k != 3; ++k)
      put_fixed(line, "%8.3f", a.xyz[k], 8, "coordinate", a.serial);
    put_fixed(line, "%6.2f", a.occ, 6, "occupancy", a.serial);
    put_fixed(line, "%6.2f", a.b_iso, 6, "B-factor", a.serial);
    std::snprintf(buf, sizeof buf, "          %2.2s\n", upper(a.element).c_str());
    line += buf;
    out += line;
  }
  out += "END\n";
  return out;
}

// ---------------------------------------------------------------- MTZ

namespace {

constexpr std::size_t mtz_data_offset = 80;  // word 21

struct MtzColumn {
  std::string label;
  char type = ' ';
};

class ByteReader {
public:
  ByteReader(std::string_view bytes, bool big_endian) : b_(bytes), big_(big_endian) {}

  std::uint32_t u32(std::size_t off) const {
    if (off + 4 > b_.size())
      throw ParseError("MTZ truncated at byte " + std::to_string(off));
    unsigned char c[4];
    std::memcpy(c, b_.data() + off, 4);
    if (big_)
      return std::uint32_t(c[0]) << 24 | std::uint32_t(c[1]) << 16 | std::uint32_t(c[2]) << 8 |
             c[3];
    return std::uint32_t(c[3]) << 24 | std::uint32_t(c[2]) << 16 | std::uint32_t(c[1]) << 8 |
           c[0];
  }
  float f32(std::size_t off) const { return std::bit_cast<float>(u32(off)); }

private:
  std::string_view b_;
  bool big_;
};

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i != 4; ++i)
    out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_record(std::string& out, const std::string& rec) {
  std::string r = rec.substr(0, 80);
  r.resize(80, ' ');
  out += r;
}

int space_group_number(const std::string& name) {
  static const std::pair<const char*, int> numbers[] = {
      {"P 1", 1},       {"P -1", 2},       {"P 1 2 1", 3},    {"P 1 21 1", 4},
      {"C 1 2 1", 5},   {"P 21 21 21", 19}, {"P 43 21 2", 96}, {"P 31 2 1", 152},
      {"P 32 2 1", 154}};
  for (auto& [n, num] : numbers)
    if (find_space_group(n).name == name)
      return num;
  return 0;
}

const std::vector<std::string> f_labels = {"F", "FP", "FOBS", "F-obs", "F_meas_au"};
const std::vector<std::string> sigma_labels = {"SIGF", "SIGFP", "SIGFOBS", "SIGF-obs",
                                               "F_meas_sigma_au"};
const std::vector<std::string> free_labels = {"FreeR_flag", "FREE", "R-free-flags",
                                              "FreeRflag", "FREER"};

int find_label(const std::vector<MtzColumn>& cols, const std::vector<std::string>& names) {
  for (const std::string& n : names)
    for (std::size_t i = 0; i != cols.size(); ++i)
      if (cols[i].label == n)
        return static_cast<int>(i);
  return -1;
}

} // namespace

ReflectionFile read_mtz(std::string_view bytes, const MtzOptions& opt) {
  if (bytes.size() < 12 || bytes.substr(0, 4) != "MTZ ")
    throw ParseError("not an MTZ file (missing 'MTZ ' magic)");
  unsigned char stamp = static_cast<unsigned char>(bytes[8]);
  int real_format = stamp >> 4;
  if (real_format != 1 && real_format != 4)
    throw ParseError("MTZ machine stamp 0x" + std::to_string(stamp) +
                     " is not an IEEE float format");
  ByteReader rd(bytes, real_format == 1);
  std::uint32_t header_word = rd.u32(4);
  if (header_word < 21)
    throw ParseError("MTZ header pointer " + std::to_string(header_word) + " is invalid");
  std::size_t header_off = (static_cast<std::size_t>(header_word) - 1) * 4;
  if (header_off >= bytes.size())
    throw ParseError("MTZ header pointer beyond end of file (truncated?)");

  ReflectionFile out;
  std::vector<MtzColumn> cols;
  int ncol = -1;
  long nref = -1;
  std::optional<float> valm;
  bool ended = false;
  for (std::size_t off = header_off; off + 80 <= bytes.size() && !ended; off += 80) {
    std::string_view rec = bytes.substr(off, 80);
    auto tok = split_ws(rec);
    if (tok.empty())
      continue;
    std::string key = upper(tok[0]);
    std::string ctx = "MTZ header record at byte " + std::to_string(off);
    if (key == "END" || key == "MTZENDOFHEADERS") {
      ended = true;
    } else if (key == "NCOL") {
      if (tok.size() < 3)
        throw ParseError(ctx + ": NCOL needs column and reflection counts");
      ncol = parse_int(tok[1], ctx);
      nref = parse_int(tok[2], ctx);
    } else if (key == "CELL") {
      if (tok.size() < 7)
        throw ParseError(ctx + ": CELL needs six parameters");
      double p[6];
      for (int i = 0; i != 6; ++i)
        p[i] = parse_double(tok[i + 1], ctx);
      out.cell = UnitCell(p[0], p[1], p[2], p[3], p[4], p[5]);
    } else if (key == "SYMINF") {
      auto q1 = rec.find('\'');
      auto q2 = q1 == std::string_view::npos ? q1 : rec.find('\'', q1 + 1);
      if (q2 != std::string_view::npos)
        out.space_group = std::string(trim(rec.substr(q1 + 1, q2 - q1 - 1)));
    } else if (key == "SYMM") {
      out.symops.emplace_back(trim(rec.substr(4)));
    } else if (key == "VALM") {
      if (tok.size() >= 2 && upper(tok[1]) != "NAN")
        valm = static_cast<float>(parse_double(tok[1], ctx));
    } else if (key == "COLUMN") {
      if (tok.size() < 3)
        throw ParseError(ctx + ": COLUMN needs label and type");
      cols.push_back({std::string(tok[1]), tok[2][0]});
    }
  }
  if (!ended)
    throw ParseError("MTZ header has no END record (truncated?)");
  if (ncol < 0 || nref < 0)
    throw ParseError("MTZ header has no NCOL record");
  if (static_cast<int>(cols.size()) != ncol)
    throw ParseError("MTZ NCOL says " + std::to_string(ncol) + " columns but " +
                     std::to_string(cols.size()) + " COLUMN records found");
  std::size_t data_bytes = static_cast<std::size_t>(ncol) * static_cast<std::size_t>(nref) * 4;
  if (mtz_data_offset + data_bytes > header_off)
    throw ParseError("MTZ reflection data overlaps the header (truncated?)");

  int ih = find_label(cols, {"H"}), ik = find_label(cols, {"K"}), il = find_label(cols, {"L"});
  if (ih < 0 || ik < 0 || il < 0)
    throw ParseError("MTZ file lacks H, K or L column");
  int jf = find_label(cols, f_labels);
  if (jf < 0)
    for (std::size_t i = 0; i != cols.size() && jf < 0; ++i)
      if (cols[i].type == 'F')
        jf = static_cast<int>(i);
  if (jf < 0)
    throw ParseError("MTZ file has no amplitude column (looked for F, FP, FOBS or type F)");
  int js = find_label(cols, sigma_labels);
  if (js < 0)
    for (std::size_t i = 0; i != cols.size() && js < 0; ++i)
      if (cols[i].type == 'Q' && cols[i].label == "SIG" + cols[jf].label)
        js = static_cast<int>(i);
  int jr = find_label(cols, free_labels);
  out.f_label = cols[jf].label;
  out.sigma_label = js >= 0 ? cols[js].label : "";
  out.free_label = jr >= 0 ? cols[jr].label : "";
  if (js < 0)
    warn("MTZ: no sigma column, using sigma = 0");
  if (jr < 0)
    warn("MTZ: no free-flag column, all reflections are working");

  auto missing = [&](float v) {
    return std::isnan(v) || (valm && std::bit_cast<std::uint32_t>(v) ==
                                         std::bit_cast<std::uint32_t>(*valm));
  };
  for (long r = 0; r != nref; ++r) {
    std::size_t row = mtz_data_offset + static_cast<std::size_t>(r) * ncol * 4;
    auto at = [&](int c) { return rd.f32(row + static_cast<std::size_t>(c) * 4); };
    float h = at(ih), k = at(ik), l = at(il), f = at(jf);
    float s = js >= 0 ? at(js) : 0.0f;
    if (missing(h) || missing(k) || missing(l) || missing(f) || missing(s)) {
      ++out.dropped;
      continue;
    }
    bool is_free = false;
    if (jr >= 0) {
      float fr = at(jr);
      is_free = !missing(fr) && std::lround(fr) == opt.free_value;
    }
    out.refl.add({static_cast<int>(std::lround(h)), static_cast<int>(std::lround(k)),
                  static_cast<int>(std::lround(l))},
                 f, s, is_free);
  }
  if (out.dropped)
    warn("MTZ: dropped " + std::to_string(out.dropped) + " reflections with missing values");
  return out;
}

std::string write_mtz(const ReflectionSet& refl, const UnitCell& cell, const SpaceGroup& sg,
                      std::string_view title) {
  const int ncol = 6;
  std::size_t n = refl.size();
  std::string out;
  out += "MTZ ";
  put_u32le(out, static_cast<std::uint32_t>(21 + ncol * n));
  out += std::string("\x44\x41\x00\x00", 4);
  out.resize(mtz_data_offset, '\0');

  std::vector<float> lo(ncol, std::numeric_limits<float>::infinity());
  std::vector<float> hi(ncol, -std::numeric_limits<float>::infinity());
  double s_lo = std::numeric_limits<double>::infinity(), s_hi = 0;
  for (std::size_t i = 0; i != n; ++i) {
    float row[ncol] = {float(refl.hkl[i].h), float(refl.hkl[i].k), float(refl.hkl[i].l),
                       float(refl.f_obs[i]), float(refl.sigma[i]),
                       refl.free[i] ? 0.0f : 1.0f};
    for (int c = 0; c != ncol; ++c) {
      put_u32le(out, std::bit_cast<std::uint32_t>(row[c]));
      lo[c] = std::min(lo[c], row[c]);
      hi[c] = std::max(hi[c], row[c]);
    }
    double s = cell.inv_d2(refl.hkl[i]);
    s_lo = std::min(s_lo, s);
    s_hi = std::max(s_hi, s);
  }
  if (n == 0) {
    std::fill(lo.begin(), lo.end(), 0.0f);
    std::fill(hi.begin(), hi.end(), 0.0f);
    s_lo = 0;
  }

  char buf[128];
  put_record(out, "VERS MTZ:V1.1");
  put_record(out, "TITLE " + std::string(title));
  std::snprintf(buf, sizeof buf, "NCOL %8d %12zu %8d", ncol, n, 0);
  put_record(out, buf);
  std::snprintf(buf, sizeof buf, "CELL  %10.4f%10.4f%10.4f%10.4f%10.4f%10.4f", cell.a, cell.b,
                cell.c, cell.alpha, cell.beta, cell.gamma);
  put_record(out, buf);
  put_record(out, "SORT    0   0   0   0   0");
  char lattice = sg.name.empty() ? 'P' : sg.name[0];
  std::snprintf(buf, sizeof buf, "SYMINF %3zu %2zu %c %5d '%s' 'PG'", sg.size(), sg.size(),
                lattice, space_group_number(sg.name), sg.name.c_str());
  put_record(out, buf);
  for (const SymOp& op : sg.ops)
    put_record(out, "SYMM " + upper(op.triplet()));
  std::snprintf(buf, sizeof buf, "RESO %-20.12g %-20.12g", s_lo, s_hi);
  put_record(out, buf);
  put_record(out, "VALM NAN");
  const char* labels[ncol] = {"H", "K", "L", "F", "SIGF", "FreeR_flag"};
  const char types[ncol] = {'H', 'H', 'H', 'F', 'Q', 'I'};
  for (int c = 0; c != ncol; ++c) {
    std::snprintf(buf, sizeof buf, "COLUMN %-30s %c %17.9g %17.9g %4d", labels[c], types[c],
                  double(lo[c]), double(hi[c]), c < 3 ? 0 : 1);
    put_record(out, buf);
  }
  put_record(out, "NDIF        2");
  put_record(out, "PROJECT       0 HKL_base");
  put_record(out, "CRYSTAL       0 HKL_base");
  put_record(out, "DATASET       0 HKL_base");
  std::snprintf(buf, sizeof buf, "DCELL         0 %10.4f%10.4f%10.4f%10.4f%10.4f%10.4f",
                cell.a, cell.b, cell.c, cell.alpha, cell.beta, cell.gamma);
  put_record(out, buf);
  put_record(out, "DWAVEL        0    0.00000");
  put_record(out, "PROJECT       1 xtalforge");
  put_record(out, "CRYSTAL       1 xtalforge");
  put_record(out, "DATASET       1 data");
  std::snprintf(buf, sizeof buf, "DCELL         1 %10.4f%10.4f%10.4f%10.4f%10.4f%10.4f",
                cell.a, cell.b, cell.c, cell.alpha, cell.beta, cell.gamma);
  put_record(out, buf);
  put_record(out, "DWAVEL        1    1.00000");
  put_record(out, "END");
  put_record(out, "MTZENDOFHEADERS");
  return out;
}

// ---------------------------------------------------------------- text

namespace {
constexpr std::string_view text_magic = "#xtalforge-refl v1";
}

ReflectionFile read_reflection_text(std::string_view text) {
  auto lines = split_lines(text);
  if (lines.empty() || trim(lines[0]) != text_magic)
    throw ParseError("line 1: expected header '" + std::string(text_magic) + "'");
  ReflectionFile out;
  out.f_label = "F";
  out.sigma_label = "sigF";
  out.free_label = "free";
  std::size_t row = 0;
  for (std::size_t ln = 1; ln != lines.size(); ++ln) {
    std::string_view line = trim(lines[ln]);
    if (line.empty())
      continue;
    if (line.front() == '#') {
      auto tok = split_ws(line);
      if (tok[0] == "#cell") {
        if (tok.size() != 7)
          throw ParseError(where(ln + 1) + "#cell needs six values");
        double p[6];
        for (int i = 0; i != 6; ++i)
          p[i] = parse_double(tok[i + 1], where(ln + 1) + "#cell");
        out.cell = UnitCell(p[0], p[1], p[2], p[3], p[4], p[5]);
      } else if (tok[0] == "#spacegroup") {
        out.space_group = std::string(trim(line.substr(std::string_view("#spacegroup").size())));
      } else if (tok[0] == "#symop") {
        out.symops.emplace_back(trim(line.substr(std::string_view("#symop").size())));
      }
      continue;
    }
    ++row;
    auto tok = split_ws(line);
    std::string ctx = "row " + std::to_string(row) + " (line " + std::to_string(ln + 1) + ")";
    if (tok.size() != 6)
      throw ParseError(ctx + ": expected 6 columns 'h k l F sigF free', got " +
                       std::to_string(tok.size()));
    Miller m{parse_int(tok[0], ctx + " h"), parse_int(tok[1], ctx + " k"),
             parse_int(tok[2], ctx + " l")};
    double f = parse_double(tok[3], ctx + " F");
    double s = parse_double(tok[4], ctx + " sigF");
    int fr = parse_int(tok[5], ctx + " free");
    if (fr != 0 && fr != 1)
      throw ParseError(ctx + ": free flag must be 0 or 1");
    out.refl.add(m, f, s, fr == 1);
  }
  return out;
}

std::string write_reflection_text(const ReflectionSet& refl, const std::optional<UnitCell>& cell,
                                  std::string_view space_group) {
  std::string out(text_magic);
  out += '\n';
  if (cell) {
    out += "#cell";
    for (double v : {cell->a, cell->b, cell->c, cell->alpha, cell->beta, cell->gamma})
      out += " " + format_double(v);
    out += '\n';
  }
  if (!space_group.empty())
    out += "#spacegroup " + std::string(space_group) + "\n";
  for (std::size_t i = 0; i != refl.size(); ++i) {
    out += std::to_string(refl.hkl[i].h) + ' ' + std::to_string(refl.hkl[i].k) + ' ' +
           std::to_string(refl.hkl[i].l) + ' ' + format_double(refl.f_obs[i]) + ' ' +
           format_double(refl.sigma[i]) + ' ' + (refl.free[i] ? '1' : '0') + '\n';
  }
  return out;
}

ReflectionFile read_reflections(std::string_view bytes, const MtzOptions& opt) {
  if (bytes.substr(0, 4) == "MTZ ")
    return read_mtz(bytes, opt);
  if (bytes.substr(0, text_magic.size()) == text_magic)
    return read_reflection_text(bytes);
  throw ParseError("unrecognized reflection file (neither MTZ nor '" + std::string(text_magic) +
                   "')");
}

SpaceGroup resolve_space_group(const std::string& name, const std::vector<std::string>& symops) {
  try {
    return find_space_group(name);
  } catch (const std::invalid_argument&) {
    if (symops.empty())
      throw;
  }
  return space_group_from_triplets(name, symops);
}

// ---------------------------------------------------------------- metrics

std::string format_metrics_log(const std::vector<MetricRecord>& records) {
  std::string out;
  for (const MetricRecord& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<MetricRecord> parse_metrics_log(std::string_view text) {
  std::vector<MetricRecord> out;
  auto lines = split_lines(text);
  for (std::size_t ln = 0; ln != lines.size(); ++ln) {
    if (trim(lines[ln]).empty())
      continue;
    try {
      out.push_back(MetricRecord::parse(lines[ln]));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where(ln + 1) + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------- config

Config Config::parse(std::string_view text) {
  Config cfg;
  std::string section;
  auto lines = split_lines(text);
  for (std::size_t ln = 0; ln != lines.size(); ++ln) {
    std::string_view line = lines[ln];
    auto hash = line.find('#');
    if (hash != std::string_view::npos)
      line = line.substr(0, hash);
    line = trim(line);
    if (line.empty())
      continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(where(ln + 1) + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(where(ln + 1) + "expected 'key = value'");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty())
      throw ParseError(where(ln + 1) + "empty key");
    cfg.data_[section][key] = std::string(trim(line.substr(eq + 1)));
  }
  return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto s = data_.find(section);
  return s != data_.end() && s->second.count(key);
}

std::optional<std::string> Config::get(const std::string& section, const std::string& key) const {
  auto s = data_.find(section);
  if (s == data_.end())
    return std::nullopt;
  auto k = s->second.find(key);
  if (k == s->second.end())
    return std::nullopt;
  return k->second;
}

void Config::set(const std::string& section, const std::string& key, std::string value) {
  data_[section][key] = std::move(value);
}

void Config::merge(const Config& other) {
  for (const auto& [s, kv] : other.data_)
    for (const auto& [k, v] : kv)
      data_[s][k] = v;
}

std::string Config::to_string() const {
  std::string out;
  for (const auto& [s, kv] : data_) {
    if (!s.empty())
      out += (out.empty() ? "[" : "\n[") + s + "]\n";
    for (const auto& [k, v] : kv)
      out += k + " = " + v + "\n";
  }
  return out;
}

} // namespace xtalforge
