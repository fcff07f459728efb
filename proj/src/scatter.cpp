#include "xtalforge/scatter.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "xtalforge/model.hpp"

namespace xtalforge {

extern const char* const bundled_scattering_text;

std::string normalize_element(std::string_view symbol) {
  std::string out;
  for (char c : symbol)
    if (std::isalpha(static_cast<unsigned char>(c)))
      out += static_cast<char>(out.empty() ? std::toupper(static_cast<unsigned char>(c))
                                           : std::tolower(static_cast<unsigned char>(c)));
  return out;
}

const ScatteringTable& ScatteringTable::bundled() {
  static const ScatteringTable table = parse(bundled_scattering_text, true);
  return table;
}

ScatteringTable ScatteringTable::parse(std::string_view text, bool verify) {
  if (verify) {
    std::uint64_t sum = fnv1a(text.data(), text.size());
    if (sum != pinned_checksum) {
      std::ostringstream os;
      os << "scattering table checksum mismatch: got 0x" << std::hex << sum
         << ", expected 0x" << pinned_checksum;
      throw std::runtime_error(os.str());
    }
  }
  ScatteringTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#')
      continue;
    std::istringstream ls(line);
    std::string sym;
    GaussianCoefs g;
    ls >> sym;
    for (int i = 0; i != 4; ++i)
      ls >> g.a[i] >> g.b[i];
    ls >> g.c;
    if (!ls)
      throw std::runtime_error("scattering table line " + std::to_string(lineno) +
                               ": expected symbol and 9 numbers");
    t.coefs_[normalize_element(sym)] = g;
  }
  return t;
}

ScatteringTable ScatteringTable::load(const std::string& path, bool verify) {
  std::ifstream f(path, std::ios::binary);
  if (!f)
    throw std::runtime_error("cannot open scattering table " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), verify);
}

bool ScatteringTable::has(std::string_view element) const {
  return coefs_.find(element) != coefs_.end();
}

const GaussianCoefs& ScatteringTable::get(std::string_view element) const {
  auto it = coefs_.find(element);
  if (it == coefs_.end()) {
    std::string known;
    for (const auto& kv : coefs_)
      known += (known.empty() ? "" : " ") + kv.first;
    throw std::out_of_range("no scattering factor for element '" + std::string(element) +
                            "' (supported: " + known + ")");
  }
  return it->second;
}

std::vector<std::string> ScatteringTable::elements() const {
  std::vector<std::string> out;
  for (const auto& kv : coefs_)
    out.push_back(kv.first);
  return out;
}

double form_factor(const ScatteringTable& table, std::string_view element, double s) {
  return table.get(element).at_s(s);
}

double vdw_radius(std::string_view element) {
  static const std::map<std::string, double, std::less<>> radii = {
    {"H", 1.20}, {"C", 1.77}, {"N", 1.50}, {"O", 1.45}, {"S", 1.80},
    {"P", 1.80}, {"Na", 1.50}, {"Mg", 1.50}, {"Cl", 1.75}, {"Ca", 1.50},
    {"Fe", 1.30}, {"Zn", 1.40},
  };
  auto it = radii.find(element);
  return it == radii.end() ? 1.8 : it->second;
}

} // namespace xtalforge
