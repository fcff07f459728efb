// File formats: PDB coordinates, MTZ and text reflection files, flat
// key = value configuration, JSON-lines metric logs.
//
// Parsers take the whole file content; every malformed input raises
// ParseError with a line, row or byte position.

#ifndef XTALFORGE_IO_HPP_
#define XTALFORGE_IO_HPP_

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xtalforge/model.hpp"

namespace xtalforge {

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

// ---- PDB ----

struct PdbStructure {
  AtomicModel model;
  UnitCell cell;
  std::string space_group;       // CRYST1 columns 56-66, trimmed
  std::size_t altlocs_dropped = 0;
  std::size_t hydrogens = 0;
};

// Only the first MODEL is read. For atoms with alternate locations the
// highest-occupancy conformer is kept (ties go to the earliest letter).
PdbStructure read_pdb(std::string_view text);
// Throws std::range_error when a value does not fit its fixed-width column.
std::string write_pdb(const AtomicModel& model, const UnitCell& cell,
                      std::string_view space_group);

// ---- reflections ----

struct ReflectionFile {
  ReflectionSet refl;
  std::optional<UnitCell> cell;
  std::string space_group;  // empty if the file does not name one
  std::vector<std::string> symops;  // operator triplets, if listed
  std::size_t dropped = 0;  // rows with missing values
  std::string f_label, sigma_label, free_label;
};

struct MtzOptions {
  // MTZ value that marks the free set; 0 by convention.
  int free_value = 0;
};

ReflectionFile read_mtz(std::string_view bytes, const MtzOptions& opt = {});
// Columns H K L F SIGF FreeR_flag (free set written as 0, working as 1).
std::string write_mtz(const ReflectionSet& refl, const UnitCell& cell,
                      const SpaceGroup& sg, std::string_view title = "xtalforge");

// "#xtalforge-refl v1" header, optional "#cell a b c al be ga" and
// "#spacegroup NAME" comment lines, then rows "h k l F sigF free" with
// free = 1 for held-out reflections.
ReflectionFile read_reflection_text(std::string_view text);
std::string write_reflection_text(const ReflectionSet& refl,
                                  const std::optional<UnitCell>& cell = std::nullopt,
                                  std::string_view space_group = {});

// Dispatches on content: MTZ magic or the text header.
ReflectionFile read_reflections(std::string_view bytes, const MtzOptions& opt = {});

// Bundled group by name when available, otherwise built from the listed
// operator triplets. Throws std::invalid_argument if neither works.
SpaceGroup resolve_space_group(const std::string& name,
                               const std::vector<std::string>& symops = {});

// ---- metrics log ----

using MetricRecord = nlohmann::ordered_json;
// One compact JSON object per line.
std::string format_metrics_log(const std::vector<MetricRecord>& records);
std::vector<MetricRecord> parse_metrics_log(std::string_view text);

// ---- configuration ----

// Sectioned "key = value" text. Keys before any [section] live in "".
// '#' starts a comment.
class Config {
public:
  static Config parse(std::string_view text);

  bool has(const std::string& section, const std::string& key) const;
  std::optional<std::string> get(const std::string& section, const std::string& key) const;
  void set(const std::string& section, const std::string& key, std::string value);
  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return data_;
  }
  // Later values win.
  void merge(const Config& other);
  std::string to_string() const;

private:
  std::map<std::string, std::map<std::string, std::string>> data_;
};

// Typed readers; throw ParseError naming section.key on bad values.
double parse_double(std::string_view text, std::string_view what);
int parse_int(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

// Shortest text that parses back to the same double.
std::string format_double(double v);

} // namespace xtalforge

#endif
