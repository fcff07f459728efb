// Batch command surface: stats, score, refine, guide, synth, symexpand.
//
// Every command writes a manifest (resolved configuration, input digests,
// timings, status) under --out, also when it fails. The manifest uses the
// config file format, so `--config <manifest>` replays a run.

#ifndef XTALFORGE_APP_HPP_
#define XTALFORGE_APP_HPP_

#include <iosfwd>
#include <string>
#include <vector>

#include "xtalforge/forward.hpp"
#include "xtalforge/io.hpp"
#include "xtalforge/refine.hpp"
#include "xtalforge/sampler.hpp"
#include "xtalforge/synth.hpp"

namespace xtalforge {

inline constexpr const char* tool_version = "0.1.0";

// Config sections [guidance], [refine], [forward], [synth]; keys are the
// field names of the corresponding structs. Unknown keys are errors.
void apply_config(const Config& c, GuidanceConfig& g);
void apply_config(const Config& c, RefinementConfig& r);
void apply_config(const Config& c, ForwardConfig& f);
void apply_config(const Config& c, SynthSpec& s);
// All fields written out, defaults included.
void store_config(Config& c, const GuidanceConfig& g);
void store_config(Config& c, const RefinementConfig& r);
void store_config(Config& c, const ForwardConfig& f);
void store_config(Config& c, const SynthSpec& s);

// Toy prior description:
//   [prior]
//   type = gaussian | collapsing
//   center = center.pdb        (relative to the prior file)
//   sigma0 = 0.5
//   fold_step = 50             (collapsing only)
//   collapse = 0.3             (collapsing only)
struct PriorSpec {
  std::string type = "gaussian";
  std::string center;
  double sigma0 = 0.5;
  int fold_step = 50;
  double collapse = 0.3;
};
PriorSpec parse_prior_spec(std::string_view text);
std::string format_prior_spec(const PriorSpec& p);

// argv without the program name. Returns the process exit code: 0 on
// success, 1 on a failed run, 2 on a usage error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace xtalforge

#endif
