// Joint Adam refinement of coordinates and isotropic B-factors against a
// crystallographic objective on the working reflections.

#ifndef XTALFORGE_REFINE_HPP_
#define XTALFORGE_REFINE_HPP_

#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xtalforge/forward.hpp"
#include "xtalforge/io.hpp"
#include "xtalforge/likelihood.hpp"
#include "xtalforge/score.hpp"

namespace xtalforge {

enum class Objective { r_factor, neg_cc, gauss, rice };
std::string objective_name(Objective o);
// Accepts r_factor|r, neg_cc|cc, gauss, rice.
Objective parse_objective(std::string_view name);

enum class BInit { uniform, from_file, from_plddt };
std::string b_init_name(BInit b);
BInit parse_b_init(std::string_view name);

struct RefinementConfig {
  int n_steps = 50;
  Objective objective = Objective::r_factor;
  double lr_xyz = 0.02;
  double lr_b = 0.5;
  double lr_u = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double b_min = 1.0;
  double b_max = 80.0;
  int scale_solve_interval = 10;
  bool refine_xyz = true;
  bool refine_b = true;
  bool refine_u_aniso = false;
  BInit b_init = BInit::uniform;
  double b_uniform = 20.0;
  double increase_guard = 0.1;  // fraction of |initial objective|
  LikelihoodConfig likelihood;  // for the gauss / rice objectives

  void validate() const;
};

struct AdamState {
  std::vector<double> m, v;
  int t = 0;
};

// Standard bias-corrected Adam update, in place.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Default policy: linear, B = b_max - (b_max - b_min) * plddt / 100.
// Throws std::invalid_argument outside [0, 100].
double plddt_to_b(double plddt, double b_min = 1.0, double b_max = 80.0);
std::vector<double> plddt_to_b(std::span<const double> plddt, double b_min = 1.0,
                               double b_max = 80.0);

// Applies cfg.b_init: uniform sets every B to b_uniform, from_plddt reads
// per-residue pLDDT from the B column (AlphaFold-style files), from_file
// keeps the values.
void initialize_b(AtomicModel& model, const RefinementConfig& cfg);

struct RefinementRecord {
  int step = 0;
  double objective = 0;
  double r_work = 0, r_free = 0, cc = 0;
  bool scales_solved = false;
  double rmsd = std::numeric_limits<double>::quiet_NaN();  // to the reference, if given
};

struct RefinementResult {
  AtomicModel model;  // best iterate by working objective
  StructureFactorState state;
  std::vector<RefinementRecord> records;
  Agreement initial, final;
  int best_step = 0;
  bool lr_halved = false;
  bool aborted = false;
  double wall_seconds = 0;
};

// Working objective and its gradient with respect to |F_c|.
LossValue refinement_objective(const ForwardModel& fm, const StructureFactorState& state,
                               const RefinementConfig& cfg);

// With a reference (same atom order) each record also carries the
// superposed all-atom RMSD.
RefinementResult refine(const ForwardModel& fm, AtomicModel model, const RefinementConfig& cfg,
                        std::span<const Vec3> reference = {});

// One self-describing record per step for the metrics log.
std::vector<MetricRecord> metric_records(const RefinementResult& r, Objective o,
                                         std::string_view phase = "refine");

} // namespace xtalforge

#endif
