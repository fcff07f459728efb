// Agreement metrics of a model against a data set, with freshly solved
// per-bin scales.

#ifndef XTALFORGE_SCORE_HPP_
#define XTALFORGE_SCORE_HPP_

#include "xtalforge/forward.hpp"

namespace xtalforge {

struct Agreement {
  double r_work = 0;
  double r_free = 0;  // NaN without free reflections
  double cc_work = 0;
  StructureFactorState state;
};

Agreement score_model(const ForwardModel& fm, const AtomicModel& model);
// Metrics for an already computed state (amplitudes up to date).
Agreement agreement(const ForwardModel& fm, const StructureFactorState& state);

} // namespace xtalforge

#endif
