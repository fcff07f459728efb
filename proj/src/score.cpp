#include "xtalforge/score.hpp"

#include <limits>

#include "xtalforge/likelihood.hpp"

namespace xtalforge {

Agreement agreement(const ForwardModel& fm, const StructureFactorState& state) {
  const ReflectionSet& refl = fm.reflections();
  auto work = refl.working_mask();
  auto free = refl.free_mask();
  Agreement a;
  a.r_work = r_factor(refl.f_obs, state.f_calc_amp, work);
  a.r_free = refl.free_count() ? r_factor(refl.f_obs, state.f_calc_amp, free)
                               : std::numeric_limits<double>::quiet_NaN();
  try {
    a.cc_work = pearson_cc(refl.f_obs, state.f_calc_amp, work);
  } catch (const std::invalid_argument&) {
    a.cc_work = std::numeric_limits<double>::quiet_NaN();
  }
  a.state = state;
  return a;
}

Agreement score_model(const ForwardModel& fm, const AtomicModel& model) {
  StructureFactorState st = fm.initial_state(model);
  fm.solve_scales(st);
  return agreement(fm, st);
}

} // namespace xtalforge
