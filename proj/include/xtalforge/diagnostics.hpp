// Warning sink shared by the numerical modules.

#ifndef XTALFORGE_DIAGNOSTICS_HPP_
#define XTALFORGE_DIAGNOSTICS_HPP_

#include <functional>
#include <string>

namespace xtalforge {

using WarningSink = std::function<void(const std::string&)>;

// Default sink prints "warning: ..." to stderr. Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);
void warn(const std::string& msg);

} // namespace xtalforge

#endif
