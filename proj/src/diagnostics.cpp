#include "xtalforge/diagnostics.hpp"

#include <cstdio>
#include <mutex>

namespace xtalforge {

namespace {
std::mutex sink_mutex;
WarningSink& sink() {
  static WarningSink s = [](const std::string& msg) {
    std::fprintf(stderr, "warning: %s\n", msg.c_str());
  };
  return s;
}
} // namespace

WarningSink set_warning_sink(WarningSink s) {
  std::lock_guard<std::mutex> lock(sink_mutex);
  WarningSink old = std::move(sink());
  sink() = std::move(s);
  return old;
}

void warn(const std::string& msg) {
  std::lock_guard<std::mutex> lock(sink_mutex);
  if (sink())
    sink()(msg);
}

} // namespace xtalforge
