#include "peftlab/log.hpp"

#include <atomic>
#include <iostream>

namespace peftlab {

namespace {
std::atomic<bool> g_warnings{true};
}

void warn(std::string_view message) {
  if (g_warnings.load()) std::cerr << "warning: " << message << '\n';
}

void set_warnings_enabled(bool on) { g_warnings.store(on); }
bool warnings_enabled() { return g_warnings.load(); }

}  // namespace peftlab
