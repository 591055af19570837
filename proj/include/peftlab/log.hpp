#pragma once

#include <string_view>

namespace peftlab {

// Warnings go to stderr unless silenced (tests and benchmarks silence them).
void warn(std::string_view message);
void set_warnings_enabled(bool on);
bool warnings_enabled();

}  // namespace peftlab
