#pragma once

#include <cstddef>
#include <string_view>

namespace ckit {

void warn(std::string_view message);
void set_warnings_enabled(bool enabled);
std::size_t warning_count();

}  // namespace ckit
