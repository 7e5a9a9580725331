#pragma once

namespace cdul {

inline constexpr const char* kVersionString = "0.1.0";

} // namespace cdul
