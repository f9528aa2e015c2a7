#pragma once

namespace copytrace {

inline constexpr const char* kVersion = "0.1.0";

} // namespace copytrace
