#pragma once

namespace facedyn {

inline constexpr const char* kVersion = "0.3.0";

}  // namespace facedyn
