#pragma once

namespace erode {

inline constexpr const char* kToolName = "erode";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace erode
