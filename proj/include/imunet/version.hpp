#pragma once

namespace imunet {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace imunet
