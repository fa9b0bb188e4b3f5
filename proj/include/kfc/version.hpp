#pragma once

namespace kfc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace kfc
