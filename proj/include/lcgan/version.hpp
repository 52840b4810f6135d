#pragma once

namespace lcgan {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace lcgan
