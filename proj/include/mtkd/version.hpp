#pragma once

namespace mtkd {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace mtkd
