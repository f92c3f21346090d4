#pragma once

namespace dyadit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dyadit
