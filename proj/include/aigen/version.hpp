#pragma once

namespace aigen {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace aigen
