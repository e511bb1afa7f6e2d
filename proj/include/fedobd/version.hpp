#pragma once

namespace fedobd {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace fedobd
