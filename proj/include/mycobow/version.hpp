#pragma once

namespace mycobow {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mycobow
