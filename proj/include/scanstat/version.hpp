#pragma once

namespace scanstat {

inline constexpr const char* kVersion = "1.0.0";

}
