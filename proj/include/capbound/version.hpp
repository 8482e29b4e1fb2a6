#pragma once

namespace capbound {

inline constexpr const char* kToolVersion = "0.1.0";

}
