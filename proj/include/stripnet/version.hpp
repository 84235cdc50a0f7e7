#pragma once

namespace stripnet {

inline constexpr const char* kVersion = "0.1.0";

}
