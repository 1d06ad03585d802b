#pragma once

namespace ovsal {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ovsal
