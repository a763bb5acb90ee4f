#pragma once

namespace vqa {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace vqa
