#pragma once

namespace sincere {

inline constexpr const char* kArtifactVersion = "1.0.0";
inline constexpr int kConfigSchemaVersion = 1;

} // namespace sincere
