#pragma once

namespace incopt {

inline constexpr const char* kVersion = "0.1.0";

// Checkpoint container magic. The trailing digits are the format revision:
// readers refuse anything but an exact match.
inline constexpr const char* kCheckpointMagic = "INCOPT01";
inline constexpr int kCheckpointFormatVersion = 1;

}  // namespace incopt
