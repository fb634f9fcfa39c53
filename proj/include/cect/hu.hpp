#pragma once

namespace cect {

// Working Hounsfield window [-1024, 3071], width 4095. Images are mapped to
// [0, 1] before entering the network and mapped back for metric evaluation.
inline constexpr double kHuWindowMin = -1024.0;
inline constexpr double kHuWindowWidth = 4095.0;

inline double hu_normalize(double hu) { return (hu - kHuWindowMin) / kHuWindowWidth; }
inline double hu_denormalize(double v) { return v * kHuWindowWidth + kHuWindowMin; }

} // namespace cect
