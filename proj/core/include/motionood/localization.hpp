#pragma once

#include <cstddef>
#include <span>

#include "motionood/grid.hpp"
#include "motionood/vae.hpp"

namespace motionood {

/// Per-channel, per-location statistics of last-conv-layer activations over
/// the calibration samples.
struct ActivationStats {
    Grid mean;
    Grid stddev;  // population standard deviation
    std::size_t count = 0;

    void validate() const;
};

ActivationStats activation_stats(const VaeWeights& weights, std::span<const Grid> cal_flows);

/// Same statistics from already-computed activation volumes.
ActivationStats activation_stats_from(std::span<const Grid> activations);

inline constexpr float kOverlayStdFloor = 1e-6f;

/// raw(y, x) = sum_c ((a_c - mean_c) / (std_c + 1e-6))^2, bilinearly upsampled
/// to out_size x out_size and divided by its maximum. An all-zero raw map
/// stays zero. Result is C=1 with values in [0, 1].
Grid overlay(const Grid& activations, const ActivationStats& stats, std::size_t out_size);

/// RGB composite of a gray frame and an overlay: pixels where map >= threshold
/// are blended towards red with weight 0.6 * map.
Grid render(const Grid& frame, const Grid& map, float threshold = 0.5f);

}  // namespace motionood
