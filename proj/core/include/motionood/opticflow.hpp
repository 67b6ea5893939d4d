#pragma once

#include "motionood/grid.hpp"

namespace motionood {

struct FlowParams {
    int window_radius = 2;        // 5x5 window
    double regularization = 1e-3; // Tikhonov term added to the structure tensor diagonal
    double presmooth_sigma = 1.0; // Gaussian pre-smoothing in pixels, 0 disables

    void validate() const;
};

/// Spatial and temporal intensity derivatives of a frame pair.
struct GradientField {
    Grid ix;
    Grid iy;
    Grid it;
};

/// Separable Gaussian blur with replicate padding; sigma <= 0 returns a copy.
Grid gaussian_blur(const Grid& frame, double sigma);

/// ix, iy: central differences of the (pre-smoothed) two-frame average with
/// replicate padding; it: frame_b - frame_a.
GradientField gradients(const Grid& frame_a, const Grid& frame_b, const FlowParams& params);

/// Dense single-scale Lucas-Kanade flow. Returns a C=2 grid (u, v) in
/// pixels/frame with the frames' dimensions. Each pixel solves the
/// regularized 2x2 normal equations accumulated over a uniform window.
Grid lucas_kanade(const Grid& frame_a, const Grid& frame_b, const FlowParams& params);

}  // namespace motionood
