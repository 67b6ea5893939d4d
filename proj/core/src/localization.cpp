#include "motionood/localization.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "motionood/errors.hpp"

namespace motionood {

void ActivationStats::validate() const {
    if (count < 2) throw ValidationError("activation stats need at least 2 samples");
    if (!mean.same_shape(stddev)) throw ShapeError("activation stats: mean/std shape mismatch");
    if (std::any_of(stddev.data().begin(), stddev.data().end(), [](float s) { return !(s >= 0.0f); })) {
        throw ValidationError("activation stats: negative or NaN standard deviation");
    }
}

ActivationStats activation_stats_from(std::span<const Grid> activations) {
    if (activations.size() < 2) throw ValidationError("activation_stats: at least 2 calibration samples required");
    const Grid& first = activations.front();
    const std::size_t n = first.size();
    std::vector<double> sum(n, 0.0);
    for (const Grid& a : activations) {
        if (!a.same_shape(first)) throw ShapeError("activation_stats: inconsistent activation shapes");
        for (std::size_t i = 0; i < n; ++i) sum[i] += a.data()[i];
    }
    const auto count = static_cast<double>(activations.size());
    std::vector<double> mean(n);
    for (std::size_t i = 0; i < n; ++i) mean[i] = sum[i] / count;
    std::vector<double> sq(n, 0.0);
    for (const Grid& a : activations) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d = a.data()[i] - mean[i];
            sq[i] += d * d;
        }
    }
    ActivationStats s;
    s.mean = Grid(first.channels(), first.height(), first.width());
    s.stddev = Grid(first.channels(), first.height(), first.width());
    for (std::size_t i = 0; i < n; ++i) {
        s.mean.data()[i] = static_cast<float>(mean[i]);
        s.stddev.data()[i] = static_cast<float>(std::sqrt(sq[i] / count));
    }
    s.count = activations.size();
    return s;
}

ActivationStats activation_stats(const VaeWeights& weights, std::span<const Grid> cal_flows) {
    if (cal_flows.size() < 2) throw ValidationError("activation_stats: at least 2 calibration samples required");
    std::vector<Grid> acts;
    acts.reserve(cal_flows.size());
    for (const Grid& f : cal_flows) acts.push_back(encode(weights, f).last_conv_activations);
    return activation_stats_from(acts);
}

Grid overlay(const Grid& activations, const ActivationStats& stats, std::size_t out_size) {
    if (!activations.same_shape(stats.mean)) {
        throw ShapeError("overlay: activations " + activations.shape_string() + " vs statistics " +
                         stats.mean.shape_string());
    }
    if (out_size == 0) throw ValidationError("overlay: out_size must be positive");
    const std::size_t h = activations.height();
    const std::size_t w = activations.width();
    Grid raw(1, h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double e = 0.0;
            for (std::size_t c = 0; c < activations.channels(); ++c) {
                const double z = (double(activations.at(c, y, x)) - stats.mean.at(c, y, x)) /
                                 (double(stats.stddev.at(c, y, x)) + kOverlayStdFloor);
                e += z * z;
            }
            raw.at(0, y, x) = static_cast<float>(e);
        }
    }
    Grid map = resize_bilinear(raw, out_size, out_size);
    const float peak = *std::max_element(map.data().begin(), map.data().end());
    if (peak > 0.0f && std::isfinite(peak)) {
        for (float& v : map.data()) v = std::clamp(v / peak, 0.0f, 1.0f);
        // division can land a hair below 1 at the argmax
        *std::max_element(map.data().begin(), map.data().end()) = 1.0f;
    } else {
        std::fill(map.data().begin(), map.data().end(), 0.0f);
    }
    return map;
}

Grid render(const Grid& frame, const Grid& map, float threshold) {
    if (frame.channels() != 1 || map.channels() != 1) {
        throw ShapeError("render: frame and map must be single-channel");
    }
    if (frame.height() != map.height() || frame.width() != map.width()) {
        throw ShapeError("render: frame " + frame.shape_string() + " and map " + map.shape_string() +
                         " differ in resolution");
    }
    if (!(threshold >= 0.0f && threshold <= 1.0f)) throw ValidationError("render: threshold must lie in [0, 1]");
    Grid rgb(3, frame.height(), frame.width());
    for (std::size_t y = 0; y < frame.height(); ++y) {
        for (std::size_t x = 0; x < frame.width(); ++x) {
            const float g = frame.at(0, y, x);
            const float m = map.at(0, y, x);
            const float wgt = m >= threshold ? 0.6f * m : 0.0f;
            rgb.at(0, y, x) = (1.0f - wgt) * g + wgt;
            rgb.at(1, y, x) = (1.0f - wgt) * g;
            rgb.at(2, y, x) = (1.0f - wgt) * g;
        }
    }
    return rgb;
}

}  // namespace motionood
