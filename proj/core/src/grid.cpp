#include "motionood/grid.hpp"

#include <algorithm>
#include <cmath>

#include "motionood/errors.hpp"

namespace motionood {

Grid::Grid(std::size_t channels, std::size_t height, std::size_t width, float fill)
    : channels_(channels), height_(height), width_(width), data_(channels * height * width, fill) {}

Grid::Grid(std::size_t channels, std::size_t height, std::size_t width, std::vector<float> data)
    : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != channels * height * width) {
        throw ShapeError("grid payload has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(channels * height * width));
    }
}

bool Grid::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string Grid::shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" + std::to_string(width_);
}

namespace {

struct Tap {
    std::size_t lo;
    std::size_t hi;
    float frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double max_coord = static_cast<double>(in - 1);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, max_coord);
        const auto lo = static_cast<std::size_t>(std::floor(src));
        const std::size_t hi = std::min(lo + 1, in - 1);
        taps[i] = {lo, hi, static_cast<float>(src - static_cast<double>(lo))};
    }
    return taps;
}

}  // namespace

Grid resize_bilinear(const Grid& src, std::size_t out_height, std::size_t out_width) {
    if (src.empty() || out_height == 0 || out_width == 0) {
        throw ShapeError("resize_bilinear: empty source or target");
    }
    if (src.height() == out_height && src.width() == out_width) {
        return src;
    }
    const auto ty = bilinear_taps(src.height(), out_height);
    const auto tx = bilinear_taps(src.width(), out_width);
    Grid out(src.channels(), out_height, out_width);
    for (std::size_t c = 0; c < src.channels(); ++c) {
        for (std::size_t y = 0; y < out_height; ++y) {
            const Tap& a = ty[y];
            for (std::size_t x = 0; x < out_width; ++x) {
                const Tap& b = tx[x];
                const float top = src.at(c, a.lo, b.lo) * (1.0f - b.frac) + src.at(c, a.lo, b.hi) * b.frac;
                const float bot = src.at(c, a.hi, b.lo) * (1.0f - b.frac) + src.at(c, a.hi, b.hi) * b.frac;
                out.at(c, y, x) = top * (1.0f - a.frac) + bot * a.frac;
            }
        }
    }
    return out;
}

Grid extract_channel(const Grid& src, std::size_t channel) {
    if (channel >= src.channels()) {
        throw ShapeError("extract_channel: channel out of range");
    }
    auto p = src.plane(channel);
    return Grid(1, src.height(), src.width(), std::vector<float>(p.begin(), p.end()));
}

}  // namespace motionood
