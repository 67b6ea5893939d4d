#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace motionood {

/// Dense C x H x W array of 32-bit reals, channel-major, row-major within a
/// channel. Used for frames (C=1), flow fields (C=2, u then v) and activation
/// volumes.
class Grid {
public:
    Grid() = default;
    Grid(std::size_t channels, std::size_t height, std::size_t width, float fill = 0.0f);
    /// Throws ShapeError if data.size() != channels * height * width.
    Grid(std::size_t channels, std::size_t height, std::size_t width, std::vector<float> data);

    std::size_t channels() const { return channels_; }
    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t plane_size() const { return height_ * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * height_ + y) * width_ + x];
    }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * height_ + y) * width_ + x];
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    std::span<float> plane(std::size_t c) { return {data_.data() + c * plane_size(), plane_size()}; }
    std::span<const float> plane(std::size_t c) const {
        return {data_.data() + c * plane_size(), plane_size()};
    }

    bool same_shape(const Grid& other) const {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }
    bool all_finite() const;
    std::string shape_string() const;

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t channels_ = 0;
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<float> data_;
};

/// Bilinear resampling of every channel to out_height x out_width using
/// pixel-centre alignment (output pixel i samples input coordinate
/// (i + 0.5) * in / out - 0.5) with edge clamping. Downsampling by exactly 2
/// therefore reproduces the 2x2 block mean of any locally linear field.
Grid resize_bilinear(const Grid& src, std::size_t out_height, std::size_t out_width);

/// Extracts a single channel as a C=1 grid.
Grid extract_channel(const Grid& src, std::size_t channel);

}  // namespace motionood
