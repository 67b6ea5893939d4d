#include "motionood/opticflow.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "motionood/errors.hpp"

namespace motionood {

void FlowParams::validate() const {
    if (window_radius < 1) throw ValidationError("flow: window_radius must be >= 1");
    if (!(regularization >= 0.0)) throw ValidationError("flow: regularization must be >= 0");
    if (!(presmooth_sigma >= 0.0)) throw ValidationError("flow: presmooth_sigma must be >= 0");
}

namespace {

void check_pair(const Grid& a, const Grid& b) {
    if (a.channels() != 1 || b.channels() != 1) {
        throw ShapeError("optic flow expects single-channel frames");
    }
    if (!a.same_shape(b)) {
        throw ShapeError("optic flow frame dimensions differ: " + a.shape_string() + " vs " + b.shape_string());
    }
    if (a.empty()) {
        throw ShapeError("optic flow: empty frame");
    }
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(n) - 1));
}

// Replicate-padded separable box sum of radius r over an H x W plane.
std::vector<double> box_sum(const std::vector<double>& src, std::size_t h, std::size_t w, int r) {
    std::vector<double> tmp(src.size());
    std::vector<double> out(src.size());
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) s += src[y * w + clamp_index(static_cast<std::ptrdiff_t>(x) + k, w)];
            tmp[y * w + x] = s;
        }
    }
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (int k = -r; k <= r; ++k) s += tmp[clamp_index(static_cast<std::ptrdiff_t>(y) + k, h) * w + x];
            out[y * w + x] = s;
        }
    }
    return out;
}

}  // namespace

Grid gaussian_blur(const Grid& frame, double sigma) {
    if (sigma <= 0.0) return frame;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        norm += kernel[k + radius];
    }
    for (double& v : kernel) v /= norm;

    const std::size_t h = frame.height();
    const std::size_t w = frame.width();
    Grid out(frame.channels(), h, w);
    std::vector<double> tmp(h * w);
    for (std::size_t c = 0; c < frame.channels(); ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    s += kernel[k + radius] * frame.at(c, y, clamp_index(static_cast<std::ptrdiff_t>(x) + k, w));
                }
                tmp[y * w + x] = s;
            }
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    s += kernel[k + radius] * tmp[clamp_index(static_cast<std::ptrdiff_t>(y) + k, h) * w + x];
                }
                out.at(c, y, x) = static_cast<float>(s);
            }
        }
    }
    return out;
}

GradientField gradients(const Grid& frame_a, const Grid& frame_b, const FlowParams& params) {
    check_pair(frame_a, frame_b);
    params.validate();
    const Grid a = gaussian_blur(frame_a, params.presmooth_sigma);
    const Grid b = gaussian_blur(frame_b, params.presmooth_sigma);
    const std::size_t h = a.height();
    const std::size_t w = a.width();

    auto avg = [&](std::size_t y, std::size_t x) { return 0.5f * (a.at(0, y, x) + b.at(0, y, x)); };

    GradientField g{Grid(1, h, w), Grid(1, h, w), Grid(1, h, w)};
    for (std::size_t y = 0; y < h; ++y) {
        const std::size_t yu = clamp_index(static_cast<std::ptrdiff_t>(y) - 1, h);
        const std::size_t yd = clamp_index(static_cast<std::ptrdiff_t>(y) + 1, h);
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t xl = clamp_index(static_cast<std::ptrdiff_t>(x) - 1, w);
            const std::size_t xr = clamp_index(static_cast<std::ptrdiff_t>(x) + 1, w);
            g.ix.at(0, y, x) = 0.5f * (avg(y, xr) - avg(y, xl));
            g.iy.at(0, y, x) = 0.5f * (avg(yd, x) - avg(yu, x));
            g.it.at(0, y, x) = b.at(0, y, x) - a.at(0, y, x);
        }
    }
    return g;
}

Grid lucas_kanade(const Grid& frame_a, const Grid& frame_b, const FlowParams& params) {
    check_pair(frame_a, frame_b);
    if (!frame_a.all_finite() || !frame_b.all_finite()) {
        throw NumericError("optic flow: non-finite input frame");
    }
    const GradientField g = gradients(frame_a, frame_b, params);
    const std::size_t h = frame_a.height();
    const std::size_t w = frame_a.width();
    const std::size_t n = h * w;

    std::vector<double> xx(n), xy(n), yy(n), xt(n), yt(n);
    const auto ix = g.ix.data();
    const auto iy = g.iy.data();
    const auto it = g.it.data();
    for (std::size_t i = 0; i < n; ++i) {
        xx[i] = double(ix[i]) * ix[i];
        xy[i] = double(ix[i]) * iy[i];
        yy[i] = double(iy[i]) * iy[i];
        xt[i] = double(ix[i]) * it[i];
        yt[i] = double(iy[i]) * it[i];
    }
    const int r = params.window_radius;
    const auto sxx = box_sum(xx, h, w, r);
    const auto sxy = box_sum(xy, h, w, r);
    const auto syy = box_sum(yy, h, w, r);
    const auto sxt = box_sum(xt, h, w, r);
    const auto syt = box_sum(yt, h, w, r);

    const double lambda = params.regularization;
    Grid flow(2, h, w);
    auto u = flow.plane(0);
    auto v = flow.plane(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double a11 = sxx[i] + lambda;
        const double a12 = sxy[i];
        const double a22 = syy[i] + lambda;
        const double det = a11 * a22 - a12 * a12;
        if (det <= 0.0 || !std::isfinite(det)) {
            u[i] = 0.0f;
            v[i] = 0.0f;
            continue;
        }
        // (u, v) = -A^{-1} (sxt, syt)
        u[i] = static_cast<float>((a12 * syt[i] - a22 * sxt[i]) / det);
        v[i] = static_cast<float>((a12 * sxt[i] - a11 * syt[i]) / det);
    }
    return flow;
}

}  // namespace motionood
