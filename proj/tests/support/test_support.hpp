#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "motionood/grid.hpp"
#include "motionood/vae.hpp"

namespace motionood::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("motionood_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Grid random_grid(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed, float lo = -1.0f,
                        float hi = 1.0f) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> dist(lo, hi);
    Grid g(c, h, w);
    for (float& v : g.data()) v = dist(rng);
    return g;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

/// Straightforward 64-bit VAE forward pass with explicit loops. Shares no code
/// with the library's im2col/GEMM path.
struct Reference {
    using Vec = std::vector<double>;

    static Vec to_double(std::span<const float> v) { return Vec(v.begin(), v.end()); }

    // in [c][s][s], kernel [o][c][4][4], stride 2, zero padding 1
    static Vec conv(const Vec& in, std::size_t c, std::size_t s, const Vec& w, const Vec& b, std::size_t o) {
        const std::size_t os = s / 2;
        Vec out(o * os * os);
        for (std::size_t oc = 0; oc < o; ++oc) {
            for (std::size_t oy = 0; oy < os; ++oy) {
                for (std::size_t ox = 0; ox < os; ++ox) {
                    double acc = b[oc];
                    for (std::size_t ic = 0; ic < c; ++ic) {
                        for (std::size_t ky = 0; ky < 4; ++ky) {
                            for (std::size_t kx = 0; kx < 4; ++kx) {
                                const long iy = long(oy * 2 + ky) - 1;
                                const long ix = long(ox * 2 + kx) - 1;
                                if (iy < 0 || ix < 0 || iy >= long(s) || ix >= long(s)) continue;
                                acc += w[((oc * c + ic) * 4 + ky) * 4 + kx] * in[(ic * s + iy) * s + ix];
                            }
                        }
                    }
                    out[(oc * os + oy) * os + ox] = acc;
                }
            }
        }
        return out;
    }

    // in [c][s][s], kernel [c][o][4][4]; scatter form of the transposed conv
    static Vec deconv(const Vec& in, std::size_t c, std::size_t s, const Vec& w, const Vec& b, std::size_t o) {
        const std::size_t os = s * 2;
        Vec out(o * os * os);
        for (std::size_t oc = 0; oc < o; ++oc) {
            for (std::size_t i = 0; i < os * os; ++i) out[oc * os * os + i] = b[oc];
        }
        for (std::size_t ic = 0; ic < c; ++ic) {
            for (std::size_t iy = 0; iy < s; ++iy) {
                for (std::size_t ix = 0; ix < s; ++ix) {
                    const double v = in[(ic * s + iy) * s + ix];
                    for (std::size_t oc = 0; oc < o; ++oc) {
                        for (std::size_t ky = 0; ky < 4; ++ky) {
                            for (std::size_t kx = 0; kx < 4; ++kx) {
                                const long y = long(iy * 2 + ky) - 1;
                                const long x = long(ix * 2 + kx) - 1;
                                if (y < 0 || x < 0 || y >= long(os) || x >= long(os)) continue;
                                out[(oc * os + y) * os + x] += w[((ic * o + oc) * 4 + ky) * 4 + kx] * v;
                            }
                        }
                    }
                }
            }
        }
        return out;
    }

    static Vec dense(const Vec& x, const Vec& w, const Vec& b) {
        Vec y(b.size());
        for (std::size_t o = 0; o < b.size(); ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < x.size(); ++i) acc += w[o * x.size() + i] * x[i];
            y[o] = acc;
        }
        return y;
    }

    static void relu(Vec& v) {
        for (double& x : v) x = std::max(x, 0.0);
    }

    struct Encoded {
        Vec mu, logvar, last;
    };

    static Encoded encode(const VaeWeights& w, const Grid& input) {
        const auto& a = w.arch;
        Vec x = to_double(input.data());
        std::size_t c = a.input_channels, s = a.input_size;
        for (std::size_t l = 0; l < 4; ++l) {
            x = conv(x, c, s, to_double(w.encoder[l].weight), to_double(w.encoder[l].bias), a.conv_channels[l]);
            relu(x);
            c = a.conv_channels[l];
            s /= 2;
        }
        Encoded e;
        e.last = x;
        e.mu = dense(x, to_double(w.mu_head.weight), to_double(w.mu_head.bias));
        e.logvar = dense(x, to_double(w.logvar_head.weight), to_double(w.logvar_head.bias));
        for (double& v : e.logvar) v = std::clamp(v, -10.0, 10.0);
        return e;
    }

    static Vec decode(const VaeWeights& w, std::span<const float> z) {
        const auto& a = w.arch;
        Vec x = dense(to_double(z), to_double(w.latent_to_volume.weight), to_double(w.latent_to_volume.bias));
        relu(x);
        std::size_t c = a.conv_channels[3], s = a.bottleneck_size();
        for (std::size_t l = 0; l < 4; ++l) {
            const std::size_t o = l == 3 ? a.input_channels : a.conv_channels[2 - l];
            x = deconv(x, c, s, to_double(w.decoder[l].weight), to_double(w.decoder[l].bias), o);
            if (l != 3) relu(x);
            c = o;
            s *= 2;
        }
        return x;
    }
};

}  // namespace motionood::testing
