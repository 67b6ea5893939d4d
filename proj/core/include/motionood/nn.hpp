#pragma once

// Layer primitives and the full forward/backward pass of the VAE, templated
// on the scalar type so training runs in float while gradient checks run in
// double.

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "motionood/vae.hpp"

namespace motionood::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

/// Geometry of one kernel-4 / stride-2 / padding-1 convolution taking a
/// channels x size x size volume to channels' x size/2 x size/2.
struct DownGeometry {
    std::size_t channels;
    std::size_t size;

    std::size_t out_size() const { return size / 2; }
    std::size_t patch_rows() const { return channels * VaeArchitecture::kKernel * VaeArchitecture::kKernel; }
    std::size_t patch_cols() const { return out_size() * out_size(); }
};

/// cols[(c, ky, kx)][(oy, ox)] = in[c][2 oy - 1 + ky][2 ox - 1 + kx], zero outside.
template <typename T>
void im2col(std::span<const T> in, DownGeometry g, std::span<T> cols) {
    constexpr std::ptrdiff_t k = VaeArchitecture::kKernel;
    const auto s = static_cast<std::ptrdiff_t>(g.size);
    const auto os = static_cast<std::ptrdiff_t>(g.out_size());
    const std::size_t p = g.patch_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        const T* plane = in.data() + c * g.size * g.size;
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                T* row = cols.data() + ((c * k + ky) * k + kx) * p;
                for (std::ptrdiff_t oy = 0; oy < os; ++oy) {
                    const std::ptrdiff_t iy = 2 * oy - 1 + ky;
                    T* dst = row + oy * os;
                    if (iy < 0 || iy >= s) {
                        std::fill(dst, dst + os, T(0));
                        continue;
                    }
                    const T* src_row = plane + iy * s;
                    for (std::ptrdiff_t ox = 0; ox < os; ++ox) {
                        const std::ptrdiff_t ix = 2 * ox - 1 + kx;
                        dst[ox] = (ix < 0 || ix >= s) ? T(0) : src_row[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-adds patch columns back onto the volume.
/// `out` must be zero-initialized by the caller.
template <typename T>
void col2im(std::span<const T> cols, DownGeometry g, std::span<T> out) {
    constexpr std::ptrdiff_t k = VaeArchitecture::kKernel;
    const auto s = static_cast<std::ptrdiff_t>(g.size);
    const auto os = static_cast<std::ptrdiff_t>(g.out_size());
    const std::size_t p = g.patch_cols();
    for (std::size_t c = 0; c < g.channels; ++c) {
        T* plane = out.data() + c * g.size * g.size;
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                const T* row = cols.data() + ((c * k + ky) * k + kx) * p;
                for (std::ptrdiff_t oy = 0; oy < os; ++oy) {
                    const std::ptrdiff_t iy = 2 * oy - 1 + ky;
                    if (iy < 0 || iy >= s) continue;
                    T* dst_row = plane + iy * s;
                    const T* src = row + oy * os;
                    for (std::ptrdiff_t ox = 0; ox < os; ++ox) {
                        const std::ptrdiff_t ix = 2 * ox - 1 + kx;
                        if (ix >= 0 && ix < s) dst_row[ix] += src[ox];
                    }
                }
            }
        }
    }
}

/// y = W x + b, W is [out][in].
template <typename T>
void dense_forward(const LayerParams<T>& p, std::span<const T> x, std::span<T> y) {
    const auto n_out = static_cast<Eigen::Index>(y.size());
    const auto n_in = static_cast<Eigen::Index>(x.size());
    VecMap<T>(y.data(), n_out).noalias() =
        ConstMatMap<T>(p.weight.data(), n_out, n_in) * ConstVecMap<T>(x.data(), n_in) +
        ConstVecMap<T>(p.bias.data(), n_out);
}

/// Accumulates dW += dy x^T and db += dy; writes dx = W^T dy when dx is non-empty.
template <typename T>
void dense_backward(const LayerParams<T>& p, std::span<const T> x, std::span<const T> dy, LayerParams<T>& grad,
                    std::span<T> dx) {
    const auto n_out = static_cast<Eigen::Index>(dy.size());
    const auto n_in = static_cast<Eigen::Index>(x.size());
    const ConstVecMap<T> g(dy.data(), n_out);
    MatMap<T>(grad.weight.data(), n_out, n_in).noalias() += g * ConstVecMap<T>(x.data(), n_in).transpose();
    VecMap<T>(grad.bias.data(), n_out) += g;
    if (!dx.empty()) {
        VecMap<T>(dx.data(), n_in).noalias() = ConstMatMap<T>(p.weight.data(), n_out, n_in).transpose() * g;
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
template <typename T>
struct ForwardTrace {
    std::vector<T> input;
    std::array<std::vector<T>, VaeArchitecture::kDepth> enc_cols;  // im2col of each encoder input
    std::array<std::vector<T>, VaeArchitecture::kDepth> enc_out;   // post-ReLU
    std::vector<T> mu;
    std::vector<T> logvar_raw;  // before clamping
    std::vector<T> logvar;
    std::vector<T> noise;
    std::vector<T> z;
    std::vector<T> volume;  // post-ReLU latent-to-volume output
    std::array<std::vector<T>, VaeArchitecture::kDepth> dec_out;  // post-ReLU except the last (linear)

    std::span<const T> reconstruction() const { return dec_out.back(); }
};

template <typename T>
struct LossTerms {
    T total = 0;
    T recon = 0;
    T kl = 0;
};

/// Encoder half of the forward pass: fills input, enc_cols, enc_out, mu,
/// logvar_raw and logvar.
template <typename T>
void encoder_forward(const BasicVaeWeights<T>& w, std::span<const T> input, ForwardTrace<T>& tr);

/// Decoder half: fills z (copied from the argument), volume and dec_out.
template <typename T>
void decoder_forward(const BasicVaeWeights<T>& w, std::span<const T> z, ForwardTrace<T>& tr);

/// Full training forward pass: encode, z = mu + exp(logvar/2) noise, decode.
template <typename T>
void vae_forward(const BasicVaeWeights<T>& w, std::span<const T> input, std::span<const T> noise,
                 ForwardTrace<T>& tr);

/// ELBO terms for a completed trace against `target`: recon = sum of squared
/// differences, kl = kl_score(posterior), total = recon + beta_kl * kl.
template <typename T>
LossTerms<T> elbo_terms(const ForwardTrace<T>& tr, std::span<const T> target, T beta_kl);

/// Backpropagates the ELBO of a completed trace, accumulating into `grad`
/// (which must already have the weights' shapes). Returns the loss terms.
template <typename T>
LossTerms<T> vae_backward(const BasicVaeWeights<T>& w, const ForwardTrace<T>& tr, std::span<const T> target,
                          T beta_kl, BasicVaeWeights<T>& grad);

}  // namespace motionood::nn
