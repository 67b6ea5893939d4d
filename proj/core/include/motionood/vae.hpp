#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "motionood/grid.hpp"

namespace motionood {

/// Convolutional VAE family: four kernel-4 / stride-2 / padding-1 convolutions
/// halve the input each time, two dense heads produce the posterior, and a
/// mirrored decoder of transposed convolutions reconstructs the flow field.
struct VaeArchitecture {
    static constexpr std::size_t kDepth = 4;
    static constexpr std::size_t kKernel = 4;
    static constexpr std::size_t kStride = 2;
    static constexpr std::size_t kPadding = 1;

    std::size_t input_channels = 2;
    std::size_t input_size = 64;
    std::array<std::size_t, kDepth> conv_channels{32, 64, 128, 256};
    std::size_t latent_dim = 24;
    float max_flow = 8.0f;  // px/frame mapped to +-1 by preprocess

    void validate() const;

    std::size_t bottleneck_size() const { return input_size >> kDepth; }
    std::size_t bottleneck_channels() const { return conv_channels.back(); }
    std::size_t flat_size() const { return bottleneck_channels() * bottleneck_size() * bottleneck_size(); }
    std::size_t input_elements() const { return input_channels * input_size * input_size; }
    // Spatial size at the input of encoder layer i (input_size for i = 0).
    std::size_t encoder_input_size(std::size_t layer) const { return input_size >> layer; }
    // Channels entering encoder layer i.
    std::size_t encoder_input_channels(std::size_t layer) const {
        return layer == 0 ? input_channels : conv_channels[layer - 1];
    }
    // Decoder layer i maps decoder_in_channels(i) -> decoder_out_channels(i)
    // and doubles the spatial size from bottleneck_size() << i.
    std::size_t decoder_in_channels(std::size_t layer) const { return conv_channels[kDepth - 1 - layer]; }
    std::size_t decoder_out_channels(std::size_t layer) const {
        return layer + 1 == kDepth ? input_channels : conv_channels[kDepth - 2 - layer];
    }

    friend bool operator==(const VaeArchitecture&, const VaeArchitecture&) = default;
};

template <typename T>
struct LayerParams {
    std::vector<T> weight;
    std::vector<T> bias;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// All trainable tensors of the VAE. Convolution kernels are laid out
/// [out][in][ky][kx]; transposed-convolution kernels [in][out][ky][kx]; dense
/// matrices [out][in].
template <typename T>
struct BasicVaeWeights {
    VaeArchitecture arch;
    std::array<LayerParams<T>, VaeArchitecture::kDepth> encoder;
    LayerParams<T> mu_head;
    LayerParams<T> logvar_head;
    LayerParams<T> latent_to_volume;
    std::array<LayerParams<T>, VaeArchitecture::kDepth> decoder;

    /// Tensors in serialization order: encoder layers (weight, bias), mu head,
    /// logvar head, latent-to-volume, decoder layers.
    std::vector<std::span<T>> tensors();
    std::vector<std::span<const T>> tensors() const;
    std::size_t parameter_count() const;
    /// Throws ShapeError when any tensor disagrees with arch.
    void check_shapes() const;

    friend bool operator==(const BasicVaeWeights&, const BasicVaeWeights&) = default;
};

using VaeWeights = BasicVaeWeights<float>;

/// Correctly shaped, all-zero tensors.
template <typename T>
BasicVaeWeights<T> zero_weights(const VaeArchitecture& arch);

/// Fan-in scaled uniform init (bound sqrt(6 / fan_in)) from a seeded
/// generator; biases zero.
VaeWeights init_weights(const VaeArchitecture& arch, std::uint64_t seed);

template <typename To, typename From>
BasicVaeWeights<To> cast_weights(const BasicVaeWeights<From>& src) {
    BasicVaeWeights<To> out = zero_weights<To>(src.arch);
    auto dst = out.tensors();
    auto in = src.tensors();
    for (std::size_t t = 0; t < dst.size(); ++t) {
        for (std::size_t i = 0; i < dst[t].size(); ++i) dst[t][i] = static_cast<To>(in[t][i]);
    }
    return out;
}

inline constexpr float kLogvarMin = -10.0f;
inline constexpr float kLogvarMax = 10.0f;

struct LatentPosterior {
    std::vector<float> mu;
    std::vector<float> logvar;  // log sigma^2, clamped to [kLogvarMin, kLogvarMax]

    std::size_t dim() const { return mu.size(); }
};

struct EncodeOutput {
    LatentPosterior posterior;
    Grid last_conv_activations;  // post-ReLU output of the 4th encoder conv
};

/// Maps a raw C=2 flow field to network input: bilinear resize to
/// input_size x input_size, clamp to [-max_flow, max_flow], scale to [-1, 1].
Grid preprocess(const Grid& flow, const VaeArchitecture& arch, float max_flow);
inline Grid preprocess(const Grid& flow, const VaeArchitecture& arch) {
    return preprocess(flow, arch, arch.max_flow);
}

EncodeOutput encode(const VaeWeights& weights, const Grid& input);

/// z_i = mu_i + exp(logvar_i / 2) * noise_i
std::vector<float> reparameterize(const LatentPosterior& posterior, std::span<const float> noise);

Grid decode(const VaeWeights& weights, std::span<const float> z);

/// Nonconformity score: sum over latent dimensions of
/// KL(N(mu_i, sigma_i^2) || N(0, 1)) = 0.5 (mu^2 + sigma^2 - log sigma^2 - 1).
double kl_score(const LatentPosterior& posterior);

// Weights file: "VAEW", u32 version, u32 input_size, u32 latent_dim,
// f32 max_flow, u32 conv channel count (4), u32 x 4 channels, then every
// tensor in tensors() order as little-endian f32.
inline constexpr std::uint32_t kWeightsVersion = 1;

void save_weights(const std::filesystem::path& path, const VaeWeights& weights);

/// When `expected` is given, any architecture difference is a ShapeError.
VaeWeights load_weights(const std::filesystem::path& path,
                        const std::optional<VaeArchitecture>& expected = std::nullopt);

}  // namespace motionood
