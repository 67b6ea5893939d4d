#include "motionood/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "binary_io.hpp"
#include "motionood/errors.hpp"
#include "motionood/nn.hpp"

namespace motionood {

namespace fs = std::filesystem;

void VaeArchitecture::validate() const {
    if (input_channels == 0) throw ValidationError("vae: input_channels must be >= 1");
    if (input_size == 0 || input_size % (std::size_t{1} << kDepth) != 0) {
        throw ValidationError("vae: input_size must be a positive multiple of 16");
    }
    if (std::any_of(conv_channels.begin(), conv_channels.end(), [](std::size_t c) { return c == 0; })) {
        throw ValidationError("vae: conv channel counts must be >= 1");
    }
    if (latent_dim == 0) throw ValidationError("vae: latent_dim must be >= 1");
    if (!(std::isfinite(max_flow) && max_flow > 0.0f)) throw ValidationError("vae: max_flow must be positive");
}

namespace {

struct TensorShape {
    std::size_t weight;
    std::size_t bias;
    std::size_t fan_in;
};

// Shapes in tensors() order, one entry per layer.
std::vector<TensorShape> layer_shapes(const VaeArchitecture& a) {
    constexpr std::size_t kk = VaeArchitecture::kKernel * VaeArchitecture::kKernel;
    std::vector<TensorShape> s;
    for (std::size_t i = 0; i < VaeArchitecture::kDepth; ++i) {
        const std::size_t in = a.encoder_input_channels(i);
        const std::size_t out = a.conv_channels[i];
        s.push_back({out * in * kk, out, in * kk});
    }
    s.push_back({a.latent_dim * a.flat_size(), a.latent_dim, a.flat_size()});
    s.push_back({a.latent_dim * a.flat_size(), a.latent_dim, a.flat_size()});
    s.push_back({a.flat_size() * a.latent_dim, a.flat_size(), a.latent_dim});
    for (std::size_t i = 0; i < VaeArchitecture::kDepth; ++i) {
        const std::size_t in = a.decoder_in_channels(i);
        const std::size_t out = a.decoder_out_channels(i);
        // each transposed-conv output pixel sees (kernel/stride)^2 taps per input channel
        s.push_back({in * out * kk, out, in * kk / (VaeArchitecture::kStride * VaeArchitecture::kStride)});
    }
    return s;
}

template <typename T>
std::vector<LayerParams<T>*> layers(BasicVaeWeights<T>& w) {
    std::vector<LayerParams<T>*> v;
    for (auto& l : w.encoder) v.push_back(&l);
    v.push_back(&w.mu_head);
    v.push_back(&w.logvar_head);
    v.push_back(&w.latent_to_volume);
    for (auto& l : w.decoder) v.push_back(&l);
    return v;
}

template <typename T>
std::vector<const LayerParams<T>*> layers(const BasicVaeWeights<T>& w) {
    std::vector<const LayerParams<T>*> v;
    for (const auto* l : layers(const_cast<BasicVaeWeights<T>&>(w))) v.push_back(l);
    return v;
}

}  // namespace

template <typename T>
std::vector<std::span<T>> BasicVaeWeights<T>::tensors() {
    std::vector<std::span<T>> out;
    for (auto* l : layers(*this)) {
        out.emplace_back(l->weight);
        out.emplace_back(l->bias);
    }
    return out;
}

template <typename T>
std::vector<std::span<const T>> BasicVaeWeights<T>::tensors() const {
    std::vector<std::span<const T>> out;
    for (const auto* l : layers(*this)) {
        out.emplace_back(l->weight);
        out.emplace_back(l->bias);
    }
    return out;
}

template <typename T>
std::size_t BasicVaeWeights<T>::parameter_count() const {
    std::size_t n = 0;
    for (auto t : tensors()) n += t.size();
    return n;
}

template <typename T>
void BasicVaeWeights<T>::check_shapes() const {
    arch.validate();
    const auto shapes = layer_shapes(arch);
    const auto ls = layers(*this);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (ls[i]->weight.size() != shapes[i].weight || ls[i]->bias.size() != shapes[i].bias) {
            throw ShapeError("vae weights: layer " + std::to_string(i) + " has inconsistent tensor sizes");
        }
    }
}

template <typename T>
BasicVaeWeights<T> zero_weights(const VaeArchitecture& arch) {
    arch.validate();
    BasicVaeWeights<T> w;
    w.arch = arch;
    const auto shapes = layer_shapes(arch);
    auto ls = layers(w);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        ls[i]->weight.assign(shapes[i].weight, T(0));
        ls[i]->bias.assign(shapes[i].bias, T(0));
    }
    return w;
}

template struct BasicVaeWeights<float>;
template struct BasicVaeWeights<double>;
template BasicVaeWeights<float> zero_weights<float>(const VaeArchitecture&);
template BasicVaeWeights<double> zero_weights<double>(const VaeArchitecture&);

VaeWeights init_weights(const VaeArchitecture& arch, std::uint64_t seed) {
    VaeWeights w = zero_weights<float>(arch);
    std::mt19937_64 rng(seed);
    const auto shapes = layer_shapes(arch);
    auto ls = layers(w);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const double bound = std::sqrt(6.0 / static_cast<double>(shapes[i].fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (float& v : ls[i]->weight) v = static_cast<float>(dist(rng));
    }
    return w;
}

namespace nn {

namespace {

template <typename T>
void relu(std::span<T> v) {
    for (T& x : v) x = x > T(0) ? x : T(0);
}

// Adds bias[c] to every element of channel c of a [channels][plane] buffer.
template <typename T>
void add_channel_bias(std::span<T> v, std::span<const T> bias, std::size_t plane) {
    for (std::size_t c = 0; c < bias.size(); ++c) {
        T* p = v.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
    }
}

template <typename T>
void relu_mask(std::span<T> grad, std::span<const T> activated) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activated[i] > T(0))) grad[i] = T(0);
    }
}

}  // namespace

template <typename T>
void encoder_forward(const BasicVaeWeights<T>& w, std::span<const T> input, ForwardTrace<T>& tr) {
    const VaeArchitecture& a = w.arch;
    tr.input.assign(input.begin(), input.end());
    std::span<const T> x = tr.input;
    for (std::size_t i = 0; i < VaeArchitecture::kDepth; ++i) {
        const DownGeometry g{a.encoder_input_channels(i), a.encoder_input_size(i)};
        const std::size_t cout = a.conv_channels[i];
        auto& cols = tr.enc_cols[i];
        cols.resize(g.patch_rows() * g.patch_cols());
        im2col<T>(x, g, cols);
        auto& out = tr.enc_out[i];
        out.resize(cout * g.patch_cols());
        MatMap<T>(out.data(), cout, g.patch_cols()).noalias() =
            ConstMatMap<T>(w.encoder[i].weight.data(), cout, g.patch_rows()) *
            ConstMatMap<T>(cols.data(), g.patch_rows(), g.patch_cols());
        add_channel_bias<T>(out, w.encoder[i].bias, g.patch_cols());
        relu<T>(out);
        x = out;
    }
    tr.mu.resize(a.latent_dim);
    tr.logvar_raw.resize(a.latent_dim);
    dense_forward<T>(w.mu_head, x, tr.mu);
    dense_forward<T>(w.logvar_head, x, tr.logvar_raw);
    tr.logvar.resize(a.latent_dim);
    for (std::size_t j = 0; j < a.latent_dim; ++j) {
        tr.logvar[j] = std::clamp(tr.logvar_raw[j], T(kLogvarMin), T(kLogvarMax));
    }
}

template <typename T>
void decoder_forward(const BasicVaeWeights<T>& w, std::span<const T> z, ForwardTrace<T>& tr) {
    const VaeArchitecture& a = w.arch;
    tr.z.assign(z.begin(), z.end());
    tr.volume.resize(a.flat_size());
    dense_forward<T>(w.latent_to_volume, tr.z, tr.volume);
    relu<T>(tr.volume);

    std::span<const T> x = tr.volume;
    std::vector<T> cols;
    for (std::size_t i = 0; i < VaeArchitecture::kDepth; ++i) {
        const std::size_t cin = a.decoder_in_channels(i);
        const std::size_t cout = a.decoder_out_channels(i);
        const std::size_t size = a.bottleneck_size() << (i + 1);
        const DownGeometry g{cout, size};
        cols.resize(g.patch_rows() * g.patch_cols());
        MatMap<T>(cols.data(), g.patch_rows(), g.patch_cols()).noalias() =
            ConstMatMap<T>(w.decoder[i].weight.data(), cin, g.patch_rows()).transpose() *
            ConstMatMap<T>(x.data(), cin, g.patch_cols());
        auto& out = tr.dec_out[i];
        out.assign(cout * size * size, T(0));
        col2im<T>(cols, g, out);
        add_channel_bias<T>(out, w.decoder[i].bias, size * size);
        if (i + 1 < VaeArchitecture::kDepth) relu<T>(out);
        x = out;
    }
}

template <typename T>
void vae_forward(const BasicVaeWeights<T>& w, std::span<const T> input, std::span<const T> noise,
                 ForwardTrace<T>& tr) {
    encoder_forward(w, input, tr);
    const std::size_t m = w.arch.latent_dim;
    tr.noise.assign(noise.begin(), noise.end());
    std::vector<T> z(m);
    for (std::size_t j = 0; j < m; ++j) z[j] = tr.mu[j] + std::exp(tr.logvar[j] / T(2)) * tr.noise[j];
    decoder_forward<T>(w, z, tr);
}

template <typename T>
LossTerms<T> elbo_terms(const ForwardTrace<T>& tr, std::span<const T> target, T beta_kl) {
    LossTerms<T> l;
    const auto recon = tr.reconstruction();
    for (std::size_t i = 0; i < recon.size(); ++i) {
        const T d = recon[i] - target[i];
        l.recon += d * d;
    }
    for (std::size_t j = 0; j < tr.mu.size(); ++j) {
        l.kl += T(0.5) * (tr.mu[j] * tr.mu[j] + std::exp(tr.logvar[j]) - tr.logvar[j] - T(1));
    }
    l.total = l.recon + beta_kl * l.kl;
    return l;
}

template <typename T>
LossTerms<T> vae_backward(const BasicVaeWeights<T>& w, const ForwardTrace<T>& tr, std::span<const T> target,
                          T beta_kl, BasicVaeWeights<T>& grad) {
    const VaeArchitecture& a = w.arch;
    const LossTerms<T> loss = elbo_terms(tr, target, beta_kl);

    // d recon / d output
    const auto recon = tr.reconstruction();
    std::vector<T> dout(recon.size());
    for (std::size_t i = 0; i < recon.size(); ++i) dout[i] = T(2) * (recon[i] - target[i]);

    std::vector<T> dcols;
    std::vector<T> din;
    for (std::size_t li = VaeArchitecture::kDepth; li-- > 0;) {
        const std::size_t cin = a.decoder_in_channels(li);
        const std::size_t cout = a.decoder_out_channels(li);
        const std::size_t size = a.bottleneck_size() << (li + 1);
        const DownGeometry g{cout, size};
        if (li + 1 < VaeArchitecture::kDepth) relu_mask<T>(dout, tr.dec_out[li]);

        auto& gb = grad.decoder[li].bias;
        for (std::size_t c = 0; c < cout; ++c) {
            const T* p = dout.data() + c * size * size;
            T s = 0;
            for (std::size_t i = 0; i < size * size; ++i) s += p[i];
            gb[c] += s;
        }
        dcols.resize(g.patch_rows() * g.patch_cols());
        im2col<T>(dout, g, dcols);
        const std::span<const T> x = li == 0 ? std::span<const T>(tr.volume) : std::span<const T>(tr.dec_out[li - 1]);
        const ConstMatMap<T> dc(dcols.data(), g.patch_rows(), g.patch_cols());
        MatMap<T>(grad.decoder[li].weight.data(), cin, g.patch_rows()).noalias() +=
            ConstMatMap<T>(x.data(), cin, g.patch_cols()) * dc.transpose();
        din.resize(cin * g.patch_cols());
        MatMap<T>(din.data(), cin, g.patch_cols()).noalias() =
            ConstMatMap<T>(w.decoder[li].weight.data(), cin, g.patch_rows()) * dc;
        dout.swap(din);
    }

    // dout now holds d/d volume (post-ReLU)
    relu_mask<T>(dout, tr.volume);
    const std::size_t m = a.latent_dim;
    std::vector<T> dz(m);
    dense_backward<T>(w.latent_to_volume, tr.z, dout, grad.latent_to_volume, dz);

    std::vector<T> dmu(m), dlogvar(m);
    for (std::size_t j = 0; j < m; ++j) {
        const T sigma = std::exp(tr.logvar[j] / T(2));
        dmu[j] = dz[j] + beta_kl * tr.mu[j];
        const bool clamped = tr.logvar_raw[j] < T(kLogvarMin) || tr.logvar_raw[j] > T(kLogvarMax);
        dlogvar[j] = clamped ? T(0)
                             : dz[j] * tr.noise[j] * T(0.5) * sigma +
                                   beta_kl * T(0.5) * (std::exp(tr.logvar[j]) - T(1));
    }

    const auto& flat = tr.enc_out.back();
    std::vector<T> dflat(flat.size());
    std::vector<T> dflat_lv(flat.size());
    dense_backward<T>(w.mu_head, flat, dmu, grad.mu_head, dflat);
    dense_backward<T>(w.logvar_head, flat, dlogvar, grad.logvar_head, dflat_lv);
    for (std::size_t i = 0; i < dflat.size(); ++i) dflat[i] += dflat_lv[i];

    dout.swap(dflat);
    for (std::size_t li = VaeArchitecture::kDepth; li-- > 0;) {
        const DownGeometry g{a.encoder_input_channels(li), a.encoder_input_size(li)};
        const std::size_t cout = a.conv_channels[li];
        relu_mask<T>(dout, tr.enc_out[li]);
        const ConstMatMap<T> d(dout.data(), cout, g.patch_cols());
        MatMap<T>(grad.encoder[li].weight.data(), cout, g.patch_rows()).noalias() +=
            d * ConstMatMap<T>(tr.enc_cols[li].data(), g.patch_rows(), g.patch_cols()).transpose();
        VecMap<T>(grad.encoder[li].bias.data(), cout) += d.rowwise().sum();
        if (li == 0) break;
        dcols.resize(g.patch_rows() * g.patch_cols());
        MatMap<T>(dcols.data(), g.patch_rows(), g.patch_cols()).noalias() =
            ConstMatMap<T>(w.encoder[li].weight.data(), cout, g.patch_rows()).transpose() * d;
        din.assign(g.channels * g.size * g.size, T(0));
        col2im<T>(dcols, g, din);
        dout.swap(din);
    }
    return loss;
}

#define MOTIONOOD_INSTANTIATE(T)                                                                               \
    template void encoder_forward<T>(const BasicVaeWeights<T>&, std::span<const T>, ForwardTrace<T>&);        \
    template void decoder_forward<T>(const BasicVaeWeights<T>&, std::span<const T>, ForwardTrace<T>&);        \
    template void vae_forward<T>(const BasicVaeWeights<T>&, std::span<const T>, std::span<const T>,            \
                                 ForwardTrace<T>&);                                                            \
    template LossTerms<T> elbo_terms<T>(const ForwardTrace<T>&, std::span<const T>, T);                        \
    template LossTerms<T> vae_backward<T>(const BasicVaeWeights<T>&, const ForwardTrace<T>&, std::span<const T>, \
                                          T, BasicVaeWeights<T>&);

MOTIONOOD_INSTANTIATE(float)
MOTIONOOD_INSTANTIATE(double)
#undef MOTIONOOD_INSTANTIATE

}  // namespace nn

Grid preprocess(const Grid& flow, const VaeArchitecture& arch, float max_flow) {
    if (!(std::isfinite(max_flow) && max_flow > 0.0f)) {
        throw ValidationError("preprocess: max_flow must be positive");
    }
    if (flow.channels() != arch.input_channels) {
        throw ShapeError("preprocess: expected a " + std::to_string(arch.input_channels) +
                         "-channel flow field, got " + flow.shape_string());
    }
    if (!flow.all_finite()) {
        throw NumericError("preprocess: non-finite flow value");
    }
    Grid out = resize_bilinear(flow, arch.input_size, arch.input_size);
    for (float& v : out.data()) v = std::clamp(v, -max_flow, max_flow) / max_flow;
    return out;
}

namespace {

void check_input(const VaeArchitecture& a, const Grid& input) {
    if (input.channels() != a.input_channels || input.height() != a.input_size || input.width() != a.input_size) {
        throw ShapeError("vae input is " + input.shape_string() + ", architecture expects " +
                         std::to_string(a.input_channels) + "x" + std::to_string(a.input_size) + "x" +
                         std::to_string(a.input_size));
    }
    if (!input.all_finite()) throw NumericError("vae input contains non-finite values");
}

bool finite(std::span<const float> v) {
    return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

EncodeOutput encode(const VaeWeights& weights, const Grid& input) {
    const VaeArchitecture& a = weights.arch;
    check_input(a, input);
    nn::ForwardTrace<float> tr;
    nn::encoder_forward<float>(weights, input.data(), tr);
    if (!finite(tr.mu) || !finite(tr.logvar) || !finite(tr.enc_out.back())) {
        throw NumericError("encode: non-finite intermediate value");
    }
    EncodeOutput out;
    out.posterior.mu = std::move(tr.mu);
    out.posterior.logvar = std::move(tr.logvar);
    out.last_conv_activations =
        Grid(a.bottleneck_channels(), a.bottleneck_size(), a.bottleneck_size(), std::move(tr.enc_out.back()));
    return out;
}

std::vector<float> reparameterize(const LatentPosterior& posterior, std::span<const float> noise) {
    if (posterior.logvar.size() != posterior.mu.size()) {
        throw ShapeError("reparameterize: mu/logvar length mismatch");
    }
    if (noise.size() != posterior.dim()) {
        throw ShapeError("reparameterize: noise has " + std::to_string(noise.size()) + " values, expected " +
                         std::to_string(posterior.dim()));
    }
    std::vector<float> z(posterior.dim());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = posterior.mu[i] + std::exp(posterior.logvar[i] / 2.0f) * noise[i];
    }
    return z;
}

Grid decode(const VaeWeights& weights, std::span<const float> z) {
    const VaeArchitecture& a = weights.arch;
    if (z.size() != a.latent_dim) {
        throw ShapeError("decode: z has " + std::to_string(z.size()) + " values, expected " +
                         std::to_string(a.latent_dim));
    }
    nn::ForwardTrace<float> tr;
    nn::decoder_forward<float>(weights, z, tr);
    return Grid(a.input_channels, a.input_size, a.input_size, std::move(tr.dec_out.back()));
}

double kl_score(const LatentPosterior& posterior) {
    if (posterior.logvar.size() != posterior.mu.size()) {
        throw ShapeError("kl_score: mu/logvar length mismatch");
    }
    double alpha = 0.0;
    for (std::size_t i = 0; i < posterior.dim(); ++i) {
        const double mu = posterior.mu[i];
        const double lv = posterior.logvar[i];
        alpha += 0.5 * (mu * mu + std::exp(lv) - lv - 1.0);
    }
    // exp(x) - x - 1 >= 0; guard against the last-ulp negative from rounding
    return std::max(alpha, 0.0);
}

void save_weights(const fs::path& path, const VaeWeights& weights) {
    weights.check_shapes();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    const VaeArchitecture& a = weights.arch;
    detail::write_magic(os, "VAEW");
    detail::write_u32(os, kWeightsVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(a.input_size));
    detail::write_u32(os, static_cast<std::uint32_t>(a.latent_dim));
    detail::write_f32(os, a.max_flow);
    detail::write_u32(os, static_cast<std::uint32_t>(a.conv_channels.size()));
    for (std::size_t c : a.conv_channels) detail::write_u32(os, static_cast<std::uint32_t>(c));
    for (auto t : weights.tensors()) detail::write_f32s(os, t);
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

VaeWeights load_weights(const fs::path& path, const std::optional<VaeArchitecture>& expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const std::string what = "weights " + path.string();
    detail::expect_magic(is, "VAEW", what);
    const auto version = detail::read_u32(is, what);
    if (version != kWeightsVersion) {
        throw FormatError(what + ": unsupported version " + std::to_string(version));
    }
    VaeArchitecture a;
    a.input_size = detail::read_u32(is, what);
    a.latent_dim = detail::read_u32(is, what);
    a.max_flow = detail::read_f32(is, what);
    const auto depth = detail::read_u32(is, what);
    if (depth != VaeArchitecture::kDepth) {
        throw ShapeError(what + ": expected " + std::to_string(VaeArchitecture::kDepth) + " conv layers, file has " +
                         std::to_string(depth));
    }
    for (auto& c : a.conv_channels) c = detail::read_u32(is, what);
    try {
        a.validate();
    } catch (const ValidationError& e) {
        throw FormatError(what + ": invalid architecture (" + e.what() + ")");
    }
    if (expected && !(*expected == a)) {
        throw ShapeError(what + ": architecture mismatch (file latent_dim=" + std::to_string(a.latent_dim) +
                         " input_size=" + std::to_string(a.input_size) + ", expected latent_dim=" +
                         std::to_string(expected->latent_dim) + " input_size=" +
                         std::to_string(expected->input_size) + ")");
    }
    VaeWeights w = zero_weights<float>(a);
    for (auto t : w.tensors()) detail::read_f32s(is, t, what);
    if (!detail::at_eof(is)) {
        throw FormatError(what + ": trailing bytes after last tensor");
    }
    for (auto t : w.tensors()) {
        if (!finite(t)) throw NumericError(what + ": non-finite weight");
    }
    return w;
}

}  // namespace motionood
