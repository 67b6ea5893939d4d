#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "motionood/errors.hpp"
#include "motionood/vae.hpp"
#include "test_support.hpp"

using namespace motionood;
using motionood::testing::Reference;
using motionood::testing::rel_err;
using motionood::testing::TempDir;

namespace {

VaeArchitecture small_arch() {
    VaeArchitecture a;
    a.input_size = 16;
    a.conv_channels = {4, 6, 8, 10};
    a.latent_dim = 5;
    return a;
}

LatentPosterior posterior(std::vector<float> mu, std::vector<float> logvar) { return {std::move(mu), std::move(logvar)}; }

// Normwise relative error: max |got - want| / max |want|.
double max_scaled_error(std::span<const float> got, const std::vector<double>& want) {
    double scale = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
        scale = std::max(scale, std::abs(want[i]));
        worst = std::max(worst, std::abs(double(got[i]) - want[i]));
    }
    return scale > 0.0 ? worst / scale : worst;
}

}  // namespace

TEST_CASE("architecture halves the spatial size four times") {
    const VaeArchitecture a;
    CHECK(a.encoder_input_size(0) == 64);
    CHECK(a.encoder_input_size(1) == 32);
    CHECK(a.encoder_input_size(2) == 16);
    CHECK(a.encoder_input_size(3) == 8);
    CHECK(a.bottleneck_size() == 4);
    CHECK(a.encoder_input_channels(0) == 2);
    CHECK(a.encoder_input_channels(3) == 128);
    CHECK(a.flat_size() == 256 * 16);
    CHECK(a.decoder_in_channels(0) == 256);
    CHECK(a.decoder_out_channels(3) == 2);

    const VaeWeights w = init_weights(a, 1);
    const EncodeOutput e = encode(w, Grid(2, 64, 64));
    CHECK(e.last_conv_activations.channels() == 256);
    CHECK(e.last_conv_activations.height() == 4);
    CHECK(e.last_conv_activations.width() == 4);
    CHECK(e.posterior.dim() == 24);
    CHECK(decode(w, std::vector<float>(24, 0.0f)).same_shape(Grid(2, 64, 64)));

    VaeArchitecture bad;
    bad.input_size = 40;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = VaeArchitecture{};
    bad.latent_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("zero weights pass only the head biases") {
    const VaeArchitecture a = small_arch();
    VaeWeights w = zero_weights<float>(a);
    for (std::size_t i = 0; i < a.latent_dim; ++i) {
        w.mu_head.bias[i] = 0.1f * float(i) - 0.2f;
        w.logvar_head.bias[i] = -0.3f * float(i);
    }
    const EncodeOutput e = encode(w, motionood::testing::random_grid(2, 16, 16, 9));
    CHECK(e.posterior.mu == w.mu_head.bias);
    CHECK(e.posterior.logvar == w.logvar_head.bias);
    for (float v : e.last_conv_activations.data()) CHECK(v == 0.0f);
}

TEST_CASE("zero weights decode to an all-zero field") {
    const VaeWeights w = zero_weights<float>(small_arch());
    const Grid out = decode(w, std::vector<float>{1, -2, 3, 0.5f, 7});
    for (float v : out.data()) CHECK(v == 0.0f);
}

TEST_CASE("logvar is clamped to [-10, 10]") {
    VaeWeights w = zero_weights<float>(small_arch());
    w.logvar_head.bias = {50.0f, -50.0f, 3.0f, 10.5f, -10.0f};
    const EncodeOutput e = encode(w, Grid(2, 16, 16));
    CHECK(e.posterior.logvar == std::vector<float>{10.0f, -10.0f, 3.0f, 10.0f, -10.0f});
}

TEST_CASE("encode and decode are deterministic") {
    const VaeWeights w = init_weights(VaeArchitecture{}, 17);
    const Grid zero(2, 64, 64);
    const EncodeOutput a = encode(w, zero);
    const EncodeOutput b = encode(w, zero);
    CHECK(a.posterior.mu == b.posterior.mu);
    CHECK(a.posterior.logvar == b.posterior.logvar);
    CHECK(a.last_conv_activations == b.last_conv_activations);
    const std::vector<float> z(24, 0.25f);
    CHECK(decode(w, z) == decode(w, z));
    CHECK(init_weights(VaeArchitecture{}, 17) == w);
    CHECK_FALSE(init_weights(VaeArchitecture{}, 18) == w);
}

TEST_CASE("encoder matches the 64-bit reference forward pass") {
    const VaeArchitecture a;
    const VaeWeights w = init_weights(a, 5);
    const Grid input = motionood::testing::random_grid(2, 64, 64, 77, -1.0f, 1.0f);
    const EncodeOutput got = encode(w, input);
    const Reference::Encoded want = Reference::encode(w, input);
    CHECK(max_scaled_error(got.posterior.mu, want.mu) < 1e-4);
    CHECK(max_scaled_error(got.posterior.logvar, want.logvar) < 1e-4);
    CHECK(max_scaled_error(got.last_conv_activations.data(), want.last) < 1e-4);
}

TEST_CASE("decoder matches the 64-bit reference forward pass") {
    const VaeArchitecture a;
    VaeWeights w = init_weights(a, 6);
    std::mt19937_64 rng(3);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (auto& layer : w.decoder) {
        for (float& b : layer.bias) b = 0.1f * n(rng);
    }
    for (float& b : w.latent_to_volume.bias) b = 0.1f * n(rng);
    std::vector<float> z(a.latent_dim);
    for (float& v : z) v = n(rng);
    const Grid got = decode(w, z);
    const auto want = Reference::decode(w, z);
    CHECK(max_scaled_error(got.data(), want) < 1e-4);
}

TEST_CASE("small non-default architecture matches the reference") {
    const VaeArchitecture a = small_arch();
    const VaeWeights w = init_weights(a, 8);
    const Grid input = motionood::testing::random_grid(2, 16, 16, 4);
    const EncodeOutput got = encode(w, input);
    const auto want = Reference::encode(w, input);
    CHECK(max_scaled_error(got.posterior.mu, want.mu) < 1e-4);
    const std::vector<float> z{0.3f, -1.0f, 0.5f, 2.0f, -0.7f};
    CHECK(max_scaled_error(decode(w, z).data(), Reference::decode(w, z)) < 1e-4);
}

TEST_CASE("init uses fan-in scaled uniform bounds and zero biases") {
    const VaeArchitecture a;
    const VaeWeights w = init_weights(a, 2);
    auto within = [](const std::vector<float>& v, double fan_in) {
        const double bound = std::sqrt(6.0 / fan_in);
        double peak = 0.0;
        for (float x : v) peak = std::max(peak, std::abs(double(x)));
        return peak <= bound && peak > 0.9 * bound;
    };
    CHECK(within(w.encoder[0].weight, 2.0 * 16));
    CHECK(within(w.encoder[3].weight, 128.0 * 16));
    CHECK(within(w.mu_head.weight, double(a.flat_size())));
    CHECK(within(w.latent_to_volume.weight, double(a.latent_dim)));
    for (const auto& layer : w.encoder) {
        for (float b : layer.bias) CHECK(b == 0.0f);
    }
    for (float b : w.mu_head.bias) CHECK(b == 0.0f);
}

TEST_CASE("reparameterize") {
    const LatentPosterior p = posterior({0.5f, -1.0f, 2.0f}, {0.0f, 0.0f, 0.0f});
    CHECK(reparameterize(p, std::vector<float>{0, 0, 0}) == p.mu);
    CHECK(reparameterize(p, std::vector<float>{1, 1, 1}) == std::vector<float>{1.5f, 0.0f, 3.0f});
    const LatentPosterior q = posterior({0.0f, 0.0f}, {float(2.0 * std::log(2.0)), 0.0f});
    const auto z = reparameterize(q, std::vector<float>{1.0f, 0.0f});
    CHECK(z[0] == doctest::Approx(2.0));
    CHECK(z[1] == 0.0f);
    CHECK_THROWS_AS(reparameterize(p, std::vector<float>{1.0f}), ShapeError);
}

TEST_CASE("kl_score closed-form examples") {
    CHECK(kl_score(posterior(std::vector<float>(24, 0.0f), std::vector<float>(24, 0.0f))) == 0.0);
    CHECK(kl_score(posterior({1.0f}, {0.0f})) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_score(posterior({0.0f}, {1.0f})) == doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-7));
    CHECK(kl_score(posterior({0.0f}, {1.0f})) == doctest::Approx(0.35914).epsilon(1e-5));
}

TEST_CASE("kl_score matches a Monte-Carlo estimate") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<float> mu_d(-2.0f, 2.0f), lv_d(-2.0f, 1.5f);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        LatentPosterior p;
        for (int i = 0; i < 3; ++i) {
            p.mu.push_back(mu_d(rng));
            p.logvar.push_back(lv_d(rng));
        }
        // E_q[log q(z) - log p(z)] per dimension
        double acc = 0.0;
        const int samples = 200000;
        for (int s = 0; s < samples; ++s) {
            for (std::size_t i = 0; i < 3; ++i) {
                const double sd = std::exp(0.5 * p.logvar[i]);
                const double e = n(rng);
                const double z = p.mu[i] + sd * e;
                acc += (-0.5 * e * e - 0.5 * double(p.logvar[i])) - (-0.5 * z * z);
            }
        }
        CHECK(rel_err(acc / samples, kl_score(p)) < 0.02);
    }
}

TEST_CASE("kl_score properties: nonnegative, additive, permutation invariant, convex in mu") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> d(-3.0f, 3.0f);
    for (int trial = 0; trial < 50; ++trial) {
        LatentPosterior p;
        for (int i = 0; i < 6; ++i) {
            p.mu.push_back(d(rng));
            p.logvar.push_back(d(rng));
        }
        const double total = kl_score(p);
        CHECK(total >= 0.0);
        double parts = 0.0;
        for (int i = 0; i < 6; ++i) parts += kl_score(posterior({p.mu[i]}, {p.logvar[i]}));
        CHECK(total == doctest::Approx(parts).epsilon(1e-12));

        LatentPosterior r = p;
        std::reverse(r.mu.begin(), r.mu.end());
        std::reverse(r.logvar.begin(), r.logvar.end());
        CHECK(kl_score(r) == doctest::Approx(total).epsilon(1e-12));

        LatentPosterior lo = p, hi = p, mid = p;
        for (int i = 0; i < 6; ++i) {
            lo.mu[i] = p.mu[i] - 1.0f;
            hi.mu[i] = p.mu[i] + 1.0f;
        }
        CHECK(kl_score(mid) < 0.5 * (kl_score(lo) + kl_score(hi)));
    }
    CHECK(kl_score(posterior({0.0f}, {1e-3f})) > 0.0);
}

TEST_CASE("preprocess: zero, clamp boundary, and scaling") {
    const VaeArchitecture a;
    const Grid zero = preprocess(Grid(2, 64, 64), a);
    for (float v : zero.data()) CHECK(v == 0.0f);

    Grid flow(2, 64, 64);
    for (float& v : flow.plane(0)) v = 8.0f;
    const Grid p = preprocess(flow, a, 8.0f);
    for (float v : p.plane(0)) CHECK(v == 1.0f);
    for (float v : p.plane(1)) CHECK(v == 0.0f);

    Grid big(2, 64, 64, -100.0f);
    const Grid clamped = preprocess(big, a, 8.0f);
    for (float v : clamped.data()) CHECK(v == -1.0f);
    Grid half(2, 64, 64, 2.0f);
    const Grid scaled = preprocess(half, a, 8.0f);
    for (float v : scaled.data()) CHECK(v == 0.25f);

    CHECK_THROWS_AS(preprocess(flow, a, 0.0f), ValidationError);
    CHECK_THROWS_AS(preprocess(Grid(1, 64, 64), a, 8.0f), ShapeError);
}

TEST_CASE("preprocess downsampling reproduces 2x2 block means of a linear field") {
    const VaeArchitecture a;
    Grid flow(2, 128, 128);
    for (std::size_t y = 0; y < 128; ++y) {
        for (std::size_t x = 0; x < 128; ++x) {
            flow.at(0, y, x) = 0.03f * float(x) - 0.02f * float(y);
            flow.at(1, y, x) = 0.01f * float(x) + 0.015f * float(y) - 1.0f;
        }
    }
    const Grid p = preprocess(flow, a, 8.0f);
    REQUIRE(p.height() == 64);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) {
                const double block = (double(flow.at(c, 2 * y, 2 * x)) + flow.at(c, 2 * y, 2 * x + 1) +
                                      flow.at(c, 2 * y + 1, 2 * x) + flow.at(c, 2 * y + 1, 2 * x + 1)) /
                                     4.0;
                CHECK(p.at(c, y, x) == doctest::Approx(block / 8.0).epsilon(1e-5).scale(1.0));
            }
        }
    }
}

TEST_CASE("weights save/load round trip is bit-identical") {
    TempDir dir("weights");
    const VaeWeights w = init_weights(VaeArchitecture{}, 21);
    save_weights(dir / "w.bin", w);
    const VaeWeights back = load_weights(dir / "w.bin");
    CHECK(back == w);
    CHECK(load_weights(dir / "w.bin", VaeArchitecture{}) == w);
    CHECK(std::filesystem::file_size(dir / "w.bin") == 4 + 4 * 4 + 4 + 4 * 4 + 4 * w.parameter_count());
}

TEST_CASE("weights loading errors") {
    TempDir dir("weights");
    const VaeWeights w = init_weights(VaeArchitecture{}, 3);
    save_weights(dir / "w.bin", w);

    VaeArchitecture m16;
    m16.latent_dim = 16;
    CHECK_THROWS_AS(load_weights(dir / "w.bin", m16), ShapeError);

    const auto full = std::filesystem::file_size(dir / "w.bin");
    std::filesystem::copy_file(dir / "w.bin", dir / "t.bin");
    std::filesystem::resize_file(dir / "t.bin", full - 100);
    CHECK_THROWS_AS(load_weights(dir / "t.bin"), IoError);

    std::filesystem::copy_file(dir / "w.bin", dir / "x.bin");
    {
        std::ofstream os(dir / "x.bin", std::ios::binary | std::ios::app);
        os.put('\0');
    }
    CHECK_THROWS_AS(load_weights(dir / "x.bin"), FormatError);

    std::filesystem::copy_file(dir / "w.bin", dir / "m.bin");
    {
        std::fstream fs(dir / "m.bin", std::ios::binary | std::ios::in | std::ios::out);
        fs.seekp(0);
        fs.write("WAEV", 4);
    }
    CHECK_THROWS_AS(load_weights(dir / "m.bin"), FormatError);

    std::filesystem::copy_file(dir / "w.bin", dir / "v.bin");
    {
        std::fstream fs(dir / "v.bin", std::ios::binary | std::ios::in | std::ios::out);
        fs.seekp(4);
        const std::uint32_t v = 9;
        fs.write(reinterpret_cast<const char*>(&v), 4);
    }
    CHECK_THROWS_AS(load_weights(dir / "v.bin"), FormatError);

    VaeWeights nan = w;
    nan.decoder[2].weight[5] = std::nanf("");
    save_weights(dir / "n.bin", nan);
    CHECK_THROWS_AS(load_weights(dir / "n.bin"), NumericError);
    CHECK_THROWS_AS(load_weights(dir / "absent.bin"), IoError);
}

TEST_CASE("encode rejects inputs of the wrong shape") {
    const VaeWeights w = init_weights(small_arch(), 1);
    CHECK_THROWS_AS(encode(w, Grid(2, 32, 32)), ShapeError);
    CHECK_THROWS_AS(encode(w, Grid(1, 16, 16)), ShapeError);
    CHECK_THROWS_AS(decode(w, std::vector<float>(4)), ShapeError);
    Grid bad(2, 16, 16);
    bad.at(1, 2, 3) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(encode(w, bad), NumericError);
}
