#include <doctest.h>

#include <cmath>
#include <random>

#include "motionood/errors.hpp"
#include "motionood/opticflow.hpp"
#include "motionood/synthdata.hpp"
#include "test_support.hpp"

using namespace motionood;

namespace {

FlowParams no_smoothing() {
    FlowParams p;
    p.presmooth_sigma = 0.0;
    return p;
}

Grid gaussian_blob(std::size_t size, double cx, double cy, double sigma) {
    Grid g(1, size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double dx = double(x) - cx, dy = double(y) - cy;
            g.at(0, y, x) = static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
        }
    }
    return g;
}

Grid shifted_texture(const Grid& tex, double sx, double sy) {
    Grid out(1, tex.height(), tex.width());
    for (std::size_t y = 0; y < tex.height(); ++y) {
        for (std::size_t x = 0; x < tex.width(); ++x) out.at(0, y, x) = sample_wrapped(tex, double(x) - sx, double(y) - sy);
    }
    return out;
}

}  // namespace

TEST_CASE("constant frames give zero gradients") {
    const Grid f(1, 8, 8, 0.5f);
    const GradientField g = gradients(f, f, FlowParams{});
    for (const Grid* d : {&g.ix, &g.iy, &g.it}) {
        for (float v : d->data()) CHECK(v == 0.0f);
    }
}

TEST_CASE("horizontal ramp has ix = 1/W in the interior") {
    const std::size_t w = 16;
    Grid f(1, 6, w);
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 0; x < w; ++x) f.at(0, y, x) = float(x) / float(w);
    }
    const GradientField g = gradients(f, f, no_smoothing());
    for (std::size_t y = 0; y < 6; ++y) {
        for (std::size_t x = 1; x + 1 < w; ++x) {
            CHECK(g.ix.at(0, y, x) == doctest::Approx(1.0 / double(w)).epsilon(1e-6));
            CHECK(g.iy.at(0, y, x) == 0.0f);
        }
        for (std::size_t x = 0; x < w; ++x) CHECK(g.it.at(0, y, x) == 0.0f);
    }
    // replicate padding halves the one-sided difference at the borders
    CHECK(g.ix.at(0, 0, 0) == doctest::Approx(0.5 / double(w)).epsilon(1e-6));
}

TEST_CASE("adding a constant to the second frame changes only it") {
    const Grid a = motionood::testing::random_grid(1, 10, 12, 3, 0.0f, 0.8f);
    Grid b = a;
    for (float& v : b.data()) v += 0.1f;
    const GradientField g0 = gradients(a, a, FlowParams{});
    const GradientField g1 = gradients(a, b, FlowParams{});
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(g1.it.data()[i] == doctest::Approx(0.1).epsilon(1e-4));
        CHECK(g1.ix.data()[i] == doctest::Approx(g0.ix.data()[i]).epsilon(1e-4));
        CHECK(g1.iy.data()[i] == doctest::Approx(g0.iy.data()[i]).epsilon(1e-4));
    }
}

TEST_CASE("brightness offset on both frames leaves spatial gradients unchanged") {
    const Grid a = motionood::testing::random_grid(1, 10, 10, 5, 0.0f, 0.5f);
    const Grid b = motionood::testing::random_grid(1, 10, 10, 6, 0.0f, 0.5f);
    Grid a2 = a, b2 = b;
    for (float& v : a2.data()) v += 0.3f;
    for (float& v : b2.data()) v += 0.3f;
    const GradientField g = gradients(a, b, FlowParams{});
    const GradientField g2 = gradients(a2, b2, FlowParams{});
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(g2.ix.data()[i] == doctest::Approx(g.ix.data()[i]).epsilon(1e-4).scale(1.0));
        CHECK(g2.iy.data()[i] == doctest::Approx(g.iy.data()[i]).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("identical frames give exactly zero flow") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Grid f = motionood::testing::random_grid(1, 13, 17, seed, 0.0f, 1.0f);
        const Grid flow = lucas_kanade(f, f, FlowParams{});
        CHECK(flow.channels() == 2);
        CHECK(flow.height() == 13);
        CHECK(flow.width() == 17);
        for (float v : flow.data()) CHECK(v == 0.0f);
    }
}

TEST_CASE("textureless frames give zero flow through regularization") {
    const Grid a(1, 9, 9, 0.4f), b(1, 9, 9, 0.6f);
    const Grid flow = lucas_kanade(a, b, FlowParams{});
    for (float v : flow.data()) CHECK(v == 0.0f);
}

TEST_CASE("translated Gaussian blob recovers the shift") {
    const std::size_t size = 64;
    const Grid a = gaussian_blob(size, 31.5, 31.5, 6.0);
    const Grid b = gaussian_blob(size, 32.5, 31.5, 6.0);
    const Grid flow = lucas_kanade(a, b, FlowParams{});
    double su = 0.0, sv = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            if (a.at(0, y, x) < 0.1f) continue;
            su += flow.at(0, y, x);
            sv += flow.at(1, y, x);
            ++n;
        }
    }
    REQUIRE(n > 100);
    CHECK(std::abs(su / double(n) - 1.0) <= 0.25);
    CHECK(std::abs(sv / double(n)) <= 0.1);
}

TEST_CASE("translation recovery on seeded textures") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> comp(-2.0, 2.0);
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        double vx, vy;
        do {
            vx = comp(rng);
            vy = comp(rng);
        } while (vx * vx + vy * vy > 4.0);
        const Grid tex = gen_texture(64, 12, 1000 + seed);
        const Grid flow = lucas_kanade(shifted_texture(tex, 0, 0), shifted_texture(tex, vx, vy), FlowParams{});
        double epe = 0.0;
        for (std::size_t y = 0; y < 64; ++y) {
            for (std::size_t x = 0; x < 64; ++x) epe += std::hypot(flow.at(0, y, x) - vx, flow.at(1, y, x) - vy);
        }
        epe /= 64.0 * 64.0;
        MESSAGE("seed " << seed << " v=(" << vx << "," << vy << ") EPE " << epe);
        total += epe;
    }
    CHECK(total / 20.0 <= 0.25);
}

TEST_CASE("flow output keeps non-square dimensions") {
    const Grid a = motionood::testing::random_grid(1, 7, 19, 1, 0.0f, 1.0f);
    const Grid b = motionood::testing::random_grid(1, 7, 19, 2, 0.0f, 1.0f);
    const Grid f = lucas_kanade(a, b, FlowParams{});
    CHECK(f.channels() == 2);
    CHECK(f.height() == 7);
    CHECK(f.width() == 19);
    CHECK(f.all_finite());
}

TEST_CASE("flow errors: mismatched, multi-channel and non-finite frames") {
    const Grid a(1, 8, 8), b(1, 8, 9), c(2, 8, 8);
    CHECK_THROWS_AS(lucas_kanade(a, b, FlowParams{}), ShapeError);
    CHECK_THROWS_AS(lucas_kanade(c, c, FlowParams{}), ShapeError);
    CHECK_THROWS_AS(gradients(a, b, FlowParams{}), ShapeError);
    Grid n(1, 8, 8);
    n.at(0, 3, 3) = std::nanf("");
    CHECK_THROWS_AS(lucas_kanade(n, a, FlowParams{}), NumericError);
    FlowParams bad;
    bad.window_radius = 0;
    CHECK_THROWS_AS(lucas_kanade(a, a, bad), ValidationError);
    bad = FlowParams{};
    bad.regularization = -1.0;
    CHECK_THROWS_AS(lucas_kanade(a, a, bad), ValidationError);
}

TEST_CASE("gaussian_blur preserves constants and is the identity at sigma 0") {
    const Grid c(1, 6, 6, 0.7f);
    const Grid blurred = gaussian_blur(c, 1.5);
    for (float v : blurred.data()) CHECK(v == doctest::Approx(0.7));
    const Grid r = motionood::testing::random_grid(1, 6, 6, 4);
    CHECK(gaussian_blur(r, 0.0) == r);
}
