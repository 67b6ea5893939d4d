#include "motionood/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "motionood/errors.hpp"

namespace motionood {

namespace fs = std::filesystem;

void SceneConfig::validate() const {
    if (episode_length < 2) throw ValidationError("scene: episode_length must be >= 2");
    if (size < 16) throw ValidationError("scene: size must be >= 16");
    if (!(velocity_jitter >= 0.0)) throw ValidationError("scene: velocity_jitter must be >= 0");
    if (!std::isfinite(base_velocity[0]) || !std::isfinite(base_velocity[1])) {
        throw ValidationError("scene: base_velocity must be finite");
    }
}

std::string_view to_string(AnomalyKind kind) {
    switch (kind) {
        case AnomalyKind::IntruderCut: return "intruder_cut";
        case AnomalyKind::VelocityReversal: return "velocity_reversal";
        case AnomalyKind::SpeedSpike: return "speed_spike";
    }
    return "unknown";
}

std::string_view to_string(Quadrant q) {
    switch (q) {
        case Quadrant::NE: return "NE";
        case Quadrant::NW: return "NW";
        case Quadrant::SW: return "SW";
        case Quadrant::SE: return "SE";
    }
    return "unknown";
}

void AnomalySpec::validate(const SceneConfig& cfg) const {
    if (!(onset > 0 && onset + 5 < cfg.episode_length)) {
        throw ValidationError("anomaly: onset must satisfy 0 < onset < episode_length - 5");
    }
    if (!(magnitude > 0.0 && std::isfinite(magnitude))) throw ValidationError("anomaly: magnitude must be positive");
}

PixelBox quadrant_box(Quadrant q, std::size_t size) {
    const std::size_t h = size / 2;
    switch (q) {
        case Quadrant::NE: return {h, 0, size, h};
        case Quadrant::NW: return {0, 0, h, h};
        case Quadrant::SW: return {0, h, h, size};
        case Quadrant::SE: return {h, h, size, size};
    }
    return {0, 0, 0, 0};
}

PixelBox intruder_box(Quadrant q, std::size_t size) {
    const PixelBox quad = quadrant_box(q, size);
    const std::size_t side = size / 4;
    const std::size_t x0 = quad.x0 + (quad.x1 - quad.x0 - side) / 2;
    const std::size_t y0 = quad.y0 + (quad.y1 - quad.y0 - side) / 2;
    return {x0, y0, x0 + side, y0 + side};
}

namespace {

// Wave-vector length band, in cycles across the frame.
constexpr int kMinWaveNumber = 3;
constexpr int kMaxWaveNumber = 6;

}  // namespace

Grid gen_texture(std::size_t size, std::size_t waves, std::uint64_t seed) {
    if (size == 0) throw ValidationError("texture: size must be positive");
    Grid tex(1, size, size, 0.5f);
    if (waves == 0) return tex;

    struct Wave {
        int kx, ky;
        double amplitude, phase;
    };
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> freq(-kMaxWaveNumber, kMaxWaveNumber);
    std::uniform_real_distribution<double> amp(0.5, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::vector<Wave> ws;
    while (ws.size() < waves) {
        const int kx = freq(rng);
        const int ky = freq(rng);
        const int k2 = kx * kx + ky * ky;
        if (k2 < kMinWaveNumber * kMinWaveNumber || k2 > kMaxWaveNumber * kMaxWaveNumber) continue;
        ws.push_back({kx, ky, amp(rng), phase(rng)});
    }
    std::vector<double> v(size * size, 0.0);
    const double w0 = 2.0 * std::numbers::pi / static_cast<double>(size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double s = 0.0;
            for (const Wave& w : ws) {
                s += w.amplitude * std::sin(w0 * (w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y)) + w.phase);
            }
            v[y * size + x] = s;
        }
    }
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double range = *hi - *lo;
    if (range <= 0.0) return tex;
    for (std::size_t i = 0; i < v.size(); ++i) tex.data()[i] = static_cast<float>((v[i] - *lo) / range);
    return tex;
}

float sample_wrapped(const Grid& texture, double x, double y) {
    const auto w = static_cast<double>(texture.width());
    const auto h = static_cast<double>(texture.height());
    x = std::fmod(x, w);
    if (x < 0.0) x += w;
    y = std::fmod(y, h);
    if (y < 0.0) y += h;
    const double fx = std::floor(x);
    const double fy = std::floor(y);
    const double ax = x - fx;
    const double ay = y - fy;
    const auto x0 = static_cast<std::size_t>(fx) % texture.width();
    const auto y0 = static_cast<std::size_t>(fy) % texture.height();
    const std::size_t x1 = (x0 + 1) % texture.width();
    const std::size_t y1 = (y0 + 1) % texture.height();
    const double top = texture.at(0, y0, x0) * (1.0 - ax) + texture.at(0, y0, x1) * ax;
    const double bot = texture.at(0, y1, x0) * (1.0 - ax) + texture.at(0, y1, x1) * ax;
    return static_cast<float>(top * (1.0 - ay) + bot * ay);
}

namespace {

using Vec2 = std::array<double, 2>;

// Seed of the intruder's own texture, derived from the scene seed.
constexpr std::uint64_t kIntruderSeedSalt = 0x9e3779b97f4a7c15ULL;

std::vector<Vec2> draw_jitter(const SceneConfig& cfg) {
    std::mt19937_64 rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Vec2> j(cfg.episode_length, Vec2{0.0, 0.0});
    for (std::size_t t = 1; t < cfg.episode_length; ++t) {
        const double jx = normal(rng);
        const double jy = normal(rng);
        j[t] = {cfg.velocity_jitter * jx, cfg.velocity_jitter * jy};
    }
    return j;
}

Grid render_frame(const Grid& texture, Vec2 offset, std::size_t size) {
    Grid f(1, size, size);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            f.at(0, y, x) = sample_wrapped(texture, static_cast<double>(x) - offset[0], static_cast<double>(y) - offset[1]);
        }
    }
    return f;
}

Vec2 velocity_at(const SceneConfig& cfg, const std::optional<AnomalySpec>& spec, std::size_t t) {
    const Vec2& b = cfg.base_velocity;
    if (!spec || t < spec->onset) return b;
    switch (spec->kind) {
        case AnomalyKind::VelocityReversal: return {-spec->magnitude * b[0], -spec->magnitude * b[1]};
        case AnomalyKind::SpeedSpike: return {(1.0 + spec->magnitude) * b[0], (1.0 + spec->magnitude) * b[1]};
        case AnomalyKind::IntruderCut: return b;
    }
    return b;
}

Episode generate(const SceneConfig& cfg, const std::optional<AnomalySpec>& spec) {
    cfg.validate();
    if (spec) spec->validate(cfg);
    const Grid texture = gen_texture(cfg);
    const auto jitter = draw_jitter(cfg);

    Episode ep;
    ep.label = spec ? EpisodeLabel::OutOfDistribution : EpisodeLabel::InDistribution;
    ep.anomaly = spec;

    Grid intruder_tex;
    PixelBox box{};
    if (spec && spec->kind == AnomalyKind::IntruderCut) {
        intruder_tex = gen_texture(cfg.size, cfg.texture_waves, cfg.seed ^ kIntruderSeedSalt);
        box = intruder_box(spec->region, cfg.size);
    }

    Vec2 pos{0.0, 0.0};
    for (std::size_t t = 0; t < cfg.episode_length; ++t) {
        if (t > 0) {
            const Vec2 v = velocity_at(cfg, spec, t);
            pos[0] += v[0] + jitter[t][0];
            pos[1] += v[1] + jitter[t][1];
        }
        Grid frame = render_frame(texture, pos, cfg.size);
        if (spec && spec->kind == AnomalyKind::IntruderCut && t >= spec->onset) {
            const double travel = spec->magnitude * static_cast<double>(t - spec->onset);
            const Vec2 q{-travel * cfg.base_velocity[0], -travel * cfg.base_velocity[1]};
            for (std::size_t y = box.y0; y < box.y1; ++y) {
                for (std::size_t x = box.x0; x < box.x1; ++x) {
                    frame.at(0, y, x) =
                        sample_wrapped(intruder_tex, static_cast<double>(x) - q[0], static_cast<double>(y) - q[1]);
                }
            }
        }
        ep.frames.push_back(std::move(frame));
    }
    return ep;
}

std::string frame_name(std::size_t t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", t);
    return buf;
}

std::string episode_name(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
    return buf;
}

EpisodeManifest write_episode(const fs::path& root, const Episode& ep) {
    const fs::path dir = root / ep.id;
    fs::create_directories(dir);
    EpisodeManifest m;
    m.id = ep.id;
    m.label = ep.label;
    if (ep.anomaly) m.onset_frame = ep.anomaly->onset;
    for (std::size_t t = 0; t < ep.frames.size(); ++t) {
        const fs::path p = dir / frame_name(t);
        write_pgm(p, ep.frames[t]);
        m.frame_paths.push_back(p);
    }
    write_manifest(dir / "manifest.json", m);
    return m;
}

}  // namespace

Episode gen_id_episode(const SceneConfig& cfg) {
    return generate(cfg, std::nullopt);
}

Episode gen_ood_episode(const SceneConfig& cfg, const AnomalySpec& spec) {
    return generate(cfg, spec);
}

std::pair<std::size_t, std::size_t> benchmark_onset_range(std::size_t episode_length) {
    if (episode_length < 8) throw ValidationError("benchmark: episode_length must be >= 8 for OOD episodes");
    const std::size_t hi = std::min(2 * episode_length / 3, episode_length - 6);
    const std::size_t lo = std::clamp<std::size_t>(episode_length / 4, 1, hi);
    return {lo, hi};
}

std::vector<EpisodeManifest> gen_benchmark(const SceneConfig& cfg, std::size_t n_id, std::size_t n_ood,
                                           std::uint64_t seed, const fs::path& out_dir,
                                           const BenchmarkMagnitudes& magnitudes) {
    if (n_id < 1 || n_ood < 1) throw ValidationError("benchmark: n_id and n_ood must be >= 1");
    cfg.validate();
    const auto [onset_lo, onset_hi] = benchmark_onset_range(cfg.episode_length);

    std::mt19937_64 rng(seed);
    std::vector<std::uint64_t> id_seeds(n_id);
    for (auto& s : id_seeds) s = rng();
    struct OodDraw {
        std::uint64_t seed;
        std::size_t onset;
        Quadrant region;
    };
    std::uniform_int_distribution<std::size_t> onset_dist(onset_lo, onset_hi);
    std::uniform_int_distribution<int> quadrant_dist(0, 3);
    std::vector<OodDraw> ood(n_ood);
    for (auto& d : ood) {
        d.seed = rng();
        d.onset = onset_dist(rng);
        d.region = static_cast<Quadrant>(quadrant_dist(rng));
    }

    try {
        fs::create_directories(out_dir);
    } catch (const fs::filesystem_error& e) {
        throw IoError(std::string("benchmark: ") + e.what());
    }
    std::vector<EpisodeManifest> manifests;
    nlohmann::json index = nlohmann::json::array();
    for (std::size_t i = 0; i < n_id; ++i) {
        SceneConfig c = cfg;
        c.seed = id_seeds[i];
        Episode ep = gen_id_episode(c);
        ep.id = episode_name("id", i);
        manifests.push_back(write_episode(out_dir, ep));
        index.push_back(ep.id + "/manifest.json");
    }
    constexpr AnomalyKind kCycle[] = {AnomalyKind::IntruderCut, AnomalyKind::VelocityReversal, AnomalyKind::SpeedSpike};
    for (std::size_t i = 0; i < n_ood; ++i) {
        SceneConfig c = cfg;
        c.seed = ood[i].seed;
        AnomalySpec spec;
        spec.kind = kCycle[i % 3];
        spec.onset = ood[i].onset;
        spec.region = ood[i].region;
        spec.magnitude = spec.kind == AnomalyKind::IntruderCut       ? magnitudes.intruder_cut
                         : spec.kind == AnomalyKind::VelocityReversal ? magnitudes.velocity_reversal
                                                                      : magnitudes.speed_spike;
        Episode ep = gen_ood_episode(c, spec);
        ep.id = episode_name("ood", i);
        manifests.push_back(write_episode(out_dir, ep));
        index.push_back(ep.id + "/manifest.json");
    }

    nlohmann::json doc;
    doc["episodes"] = std::move(index);
    std::ofstream os(out_dir / "index.json", std::ios::trunc);
    if (!os) throw IoError("cannot create " + (out_dir / "index.json").string());
    os << doc.dump(2) << '\n';
    if (!os) throw IoError("write failed: index.json");
    return manifests;
}

std::vector<fs::path> read_corpus_index_paths(const fs::path& root) {
    const fs::path index_path = root / "index.json";
    std::ifstream is(index_path);
    if (!is) throw IoError("cannot open " + index_path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("corpus index: invalid JSON: " + std::string(e.what()));
    }
    if (!doc.is_object() || !doc.contains("episodes") || !doc["episodes"].is_array()) {
        throw ValidationError("corpus index: expected {\"episodes\": [...]}");
    }
    std::vector<fs::path> out;
    for (const auto& e : doc["episodes"]) {
        if (!e.is_string()) throw ValidationError("corpus index: entries must be strings");
        out.push_back(root / e.get<std::string>());
    }
    return out;
}

std::vector<EpisodeManifest> read_corpus_index(const fs::path& root) {
    std::vector<EpisodeManifest> out;
    for (const auto& p : read_corpus_index_paths(root)) out.push_back(read_manifest(p));
    return out;
}

}  // namespace motionood
