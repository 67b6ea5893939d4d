#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "motionood/grid.hpp"
#include "motionood/grid_io.hpp"

namespace motionood {

/// Desk-scale scene: a periodic sinusoid texture advected across the frame
/// with toroidal wrap.
struct SceneConfig {
    std::size_t size = 64;
    std::size_t episode_length = 60;
    std::size_t texture_waves = 12;
    std::array<double, 2> base_velocity{1.0, 0.0};  // px/frame (x, y)
    double velocity_jitter = 0.05;                   // per-frame std of each velocity component
    std::uint64_t seed = 0;

    void validate() const;
};

enum class AnomalyKind { IntruderCut, VelocityReversal, SpeedSpike };
enum class Quadrant { NE, NW, SW, SE };  // image y grows downwards, so NE is top-right

std::string_view to_string(AnomalyKind kind);
std::string_view to_string(Quadrant q);

struct AnomalySpec {
    AnomalyKind kind = AnomalyKind::IntruderCut;
    std::size_t onset = 30;
    double magnitude = 3.0;
    Quadrant region = Quadrant::NE;  // intruder only

    void validate(const SceneConfig& cfg) const;
};

/// Half-open pixel box [x0, x1) x [y0, y1).
struct PixelBox {
    std::size_t x0, y0, x1, y1;

    bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

PixelBox quadrant_box(Quadrant q, std::size_t size);
/// The size/4 square, centred in the quadrant, occupied by an intruder.
PixelBox intruder_box(Quadrant q, std::size_t size);

struct Episode {
    std::string id;
    std::vector<Grid> frames;
    EpisodeLabel label = EpisodeLabel::InDistribution;
    std::optional<AnomalySpec> anomaly;
};

/// Sum of seeded random sinusoids with integer wave vectors of length 3..6
/// cycles per frame (so the texture tiles the torus), min-max normalized to
/// [0, 1]. Zero waves give a constant
/// 0.5 field.
Grid gen_texture(std::size_t size, std::size_t waves, std::uint64_t seed);
inline Grid gen_texture(const SceneConfig& cfg) { return gen_texture(cfg.size, cfg.texture_waves, cfg.seed); }

/// Bilinear sample of a C=1 grid at (x, y) with toroidal wrap.
float sample_wrapped(const Grid& texture, double x, double y);

/// Frame t shows the texture translated by the accumulated per-frame
/// velocity base_velocity + N(0, jitter^2).
Episode gen_id_episode(const SceneConfig& cfg);

/// Identical to gen_id_episode(cfg) before spec.onset. From the onset on:
///  - IntruderCut: a textured size/4 square appears centred in spec.region
///    and its content moves at -magnitude * base_velocity;
///  - VelocityReversal: global velocity becomes -magnitude * base_velocity;
///  - SpeedSpike: global velocity becomes (1 + magnitude) * base_velocity.
/// Per-frame jitter is unchanged.
Episode gen_ood_episode(const SceneConfig& cfg, const AnomalySpec& spec);

struct BenchmarkMagnitudes {
    double intruder_cut = 3.0;
    double velocity_reversal = 1.0;
    double speed_spike = 1.5;
};

/// Writes n_id ID and n_ood OOD episodes under out_dir as
/// <out_dir>/<episode>/frame_%04d.pgm plus manifest.json, and an index.json
/// listing every manifest. Anomaly kinds cycle intruder, reversal, spike;
/// onsets are uniform on [length/4, 2*length/3] ([15, 40] for 60 frames).
std::vector<EpisodeManifest> gen_benchmark(const SceneConfig& cfg, std::size_t n_id, std::size_t n_ood,
                                           std::uint64_t seed, const std::filesystem::path& out_dir,
                                           const BenchmarkMagnitudes& magnitudes = {});

/// Onset range used by gen_benchmark for an episode length.
std::pair<std::size_t, std::size_t> benchmark_onset_range(std::size_t episode_length);

/// Manifest paths listed in <root>/index.json.
std::vector<std::filesystem::path> read_corpus_index_paths(const std::filesystem::path& root);

/// Reads <root>/index.json and every manifest it lists.
std::vector<EpisodeManifest> read_corpus_index(const std::filesystem::path& root);

}  // namespace motionood
