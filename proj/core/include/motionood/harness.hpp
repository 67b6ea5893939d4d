#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "motionood/conformal.hpp"
#include "motionood/grid_io.hpp"
#include "motionood/localization.hpp"
#include "motionood/opticflow.hpp"
#include "motionood/trainer.hpp"
#include "motionood/vae.hpp"

namespace motionood {

/// Episode-level confusion counts and the rates derived from them.
struct Metrics {
    double threshold = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    double tpr = 0.0, fpr = 0.0, f1 = 0.0, accuracy = 0.0;
    bool degenerate_f1 = false;  // 2tp + fp + fn == 0, f1 reported as 0

    static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn, double threshold);
    std::size_t total() const { return tp + fp + tn + fn; }
};

/// One corpus episode after its martingale curve has been computed.
struct ScoredEpisode {
    std::string id;
    EpisodeLabel label = EpisodeLabel::InDistribution;
    std::optional<std::size_t> onset_frame;
    std::vector<CurvePoint> curve;
};

struct EpisodeRecord {
    std::string id;
    EpisodeLabel label = EpisodeLabel::InDistribution;
    std::optional<std::size_t> onset_frame;
    std::vector<DetectionEvent> events;
    double peak_log_m = 0.0;
    bool detected = false;
    std::optional<long long> onset_error;  // first event onset - ground-truth onset (OOD only)
    std::optional<std::filesystem::path> curve_path;
};

struct EvaluationReport {
    Metrics metrics;
    std::vector<EpisodeRecord> records;
    std::vector<std::string> skipped;  // episodes that could not be read
};

/// Computes the martingale curve of every readable episode. Episodes whose
/// frames fail to load are reported in `skipped` (with a warning on stderr).
std::vector<ScoredEpisode> score_corpus(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                                        const CalibrationSet& cal, const DetectorConfig& cfg,
                                        const FlowParams& flow_params, std::vector<std::string>* skipped = nullptr);

/// Applies the exceedance rule at `log_threshold` to already scored episodes.
EvaluationReport evaluate_scored(std::span<const ScoredEpisode> scored, double log_threshold,
                                 std::size_t consecutive);

/// Full evaluation: an episode is positive when detect_episode emits at least
/// one event. When curve_dir is set each curve is written there as
/// <episode>.csv.
EvaluationReport evaluate(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                          const CalibrationSet& cal, const DetectorConfig& cfg, const FlowParams& flow_params,
                          const std::optional<std::filesystem::path>& curve_dir = std::nullopt);

struct GridSearchResult {
    double best_threshold = 0.0;
    std::vector<Metrics> table;       // one row per threshold, input order
    std::size_t curves_computed = 0;  // episodes whose curve was computed
};

/// Best = max F1, ties broken by lower FPR then lower threshold.
GridSearchResult grid_search(std::span<const ScoredEpisode> scored, std::span<const double> thresholds,
                             std::size_t consecutive);

GridSearchResult grid_search(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                             const CalibrationSet& cal, std::span<const double> thresholds, const DetectorConfig& cfg,
                             const FlowParams& flow_params);

struct LatencyReport {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
    double flow_ms = 0.0;       // mean
    double encode_ms = 0.0;     // mean of preprocess + encode + kl_score
    double conformal_ms = 0.0;  // mean of p-value + martingale update
    std::size_t reps = 0;
};

/// Wall-clock cost of one per-frame detection decision, cycling over the
/// episode's frame pairs. Warmup decisions are excluded.
LatencyReport measure_latency(std::span<const Grid> frames, const VaeWeights& weights, const CalibrationSet& cal,
                              const DetectorConfig& cfg, const FlowParams& flow_params, std::size_t warmup,
                              std::size_t reps);

/// Preprocessed flow field of one frame pair of a corpus episode.
struct FlowSample {
    std::string episode;
    std::size_t pair = 0;  // flow from frame pair-1 to frame pair
    Grid input;
};

/// Flow samples from the ID episodes of a corpus, taking every
/// `pair_stride`-th frame pair (pairs stride, 2*stride, ...).
std::vector<FlowSample> collect_flow_samples(std::span<const EpisodeManifest> corpus, const VaeArchitecture& arch,
                                             const FlowParams& flow_params, std::size_t pair_stride);

/// Episode-level train/calibration partition of a corpus's ID episodes. Flows
/// of one episode never land on both sides.
struct CorpusSplit {
    std::vector<std::string> train_episodes;
    std::vector<std::string> calibration_episodes;
    double fraction = 0.2;
    std::uint64_t seed = 0;
    std::size_t pair_stride = 10;
};

/// Seeded split_calibration over the corpus's ID episodes (OOD episodes are
/// ignored).
CorpusSplit split_corpus(std::span<const EpisodeManifest> corpus, double fraction, std::uint64_t seed,
                         std::size_t pair_stride);

/// Manifests of `corpus` whose ids are listed, in corpus order. Throws
/// ValidationError when an id is missing.
std::vector<EpisodeManifest> select_episodes(std::span<const EpisodeManifest> corpus,
                                             std::span<const std::string> ids);

// JSON: {"seed", "fraction", "pair_stride", "train_episodes", "calibration_episodes"}
void save_split(const std::filesystem::path& path, const CorpusSplit& split);
CorpusSplit load_split(const std::filesystem::path& path);

/// Everything `calibrate` produces: the sorted scores and the activation
/// statistics used for localization.
struct CalibrationBundle {
    CalibrationSet set;
    ActivationStats stats;
};

// Calibration file: "MCAL", u32 version, u32 l, l x f64 scores (ascending),
// u32 stats count, u32 channels, u32 height, u32 width, mean then std as f32.
inline constexpr std::uint32_t kCalibrationVersion = 1;

CalibrationBundle build_calibration_bundle(const VaeWeights& weights, std::span<const Grid> cal_flows);
void save_calibration(const std::filesystem::path& path, const CalibrationBundle& bundle);
CalibrationBundle load_calibration(const std::filesystem::path& path);

/// Serializes metrics with the keys threshold, tp, fp, tn, fn, tpr, fpr, f1,
/// accuracy, degenerate_f1.
std::string metrics_json(const Metrics& m);

}  // namespace motionood
