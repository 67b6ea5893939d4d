#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "motionood/grid.hpp"
#include "motionood/opticflow.hpp"
#include "motionood/trainer.hpp"
#include "motionood/vae.hpp"

namespace motionood {

struct DetectorConfig {
    std::size_t window = 10;          // p-values entering the martingale
    double log_threshold = 3.0;       // natural log of the martingale
    std::size_t consecutive = 10;     // frames above threshold before an event fires
    std::size_t quadrature_nodes = 64;

    void validate() const;
};

struct DetectorState {
    std::deque<double> p_window;
    double log_m = -std::numeric_limits<double>::infinity();
    std::size_t exceed_count = 0;
    std::size_t frame_index = 0;  // index assigned to the next observation
    double run_peak = -std::numeric_limits<double>::infinity();
};

struct DetectionEvent {
    std::string episode_id;
    std::size_t onset_frame = 0;  // first frame of the qualifying run
    double peak_log_m = 0.0;
};

/// Conformal p-value with the test point counted once:
/// (#{i : cal_i >= alpha} + 1) / (l + 1). Always in [1/(l+1), 1].
double p_value(const CalibrationSet& cal, double alpha);

/// ln of the mixture martingale  integral_0^1 prod_i eps p_i^(eps-1) d eps
/// = ln integral_0^1 eps^k exp((eps - 1) sum_i ln p_i) d eps, evaluated by
/// Gauss-Legendre quadrature on (0, 1) in the log domain.
double log_mixture_martingale(std::span<const double> p_window, std::size_t nodes = 64);

struct StepOutcome {
    DetectorState state;
    double p = 1.0;
    std::optional<DetectionEvent> event;
};

/// Pushes p_value(cal, alpha) into the sliding window (evicting beyond
/// cfg.window), recomputes log_m, updates the consecutive-exceedance counter
/// and emits an event exactly when the counter reaches cfg.consecutive.
StepOutcome step(const DetectorState& state, double alpha, const CalibrationSet& cal, const DetectorConfig& cfg);

struct CurvePoint {
    std::size_t frame = 0;
    double alpha = 0.0;
    double p = 1.0;
    double log_m = 0.0;
    std::size_t exceed_count = 0;
};

struct EpisodeDetection {
    std::vector<DetectionEvent> events;
    std::vector<CurvePoint> curve;

    double peak_log_m() const;
};

/// Intermediate products of scoring one frame pair.
struct PairScore {
    Grid flow;
    Grid input;  // preprocessed network input
    EncodeOutput encoded;
    double alpha = 0.0;
};

PairScore score_pair(const Grid& frame_a, const Grid& frame_b, const VaeWeights& weights,
                     const FlowParams& flow_params);

/// Runs flow -> preprocess -> encode -> kl_score -> step over every
/// consecutive frame pair. Curve point t belongs to the pair (t-1, t), so
/// frames are numbered like the episode's frames, starting at 1. An event's
/// peak covers its whole sustained run.
EpisodeDetection detect_episode(std::span<const Grid> frames, const VaeWeights& weights, const CalibrationSet& cal,
                                const DetectorConfig& cfg, const FlowParams& flow_params,
                                const std::string& episode_id = "");

/// Re-applies the exceedance rule to an existing curve with a different
/// threshold / persistence. Matches detect_episode's events for the same
/// settings.
std::vector<DetectionEvent> events_from_curve(std::span<const CurvePoint> curve, double log_threshold,
                                              std::size_t consecutive, const std::string& episode_id = "");

/// CSV: frame,alpha,p,log_m,exceed_count
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);

/// One JSON object per line: {"episode", "onset_frame", "peak_log_m"}.
void write_events_jsonl(const std::filesystem::path& path, std::span<const DetectionEvent> events);

}  // namespace motionood
