#include "motionood/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "motionood/errors.hpp"

namespace motionood {

void DetectorConfig::validate() const {
    if (window < 1) throw ValidationError("detector: window must be >= 1");
    if (consecutive < 1) throw ValidationError("detector: consecutive must be >= 1");
    if (quadrature_nodes < 8) throw ValidationError("detector: quadrature_nodes must be >= 8");
    if (std::isnan(log_threshold)) throw ValidationError("detector: threshold is NaN");
}

double p_value(const CalibrationSet& cal, double alpha) {
    if (cal.scores.empty()) throw ValidationError("p_value: empty calibration set");
    if (!std::isfinite(alpha)) throw NumericError("p_value: non-finite nonconformity score");
    const auto first_ge = std::lower_bound(cal.scores.begin(), cal.scores.end(), alpha);
    const auto at_least = static_cast<double>(cal.scores.end() - first_ge);
    return (at_least + 1.0) / (static_cast<double>(cal.size()) + 1.0);
}

namespace {

struct UnitRule {
    std::vector<double> nodes;        // in (0, 1)
    std::vector<double> log_weights;  // ln of weights on (0, 1)
};

// Gauss-Legendre nodes on [-1, 1] by Newton iteration on P_n, mapped to (0, 1).
UnitRule make_rule(std::size_t n) {
    UnitRule r;
    r.nodes.resize(n);
    r.log_weights.resize(n);
    const auto nd = static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
        double dp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0;
            double p1 = x;
            for (std::size_t j = 2; j <= n; ++j) {
                const auto jd = static_cast<double>(j);
                const double p2 = ((2.0 * jd - 1.0) * x * p1 - (jd - 1.0) * p0) / jd;
                p0 = p1;
                p1 = p2;
            }
            dp = nd * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) break;
        }
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        r.nodes[i] = 0.5 * (x + 1.0);
        r.log_weights[i] = std::log(0.5 * w);
    }
    return r;
}

const UnitRule& rule_for(std::size_t n, UnitRule& scratch) {
    static const UnitRule kDefault = make_rule(64);
    if (n == 64) return kDefault;
    scratch = make_rule(n);
    return scratch;
}

}  // namespace

double log_mixture_martingale(std::span<const double> p_window, std::size_t nodes) {
    if (p_window.empty()) throw ValidationError("martingale: empty p-value window");
    if (nodes < 2) throw ValidationError("martingale: need at least 2 quadrature nodes");
    double log_p_sum = 0.0;
    for (double p : p_window) {
        if (!(p > 0.0 && p <= 1.0)) {
            throw ValidationError("martingale: p-value " + std::to_string(p) + " outside (0, 1]");
        }
        log_p_sum += std::log(p);
    }
    const auto k = static_cast<double>(p_window.size());

    UnitRule scratch;
    const UnitRule& rule = rule_for(nodes, scratch);
    std::vector<double> terms(rule.nodes.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < terms.size(); ++j) {
        const double eps = rule.nodes[j];
        terms[j] = rule.log_weights[j] + k * std::log(eps) + (eps - 1.0) * log_p_sum;
        peak = std::max(peak, terms[j]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - peak);
    return peak + std::log(acc);
}

StepOutcome step(const DetectorState& state, double alpha, const CalibrationSet& cal, const DetectorConfig& cfg) {
    cfg.validate();
    StepOutcome out{state, p_value(cal, alpha), std::nullopt};
    DetectorState& s = out.state;
    s.p_window.push_back(out.p);
    while (s.p_window.size() > cfg.window) s.p_window.pop_front();
    const std::vector<double> window(s.p_window.begin(), s.p_window.end());
    s.log_m = log_mixture_martingale(window, cfg.quadrature_nodes);
    if (s.log_m > cfg.log_threshold) {
        ++s.exceed_count;
        s.run_peak = std::max(s.run_peak, s.log_m);
    } else {
        s.exceed_count = 0;
        s.run_peak = -std::numeric_limits<double>::infinity();
    }
    if (s.exceed_count == cfg.consecutive) {
        out.event = DetectionEvent{"", s.frame_index + 1 - cfg.consecutive, s.run_peak};
    }
    ++s.frame_index;
    return out;
}

double EpisodeDetection::peak_log_m() const {
    double peak = -std::numeric_limits<double>::infinity();
    for (const auto& c : curve) peak = std::max(peak, c.log_m);
    return peak;
}

PairScore score_pair(const Grid& frame_a, const Grid& frame_b, const VaeWeights& weights,
                     const FlowParams& flow_params) {
    PairScore s;
    s.flow = lucas_kanade(frame_a, frame_b, flow_params);
    s.input = preprocess(s.flow, weights.arch);
    s.encoded = encode(weights, s.input);
    s.alpha = kl_score(s.encoded.posterior);
    return s;
}

namespace {

// Keeps the peak of the most recent event current while its run continues.
class RunTracker {
public:
    void observe(std::vector<DetectionEvent>& events, std::size_t exceed_count, double log_m, bool fired) {
        if (exceed_count == 0) {
            active_ = false;
            return;
        }
        if (fired) active_ = true;
        if (active_ && !events.empty()) events.back().peak_log_m = std::max(events.back().peak_log_m, log_m);
    }

private:
    bool active_ = false;
};

}  // namespace

EpisodeDetection detect_episode(std::span<const Grid> frames, const VaeWeights& weights, const CalibrationSet& cal,
                                const DetectorConfig& cfg, const FlowParams& flow_params,
                                const std::string& episode_id) {
    if (frames.size() < 2) throw ValidationError("detect_episode: at least 2 frames required");
    cfg.validate();
    cal.validate();
    EpisodeDetection det;
    DetectorState state;
    state.frame_index = 1;
    RunTracker tracker;
    for (std::size_t t = 1; t < frames.size(); ++t) {
        const double alpha = score_pair(frames[t - 1], frames[t], weights, flow_params).alpha;
        StepOutcome o = step(state, alpha, cal, cfg);
        state = std::move(o.state);
        det.curve.push_back({t, alpha, o.p, state.log_m, state.exceed_count});
        const bool fired = o.event.has_value();
        if (fired) {
            o.event->episode_id = episode_id;
            det.events.push_back(*o.event);
        }
        tracker.observe(det.events, state.exceed_count, state.log_m, fired);
    }
    return det;
}

std::vector<DetectionEvent> events_from_curve(std::span<const CurvePoint> curve, double log_threshold,
                                              std::size_t consecutive, const std::string& episode_id) {
    if (consecutive < 1) throw ValidationError("events_from_curve: consecutive must be >= 1");
    std::vector<DetectionEvent> events;
    RunTracker tracker;
    std::size_t count = 0;
    double peak = -std::numeric_limits<double>::infinity();
    for (const CurvePoint& c : curve) {
        if (c.log_m > log_threshold) {
            ++count;
            peak = std::max(peak, c.log_m);
        } else {
            count = 0;
            peak = -std::numeric_limits<double>::infinity();
        }
        const bool fired = count == consecutive;
        if (fired) events.push_back({episode_id, c.frame + 1 - consecutive, peak});
        tracker.observe(events, count, c.log_m, fired);
    }
    return events;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    os.precision(17);
    os << "frame,alpha,p,log_m,exceed_count\n";
    for (const auto& c : curve) {
        os << c.frame << ',' << c.alpha << ',' << c.p << ',' << c.log_m << ',' << c.exceed_count << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

void write_events_jsonl(const std::filesystem::path& path, std::span<const DetectionEvent> events) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    for (const auto& e : events) {
        nlohmann::json j;
        j["episode"] = e.episode_id;
        j["onset_frame"] = e.onset_frame;
        j["peak_log_m"] = e.peak_log_m;
        os << j.dump() << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace motionood
