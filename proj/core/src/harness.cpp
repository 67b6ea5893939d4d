#include "motionood/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "motionood/errors.hpp"

namespace motionood {

namespace fs = std::filesystem;

Metrics Metrics::from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn, double threshold) {
    Metrics m;
    m.threshold = threshold;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    auto ratio = [](std::size_t num, std::size_t den) {
        return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
    };
    m.tpr = ratio(tp, tp + fn);
    m.fpr = ratio(fp, fp + tn);
    m.degenerate_f1 = 2 * tp + fp + fn == 0;
    m.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    m.accuracy = ratio(tp + tn, m.total());
    return m;
}

std::vector<ScoredEpisode> score_corpus(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                                        const CalibrationSet& cal, const DetectorConfig& cfg,
                                        const FlowParams& flow_params, std::vector<std::string>* skipped) {
    std::vector<ScoredEpisode> out;
    out.reserve(corpus.size());
    for (const EpisodeManifest& m : corpus) {
        std::vector<Grid> frames;
        try {
            frames = load_frames(m);
        } catch (const IoError& e) {
            std::cerr << "warning: skipping episode " << m.id << ": " << e.what() << '\n';
            if (skipped) skipped->push_back(m.id);
            continue;
        } catch (const ValidationError& e) {
            std::cerr << "warning: skipping episode " << m.id << ": " << e.what() << '\n';
            if (skipped) skipped->push_back(m.id);
            continue;
        }
        EpisodeDetection det = detect_episode(frames, weights, cal, cfg, flow_params, m.id);
        out.push_back({m.id, m.label, m.onset_frame, std::move(det.curve)});
    }
    return out;
}

EvaluationReport evaluate_scored(std::span<const ScoredEpisode> scored, double log_threshold,
                                 std::size_t consecutive) {
    EvaluationReport report;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const ScoredEpisode& s : scored) {
        EpisodeRecord r;
        r.id = s.id;
        r.label = s.label;
        r.onset_frame = s.onset_frame;
        r.events = events_from_curve(s.curve, log_threshold, consecutive, s.id);
        r.detected = !r.events.empty();
        r.peak_log_m = -std::numeric_limits<double>::infinity();
        for (const auto& c : s.curve) r.peak_log_m = std::max(r.peak_log_m, c.log_m);
        if (r.detected && s.onset_frame) {
            r.onset_error = static_cast<long long>(r.events.front().onset_frame) -
                            static_cast<long long>(*s.onset_frame);
        }
        const bool ood = s.label == EpisodeLabel::OutOfDistribution;
        if (ood && r.detected) ++tp;
        if (ood && !r.detected) ++fn;
        if (!ood && r.detected) ++fp;
        if (!ood && !r.detected) ++tn;
        report.records.push_back(std::move(r));
    }
    report.metrics = Metrics::from_counts(tp, fp, tn, fn, log_threshold);
    return report;
}

EvaluationReport evaluate(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                          const CalibrationSet& cal, const DetectorConfig& cfg, const FlowParams& flow_params,
                          const std::optional<fs::path>& curve_dir) {
    if (corpus.empty()) throw ValidationError("evaluate: empty corpus");
    std::vector<std::string> skipped;
    const auto scored = score_corpus(corpus, weights, cal, cfg, flow_params, &skipped);
    EvaluationReport report = evaluate_scored(scored, cfg.log_threshold, cfg.consecutive);
    report.skipped = std::move(skipped);
    if (curve_dir) {
        fs::create_directories(*curve_dir);
        for (std::size_t i = 0; i < scored.size(); ++i) {
            const fs::path p = *curve_dir / (scored[i].id + ".csv");
            write_curve_csv(p, scored[i].curve);
            report.records[i].curve_path = p;
        }
    }
    return report;
}

GridSearchResult grid_search(std::span<const ScoredEpisode> scored, std::span<const double> thresholds,
                             std::size_t consecutive) {
    if (thresholds.empty()) throw ValidationError("grid_search: no thresholds");
    GridSearchResult result;
    result.curves_computed = 0;
    const Metrics* best = nullptr;
    for (double t : thresholds) {
        result.table.push_back(evaluate_scored(scored, t, consecutive).metrics);
    }
    for (const Metrics& m : result.table) {
        if (!best || m.f1 > best->f1 || (m.f1 == best->f1 && m.fpr < best->fpr) ||
            (m.f1 == best->f1 && m.fpr == best->fpr && m.threshold < best->threshold)) {
            best = &m;
        }
    }
    result.best_threshold = best->threshold;
    return result;
}

GridSearchResult grid_search(std::span<const EpisodeManifest> corpus, const VaeWeights& weights,
                             const CalibrationSet& cal, std::span<const double> thresholds, const DetectorConfig& cfg,
                             const FlowParams& flow_params) {
    if (thresholds.empty()) throw ValidationError("grid_search: no thresholds");
    const auto scored = score_corpus(corpus, weights, cal, cfg, flow_params);
    GridSearchResult r = grid_search(scored, thresholds, cfg.consecutive);
    r.curves_computed = scored.size();
    return r;
}

LatencyReport measure_latency(std::span<const Grid> frames, const VaeWeights& weights, const CalibrationSet& cal,
                              const DetectorConfig& cfg, const FlowParams& flow_params, std::size_t warmup,
                              std::size_t reps) {
    if (frames.size() < 2) throw ValidationError("measure_latency: at least 2 frames required");
    if (warmup < 1) throw ValidationError("measure_latency: warmup must be >= 1");
    if (reps < 10) throw ValidationError("measure_latency: reps must be >= 10");
    cfg.validate();
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };

    DetectorState state;
    std::vector<double> totals;
    double flow_sum = 0.0, encode_sum = 0.0, conformal_sum = 0.0;
    const std::size_t pairs = frames.size() - 1;
    for (std::size_t i = 0; i < warmup + reps; ++i) {
        const std::size_t t = 1 + i % pairs;
        const auto t0 = clock::now();
        const Grid flow = lucas_kanade(frames[t - 1], frames[t], flow_params);
        const auto t1 = clock::now();
        const double alpha = kl_score(encode(weights, preprocess(flow, weights.arch)).posterior);
        const auto t2 = clock::now();
        state = step(state, alpha, cal, cfg).state;
        const auto t3 = clock::now();
        if (i < warmup) continue;
        totals.push_back(ms(t3 - t0));
        flow_sum += ms(t1 - t0);
        encode_sum += ms(t2 - t1);
        conformal_sum += ms(t3 - t2);
    }
    LatencyReport r;
    r.reps = reps;
    const auto n = static_cast<double>(reps);
    r.mean_ms = std::accumulate(totals.begin(), totals.end(), 0.0) / n;
    r.flow_ms = flow_sum / n;
    r.encode_ms = encode_sum / n;
    r.conformal_ms = conformal_sum / n;
    std::sort(totals.begin(), totals.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
    r.p95_ms = totals[std::clamp<std::size_t>(rank, 1, totals.size()) - 1];
    return r;
}

std::vector<FlowSample> collect_flow_samples(std::span<const EpisodeManifest> corpus, const VaeArchitecture& arch,
                                             const FlowParams& flow_params, std::size_t pair_stride) {
    if (pair_stride < 1) throw ValidationError("collect_flow_samples: pair_stride must be >= 1");
    std::vector<FlowSample> out;
    for (const EpisodeManifest& m : corpus) {
        if (m.is_ood()) continue;
        const auto frames = load_frames(m);
        for (std::size_t t = pair_stride; t < frames.size(); t += pair_stride) {
            out.push_back({m.id, t, preprocess(lucas_kanade(frames[t - 1], frames[t], flow_params), arch)});
        }
    }
    return out;
}

CorpusSplit split_corpus(std::span<const EpisodeManifest> corpus, double fraction, std::uint64_t seed,
                         std::size_t pair_stride) {
    if (pair_stride < 1) throw ValidationError("split_corpus: pair_stride must be >= 1");
    std::vector<std::string> ids;
    for (const EpisodeManifest& m : corpus) {
        if (!m.is_ood()) ids.push_back(m.id);
    }
    auto [train_ids, cal_ids] = split_calibration<std::string>(ids, fraction, seed);
    return {std::move(train_ids), std::move(cal_ids), fraction, seed, pair_stride};
}

std::vector<EpisodeManifest> select_episodes(std::span<const EpisodeManifest> corpus,
                                             std::span<const std::string> ids) {
    std::vector<EpisodeManifest> out;
    for (const std::string& id : ids) {
        const auto it = std::find_if(corpus.begin(), corpus.end(), [&](const auto& m) { return m.id == id; });
        if (it == corpus.end()) throw ValidationError("episode '" + id + "' is not in the corpus");
    }
    for (const EpisodeManifest& m : corpus) {
        if (std::find(ids.begin(), ids.end(), m.id) != ids.end()) out.push_back(m);
    }
    return out;
}

void save_split(const fs::path& path, const CorpusSplit& split) {
    nlohmann::ordered_json j;
    j["seed"] = split.seed;
    j["fraction"] = split.fraction;
    j["pair_stride"] = split.pair_stride;
    j["train_episodes"] = split.train_episodes;
    j["calibration_episodes"] = split.calibration_episodes;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

CorpusSplit load_split(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        const auto j = nlohmann::json::parse(is);
        CorpusSplit s;
        s.seed = j.at("seed").get<std::uint64_t>();
        s.fraction = j.at("fraction").get<double>();
        s.pair_stride = j.at("pair_stride").get<std::size_t>();
        s.train_episodes = j.at("train_episodes").get<std::vector<std::string>>();
        s.calibration_episodes = j.at("calibration_episodes").get<std::vector<std::string>>();
        if (s.pair_stride < 1) throw FormatError("pair_stride must be >= 1");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("split file " + path.string() + ": " + e.what());
    }
}

CalibrationBundle build_calibration_bundle(const VaeWeights& weights, std::span<const Grid> cal_flows) {
    if (cal_flows.size() < 2) throw ValidationError("calibration needs at least 2 held-out flows");
    CalibrationBundle b;
    std::vector<Grid> acts;
    for (const Grid& f : cal_flows) {
        EncodeOutput e = encode(weights, f);
        b.set.scores.push_back(kl_score(e.posterior));
        acts.push_back(std::move(e.last_conv_activations));
    }
    std::sort(b.set.scores.begin(), b.set.scores.end());
    b.stats = activation_stats_from(acts);
    return b;
}

void save_calibration(const fs::path& path, const CalibrationBundle& bundle) {
    bundle.set.validate();
    bundle.stats.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    detail::write_magic(os, "MCAL");
    detail::write_u32(os, kCalibrationVersion);
    detail::write_u32(os, static_cast<std::uint32_t>(bundle.set.size()));
    for (double s : bundle.set.scores) detail::write_f64(os, s);
    detail::write_u32(os, static_cast<std::uint32_t>(bundle.stats.count));
    detail::write_u32(os, static_cast<std::uint32_t>(bundle.stats.mean.channels()));
    detail::write_u32(os, static_cast<std::uint32_t>(bundle.stats.mean.height()));
    detail::write_u32(os, static_cast<std::uint32_t>(bundle.stats.mean.width()));
    detail::write_f32s(os, bundle.stats.mean.data());
    detail::write_f32s(os, bundle.stats.stddev.data());
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

CalibrationBundle load_calibration(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const std::string what = "calibration " + path.string();
    detail::expect_magic(is, "MCAL", what);
    const auto version = detail::read_u32(is, what);
    if (version != kCalibrationVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    CalibrationBundle b;
    const std::size_t l = detail::read_u32(is, what);
    if (l == 0) throw FormatError(what + ": empty calibration set");
    b.set.scores.resize(l);
    for (double& s : b.set.scores) s = detail::read_f64(is, what);
    b.stats.count = detail::read_u32(is, what);
    const std::size_t c = detail::read_u32(is, what);
    const std::size_t h = detail::read_u32(is, what);
    const std::size_t w = detail::read_u32(is, what);
    b.stats.mean = Grid(c, h, w);
    b.stats.stddev = Grid(c, h, w);
    detail::read_f32s(is, b.stats.mean.data(), what);
    detail::read_f32s(is, b.stats.stddev.data(), what);
    if (!detail::at_eof(is)) throw FormatError(what + ": trailing bytes");
    try {
        b.set.validate();
        b.stats.validate();
    } catch (const ValidationError& e) {
        throw FormatError(what + ": " + e.what());
    }
    return b;
}

std::string metrics_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["threshold"] = m.threshold;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["tpr"] = m.tpr;
    j["fpr"] = m.fpr;
    j["f1"] = m.f1;
    j["accuracy"] = m.accuracy;
    j["degenerate_f1"] = m.degenerate_f1;
    return j.dump(2);
}

}  // namespace motionood
