#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "motionood/conformal.hpp"
#include "motionood/errors.hpp"
#include "motionood/grid_io.hpp"
#include "motionood/harness.hpp"
#include "motionood/localization.hpp"
#include "motionood/opticflow.hpp"
#include "motionood/synthdata.hpp"
#include "motionood/trainer.hpp"
#include "motionood/vae.hpp"

namespace fs = std::filesystem;
using namespace motionood;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path.string());
}

nlohmann::ordered_json to_json(const Metrics& m) { return nlohmann::ordered_json::parse(metrics_json(m)); }

fs::path split_sidecar(const fs::path& weights) { return fs::path(weights.string() + ".split.json"); }
fs::path log_sidecar(const fs::path& weights) { return fs::path(weights.string() + ".log.csv"); }

/// Reads every manifest listed in the corpus index, skipping unreadable ones.
std::vector<EpisodeManifest> load_corpus(const fs::path& root, std::vector<std::string>* skipped) {
    std::vector<EpisodeManifest> out;
    for (const fs::path& p : read_corpus_index_paths(root)) {
        try {
            out.push_back(read_manifest(p));
        } catch (const IoError& e) {
            if (!skipped) throw;
            std::cerr << "warning: skipping " << p.string() << ": " << e.what() << '\n';
            skipped->push_back(p.string());
        } catch (const ValidationError& e) {
            if (!skipped) throw;
            std::cerr << "warning: skipping " << p.string() << ": " << e.what() << '\n';
            skipped->push_back(p.string());
        }
    }
    return out;
}

std::vector<Grid> flow_inputs(std::span<const EpisodeManifest> episodes, const VaeArchitecture& arch,
                              std::size_t pair_stride) {
    std::vector<Grid> out;
    for (FlowSample& s : collect_flow_samples(episodes, arch, FlowParams{}, pair_stride)) {
        out.push_back(std::move(s.input));
    }
    return out;
}

struct SynthArgs {
    fs::path out;
    std::size_t n_id = 0, n_ood = 0;
    std::uint64_t seed = 0;
    std::size_t size = 64, length = 60;
};

int run_synth(const SynthArgs& a) {
    SceneConfig cfg;
    cfg.size = a.size;
    cfg.episode_length = a.length;
    const auto manifests = gen_benchmark(cfg, a.n_id, a.n_ood, a.seed, a.out);
    std::cout << "wrote " << manifests.size() << " episodes to " << a.out.string() << '\n';
    return 0;
}

struct TrainArgs {
    fs::path corpus, out;
    std::size_t epochs = 30;
    std::uint64_t seed = 7;
    std::size_t latent = 24, input_size = 64;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double beta_kl = 1.0;
    double cal_fraction = 0.2;
    std::size_t pair_stride = 10;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.seed = a.seed;
    cfg.batch_size = a.batch_size;
    cfg.learning_rate = a.learning_rate;
    cfg.beta_kl = a.beta_kl;
    cfg.calibration_fraction = a.cal_fraction;
    cfg.validate();
    VaeArchitecture arch;
    arch.latent_dim = a.latent;
    arch.input_size = a.input_size;
    arch.validate();

    const auto corpus = load_corpus(a.corpus, nullptr);
    const CorpusSplit split = split_corpus(corpus, cfg.calibration_fraction, cfg.seed, a.pair_stride);
    const auto train_eps = select_episodes(corpus, split.train_episodes);
    const auto flows = flow_inputs(train_eps, arch, split.pair_stride);
    if (flows.empty()) throw ValidationError("train: no flow fields in the training episodes");
    std::cerr << "training on " << flows.size() << " flow fields from " << train_eps.size() << " episodes\n";

    const TrainResult result = train(flows, cfg, arch);
    save_weights(a.out, result.weights);
    save_split(split_sidecar(a.out), split);
    result.log.write_csv(log_sidecar(a.out));
    if (!result.log.epochs.empty()) {
        const EpochStats& last = result.log.epochs.back();
        std::cout << "epoch " << last.epoch << " mean loss " << last.mean_total << " (recon " << last.mean_recon
                  << ", kl " << last.mean_kl << ")\n";
    }
    return 0;
}

struct CalibrateArgs {
    fs::path corpus, weights, out;
    std::optional<fs::path> split;
    std::size_t pair_stride = 10;
};

int run_calibrate(const CalibrateArgs& a) {
    const VaeWeights weights = load_weights(a.weights);
    const auto corpus = load_corpus(a.corpus, nullptr);
    std::optional<fs::path> split_path = a.split;
    if (!split_path && fs::exists(split_sidecar(a.weights))) split_path = split_sidecar(a.weights);

    std::vector<EpisodeManifest> cal_eps;
    std::size_t stride = a.pair_stride;
    if (split_path) {
        const CorpusSplit split = load_split(*split_path);
        cal_eps = select_episodes(corpus, split.calibration_episodes);
        stride = split.pair_stride;
    } else {
        for (const EpisodeManifest& m : corpus) {
            if (!m.is_ood()) cal_eps.push_back(m);
        }
    }
    const auto flows = flow_inputs(cal_eps, weights.arch, stride);
    const CalibrationBundle bundle = build_calibration_bundle(weights, flows);
    save_calibration(a.out, bundle);
    std::cout << "calibration set of " << bundle.set.size() << " scores from " << cal_eps.size() << " episodes\n";
    return 0;
}

struct DetectorArgs {
    double threshold = 3.0;
    std::size_t window = 10;
    std::size_t consecutive = 10;

    DetectorConfig config() const {
        DetectorConfig cfg;
        cfg.log_threshold = threshold;
        cfg.window = window;
        cfg.consecutive = consecutive;
        cfg.validate();
        return cfg;
    }
};

struct DetectArgs {
    fs::path episode, weights, cal, out_curve, out_events;
    DetectorArgs detector;
};

int run_detect(const DetectArgs& a) {
    const DetectorConfig cfg = a.detector.config();
    const EpisodeManifest m = read_manifest(a.episode);
    const auto frames = load_frames(m);
    const VaeWeights weights = load_weights(a.weights);
    const CalibrationBundle cal = load_calibration(a.cal);
    const EpisodeDetection det = detect_episode(frames, weights, cal.set, cfg, FlowParams{}, m.id);
    write_curve_csv(a.out_curve, det.curve);
    write_events_jsonl(a.out_events, det.events);
    std::cout << m.id << ": " << det.events.size() << " event(s), peak log M " << det.peak_log_m() << '\n';
    return 0;
}

struct LocalizeArgs {
    fs::path episode, weights, cal, out_overlay, out_composite;
    std::size_t frame = 1;
    float overlay_threshold = 0.5f;
};

int run_localize(const LocalizeArgs& a) {
    const EpisodeManifest m = read_manifest(a.episode);
    const auto frames = load_frames(m);
    if (a.frame < 1 || a.frame >= frames.size()) {
        throw ValidationError("localize: --frame must lie in [1, " + std::to_string(frames.size() - 1) + "]");
    }
    const Grid& frame = frames[a.frame];
    if (frame.height() != frame.width()) throw ShapeError("localize: frames must be square");
    const VaeWeights weights = load_weights(a.weights);
    const CalibrationBundle cal = load_calibration(a.cal);
    const PairScore score = score_pair(frames[a.frame - 1], frame, weights, FlowParams{});
    const Grid map = overlay(score.encoded.last_conv_activations, cal.stats, frame.height());
    write_fgrid(a.out_overlay, map);
    write_ppm(a.out_composite, render(frame, map, a.overlay_threshold));
    return 0;
}

struct EvalArgs {
    fs::path corpus, weights, cal, out;
    std::vector<double> grid;
    std::optional<fs::path> curves_dir;
    DetectorArgs detector;
};

int run_eval(const EvalArgs& a) {
    const DetectorConfig cfg = a.detector.config();
    std::vector<std::string> skipped;
    const auto corpus = load_corpus(a.corpus, &skipped);
    if (corpus.empty()) throw ValidationError("eval: no readable episodes");
    const VaeWeights weights = load_weights(a.weights);
    const CalibrationBundle cal = load_calibration(a.cal);

    const auto scored = score_corpus(corpus, weights, cal.set, cfg, FlowParams{}, &skipped);
    if (a.curves_dir) {
        fs::create_directories(*a.curves_dir);
        for (const ScoredEpisode& s : scored) write_curve_csv(*a.curves_dir / (s.id + ".csv"), s.curve);
    }
    nlohmann::ordered_json j;
    if (a.grid.empty()) {
        j = to_json(evaluate_scored(scored, cfg.log_threshold, cfg.consecutive).metrics);
    } else {
        const GridSearchResult g = grid_search(scored, a.grid, cfg.consecutive);
        const auto best = std::find_if(g.table.begin(), g.table.end(),
                                       [&](const Metrics& m) { return m.threshold == g.best_threshold; });
        j = to_json(*best);
        j["grid"] = nlohmann::ordered_json::array();
        for (const Metrics& m : g.table) j["grid"].push_back(to_json(m));
    }
    j["skipped_episodes"] = skipped;
    write_json(a.out, j);
    std::cout << "threshold " << j["threshold"].get<double>() << ": f1 " << j["f1"].get<double>() << ", fpr "
              << j["fpr"].get<double>() << '\n';
    return 0;
}

struct BenchArgs {
    fs::path episode, weights, cal, out;
    std::size_t reps = 50;
    std::size_t warmup = 5;
    DetectorArgs detector;
};

int run_bench(const BenchArgs& a) {
    const DetectorConfig cfg = a.detector.config();
    const EpisodeManifest m = read_manifest(a.episode);
    const auto frames = load_frames(m);
    const VaeWeights weights = load_weights(a.weights);
    const CalibrationBundle cal = load_calibration(a.cal);
    const LatencyReport r = measure_latency(frames, weights, cal.set, cfg, FlowParams{}, a.warmup, a.reps);
    nlohmann::ordered_json j;
    j["mean_ms"] = r.mean_ms;
    j["p95_ms"] = r.p95_ms;
    j["flow_ms"] = r.flow_ms;
    j["encode_ms"] = r.encode_ms;
    j["conformal_ms"] = r.conformal_ms;
    j["reps"] = r.reps;
    write_json(a.out, j);
    std::cout << "mean " << r.mean_ms << " ms, p95 " << r.p95_ms << " ms\n";
    return 0;
}

void add_detector_options(CLI::App* cmd, DetectorArgs& d) {
    cmd->add_option("--threshold", d.threshold, "Detection threshold on ln M")->capture_default_str();
    cmd->add_option("--window", d.window, "Sliding p-value window")->capture_default_str();
    cmd->add_option("--consecutive", d.consecutive, "Frames above threshold before an event")
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming motion out-of-distribution detector"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic benchmark corpus");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--n-id", synth.n_id, "In-distribution episodes")->required();
    c_synth->add_option("--n-ood", synth.n_ood, "Out-of-distribution episodes")->required();
    c_synth->add_option("--seed", synth.seed, "Corpus seed")->required();
    c_synth->add_option("--size", synth.size, "Frame size in pixels")->capture_default_str();
    c_synth->add_option("--length", synth.length, "Frames per episode")->capture_default_str();

    TrainArgs tr;
    auto* c_train = app.add_subcommand("train", "Train the VAE on a corpus's ID episodes");
    c_train->add_option("--corpus", tr.corpus, "Corpus directory")->required();
    c_train->add_option("--out", tr.out, "Output weights file")->required();
    c_train->add_option("--epochs", tr.epochs, "Training epochs")->required();
    c_train->add_option("--seed", tr.seed, "Training seed")->required();
    c_train->add_option("--latent", tr.latent, "Latent dimension")->capture_default_str();
    c_train->add_option("--input-size", tr.input_size, "Network input size")->capture_default_str();
    c_train->add_option("--batch-size", tr.batch_size)->capture_default_str();
    c_train->add_option("--lr", tr.learning_rate)->capture_default_str();
    c_train->add_option("--beta-kl", tr.beta_kl)->capture_default_str();
    c_train->add_option("--cal-fraction", tr.cal_fraction, "Fraction of ID episodes held out")
        ->capture_default_str();
    c_train->add_option("--pair-stride", tr.pair_stride, "Use every n-th frame pair")->capture_default_str();

    CalibrateArgs cal;
    auto* c_cal = app.add_subcommand("calibrate", "Score held-out ID episodes into a calibration file");
    c_cal->add_option("--corpus", cal.corpus, "Corpus directory")->required();
    c_cal->add_option("--weights", cal.weights, "Weights file")->required();
    c_cal->add_option("--out", cal.out, "Output calibration file")->required();
    c_cal->add_option("--split", cal.split, "Split file (default: <weights>.split.json when present)");
    c_cal->add_option("--pair-stride", cal.pair_stride, "Pair stride when no split file is used")
        ->capture_default_str();

    DetectArgs det;
    auto* c_det = app.add_subcommand("detect", "Run the detector over one episode");
    c_det->add_option("--episode", det.episode, "Episode manifest")->required();
    c_det->add_option("--weights", det.weights)->required();
    c_det->add_option("--cal", det.cal)->required();
    c_det->add_option("--out-curve", det.out_curve, "Curve CSV")->required();
    c_det->add_option("--out-events", det.out_events, "Events JSONL")->required();
    add_detector_options(c_det, det.detector);

    LocalizeArgs loc;
    auto* c_loc = app.add_subcommand("localize", "Overlay map for the flow ending at one frame");
    c_loc->add_option("--episode", loc.episode, "Episode manifest")->required();
    c_loc->add_option("--frame", loc.frame, "Frame index K (flow from K-1 to K)")->required();
    c_loc->add_option("--weights", loc.weights)->required();
    c_loc->add_option("--cal", loc.cal)->required();
    c_loc->add_option("--out-overlay", loc.out_overlay, "Overlay FGRID")->required();
    c_loc->add_option("--out-composite", loc.out_composite, "Composite PPM")->required();
    c_loc->add_option("--overlay-threshold", loc.overlay_threshold)->capture_default_str();

    EvalArgs ev;
    auto* c_eval = app.add_subcommand("eval", "Episode-level evaluation of a corpus");
    c_eval->add_option("--corpus", ev.corpus, "Corpus directory")->required();
    c_eval->add_option("--weights", ev.weights)->required();
    c_eval->add_option("--cal", ev.cal)->required();
    c_eval->add_option("--out", ev.out, "metrics.json")->required();
    c_eval->add_option("--grid", ev.grid, "Comma-separated thresholds to search")->delimiter(',');
    c_eval->add_option("--curves-dir", ev.curves_dir, "Write each episode's curve CSV here");
    add_detector_options(c_eval, ev.detector);

    BenchArgs bench;
    auto* c_bench = app.add_subcommand("bench", "Per-decision latency on one episode");
    c_bench->add_option("--episode", bench.episode, "Episode manifest")->required();
    c_bench->add_option("--weights", bench.weights)->required();
    c_bench->add_option("--cal", bench.cal)->required();
    c_bench->add_option("--reps", bench.reps)->capture_default_str();
    c_bench->add_option("--warmup", bench.warmup)->capture_default_str();
    c_bench->add_option("--out", bench.out, "latency.json")->required();
    add_detector_options(c_bench, bench.detector);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (c_synth->parsed()) return run_synth(synth);
        if (c_train->parsed()) return run_train(tr);
        if (c_cal->parsed()) return run_calibrate(cal);
        if (c_det->parsed()) return run_detect(det);
        if (c_loc->parsed()) return run_localize(loc);
        if (c_eval->parsed()) return run_eval(ev);
        if (c_bench->parsed()) return run_bench(bench);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kExitIo;
    }
    return 1;
}
