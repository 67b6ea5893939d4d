#include "motionood/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "motionood/errors.hpp"
#include "motionood/nn.hpp"

namespace motionood {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
        throw ValidationError("train: calibration_fraction must lie in (0, 1)");
    }
    if (!(learning_rate > 0.0)) throw ValidationError("train: learning_rate must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ValidationError("train: adam betas must lie in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw ValidationError("train: adam epsilon must be positive");
    if (!(beta_kl >= 0.0)) throw ValidationError("train: beta_kl must be >= 0");
}

std::string TrainingLog::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,mean_total,mean_recon,mean_kl\n";
    for (const auto& e : epochs) {
        os << e.epoch << ',' << e.mean_total << ',' << e.mean_recon << ',' << e.mean_kl << '\n';
    }
    return os.str();
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot create " + path.string());
    os << to_csv();
    if (!os) throw IoError("write failed: " + path.string());
}

ElboLoss elbo_loss(const Grid& recon, const Grid& target, const LatentPosterior& posterior, double beta_kl) {
    if (!recon.same_shape(target)) {
        throw ShapeError("elbo_loss: reconstruction " + recon.shape_string() + " vs target " + target.shape_string());
    }
    ElboLoss l;
    const auto r = recon.data();
    const auto t = target.data();
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double d = double(r[i]) - double(t[i]);
        l.recon += d * d;
    }
    l.kl = kl_score(posterior);
    l.total = l.recon + beta_kl * l.kl;
    return l;
}

namespace {

class Adam {
public:
    Adam(const VaeWeights& w, const TrainConfig& cfg) : cfg_(cfg) {
        for (auto t : w.tensors()) {
            m_.emplace_back(t.size(), 0.0f);
            v_.emplace_back(t.size(), 0.0f);
        }
    }

    void step(VaeWeights& w, const VaeWeights& grad) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(t_));
        const auto b1 = static_cast<float>(cfg_.adam_beta1);
        const auto b2 = static_cast<float>(cfg_.adam_beta2);
        const auto lr = static_cast<float>(cfg_.learning_rate / bc1);
        const auto inv_bc2 = static_cast<float>(1.0 / bc2);
        const auto eps = static_cast<float>(cfg_.adam_epsilon);
        auto params = w.tensors();
        auto grads = grad.tensors();
        for (std::size_t k = 0; k < params.size(); ++k) {
            float* p = params[k].data();
            const float* g = grads[k].data();
            float* m = m_[k].data();
            float* v = v_[k].data();
            for (std::size_t i = 0; i < params[k].size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                p[i] -= lr * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
            }
        }
    }

private:
    const TrainConfig& cfg_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::size_t t_ = 0;
};

void check_dataset(std::span<const Grid> dataset, const VaeArchitecture& arch) {
    if (dataset.empty()) throw ValidationError("train: empty dataset");
    for (const Grid& g : dataset) {
        if (g.channels() != arch.input_channels || g.height() != arch.input_size || g.width() != arch.input_size) {
            throw ShapeError("train: sample shape " + g.shape_string() + " does not match the architecture input");
        }
        if (!g.all_finite()) throw NumericError("train: non-finite sample");
    }
}

}  // namespace

TrainResult train(std::span<const Grid> dataset, const TrainConfig& config, VaeWeights initial) {
    config.validate();
    initial.check_shapes();
    check_dataset(dataset, initial.arch);

    TrainResult result{std::move(initial), {}};
    VaeWeights& w = result.weights;
    const std::size_t m = w.arch.latent_dim;
    const auto beta = static_cast<float>(config.beta_kl);

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    Adam adam(w, config);
    VaeWeights grad = zero_weights<float>(w.arch);
    nn::ForwardTrace<float> trace;
    std::vector<float> noise(m);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum_total = 0.0, sum_recon = 0.0, sum_kl = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            for (auto t : grad.tensors()) std::fill(t.begin(), t.end(), 0.0f);
            for (std::size_t b = start; b < end; ++b) {
                const Grid& x = dataset[order[b]];
                for (float& e : noise) e = normal(rng);
                nn::vae_forward<float>(w, x.data(), noise, trace);
                const auto loss = nn::vae_backward<float>(w, trace, x.data(), beta, grad);
                if (!std::isfinite(loss.total)) {
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                                       std::to_string(order[b]) + " (recon=" + std::to_string(loss.recon) +
                                       ", kl=" + std::to_string(loss.kl) + ")");
                }
                sum_total += loss.total;
                sum_recon += loss.recon;
                sum_kl += loss.kl;
            }
            const float scale = 1.0f / static_cast<float>(end - start);
            for (auto t : grad.tensors()) {
                for (float& g : t) g *= scale;
            }
            adam.step(w, grad);
        }
        const auto n = static_cast<double>(dataset.size());
        result.log.epochs.push_back({epoch, sum_total / n, sum_recon / n, sum_kl / n});
    }
    return result;
}

TrainResult train(std::span<const Grid> dataset, const TrainConfig& config, const VaeArchitecture& arch) {
    return train(dataset, config, init_weights(arch, config.seed));
}

double gradient_check(const BasicVaeWeights<double>& weights, std::span<const double> sample,
                      std::span<const std::size_t> indices, std::span<const double> noise, double beta_kl) {
    weights.check_shapes();
    if (sample.size() != weights.arch.input_elements()) throw ShapeError("gradient_check: sample size mismatch");
    if (noise.size() != weights.arch.latent_dim) throw ShapeError("gradient_check: noise size mismatch");

    BasicVaeWeights<double> grad = zero_weights<double>(weights.arch);
    nn::ForwardTrace<double> trace;
    nn::vae_forward<double>(weights, sample, noise, trace);
    nn::vae_backward<double>(weights, trace, sample, beta_kl, grad);

    // flat index -> (tensor, offset)
    BasicVaeWeights<double> probe = weights;
    auto probe_tensors = probe.tensors();
    const auto grad_tensors = grad.tensors();
    auto locate = [&](std::size_t flat) -> std::pair<std::size_t, std::size_t> {
        for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
            if (flat < probe_tensors[t].size()) return {t, flat};
            flat -= probe_tensors[t].size();
        }
        throw ValidationError("gradient_check: parameter index out of range");
    };
    auto loss_at = [&]() {
        nn::ForwardTrace<double> tr;
        nn::vae_forward<double>(probe, sample, noise, tr);
        return nn::elbo_terms<double>(tr, sample, beta_kl).total;
    };

    double worst = 0.0;
    for (std::size_t flat : indices) {
        const auto [t, i] = locate(flat);
        double& p = probe_tensors[t][i];
        const double original = p;
        const double h = 1e-5 * std::max(1.0, std::abs(original));
        p = original + h;
        const double up = loss_at();
        p = original - h;
        const double down = loss_at();
        p = original;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grad_tensors[t][i];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    return worst;
}

std::vector<std::size_t> sample_parameter_indices(std::size_t parameter_count, std::size_t count,
                                                  std::uint64_t seed) {
    count = std::min(count, parameter_count);
    std::vector<std::size_t> all(parameter_count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(count);
    std::sort(all.begin(), all.end());
    return all;
}

SplitIndices split_calibration(std::size_t n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw ValidationError("split_calibration: fraction must lie in (0, 1)");
    }
    const auto n_cal = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    if (n_cal == 0 || n_cal >= n) {
        throw ValidationError("split_calibration: " + std::to_string(n) + " items with fraction " +
                              std::to_string(fraction) + " leaves an empty part");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    SplitIndices s;
    s.calibration.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_cal));
    s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_cal), order.end());
    return s;
}

void CalibrationSet::validate() const {
    if (scores.empty()) throw ValidationError("calibration set is empty");
    if (!std::all_of(scores.begin(), scores.end(), [](double s) { return std::isfinite(s); })) {
        throw ValidationError("calibration set contains non-finite scores");
    }
    if (!std::is_sorted(scores.begin(), scores.end())) {
        throw ValidationError("calibration scores are not sorted");
    }
}

CalibrationSet build_calibration(const VaeWeights& weights, std::span<const Grid> cal_flows) {
    if (cal_flows.empty()) throw ValidationError("build_calibration: no calibration flows");
    CalibrationSet cal;
    cal.scores.reserve(cal_flows.size());
    for (const Grid& f : cal_flows) cal.scores.push_back(kl_score(encode(weights, f).posterior));
    std::sort(cal.scores.begin(), cal.scores.end());
    return cal;
}

}  // namespace motionood
