#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "motionood/grid.hpp"
#include "motionood/vae.hpp"

namespace motionood {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double beta_kl = 1.0;
    std::uint64_t seed = 7;
    double calibration_fraction = 0.2;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double mean_total = 0.0;
    double mean_recon = 0.0;
    double mean_kl = 0.0;
};

struct TrainingLog {
    std::vector<EpochStats> epochs;

    /// CSV with header "epoch,mean_total,mean_recon,mean_kl".
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    VaeWeights weights;
    TrainingLog log;
};

struct ElboLoss {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};

/// recon = sum of squared differences, kl = kl_score(posterior),
/// total = recon + beta_kl * kl.
ElboLoss elbo_loss(const Grid& recon, const Grid& target, const LatentPosterior& posterior, double beta_kl);

/// Adam training from `initial` on preprocessed flow fields. Each sample gets
/// one reparameterization noise draw per step from a generator seeded by
/// config.seed; the whole run is a pure function of (dataset, config, initial).
TrainResult train(std::span<const Grid> dataset, const TrainConfig& config, VaeWeights initial);

/// Same, starting from init_weights(arch, config.seed).
TrainResult train(std::span<const Grid> dataset, const TrainConfig& config, const VaeArchitecture& arch);

/// Compares backpropagated d total / d w_i with central finite differences
/// (h = 1e-5 * max(1, |w_i|)) at the given flat parameter indices, using the
/// fixed noise vector. Returns max |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(const BasicVaeWeights<double>& weights, std::span<const double> sample,
                      std::span<const std::size_t> indices, std::span<const double> noise, double beta_kl);

/// `count` distinct flat parameter indices drawn uniformly with a seeded generator.
std::vector<std::size_t> sample_parameter_indices(std::size_t parameter_count, std::size_t count,
                                                  std::uint64_t seed);

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> calibration;
};

/// Seeded shuffle of 0..n-1, then the first round(n * fraction) indices go to
/// calibration. Throws ValidationError when either part would be empty.
SplitIndices split_calibration(std::size_t n, double fraction, std::uint64_t seed);

template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_calibration(std::span<const Item> dataset, double fraction,
                                                                  std::uint64_t seed) {
    const SplitIndices idx = split_calibration(dataset.size(), fraction, seed);
    std::pair<std::vector<Item>, std::vector<Item>> parts;
    for (std::size_t i : idx.train) parts.first.push_back(dataset[i]);
    for (std::size_t i : idx.calibration) parts.second.push_back(dataset[i]);
    return parts;
}

/// Held-out nonconformity scores, ascending.
struct CalibrationSet {
    std::vector<double> scores;

    std::size_t size() const { return scores.size(); }
    /// Throws ValidationError unless nonempty, sorted and finite.
    void validate() const;
};

CalibrationSet build_calibration(const VaeWeights& weights, std::span<const Grid> cal_flows);

}  // namespace motionood
