#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gradmimic/datasets.hpp"
#include "gradmimic/mimic.hpp"
#include "gradmimic/models.hpp"
#include "gradmimic/rng.hpp"

namespace gradmimic {

struct TrainConfig {
    double learning_rate = 0.1;
    std::size_t batch_size = 32;
    std::size_t epochs = 20;
    MimicConfig mimic;
    /// Segments compared against the reference when the CLI or harness builds
    /// a ReferenceTarget. `train` itself uses the mask carried by its target.
    ParamMask mask = ParamMask::last_layer();
    RngSeed seed;
    bool shuffle = true;

    /// Throws ConfigError naming the offending `train.*` key.
    void validate(std::size_t dataset_size) const;
};

/// Normalized per-batch weight of every sample in every epoch.
///
/// Columns are epochs: without-replacement shuffling visits each sample once
/// per epoch, so the matrix is dense. Each cell remembers the size of the
/// batch it was normalized over (the last batch of an epoch may be short).
class ScoreMatrix {
public:
    ScoreMatrix() = default;
    ScoreMatrix(std::size_t num_samples, std::size_t epochs);

    std::size_t num_samples() const noexcept { return n_; }
    std::size_t epochs() const noexcept { return epochs_; }

    double score(std::size_t sample, std::size_t epoch) const { return scores_[sample * epochs_ + epoch]; }
    std::size_t batch_size(std::size_t sample, std::size_t epoch) const { return sizes_[sample * epochs_ + epoch]; }
    bool is_set(std::size_t sample, std::size_t epoch) const { return sizes_[sample * epochs_ + epoch] != 0; }
    void set(std::size_t sample, std::size_t epoch, double score, std::size_t batch_size);

    /// One epoch's scores, indexed by sample.
    Vector column(std::size_t epoch) const;
    std::vector<std::size_t> column_batch_sizes(std::size_t epoch) const;
    /// Per-sample mean across epochs.
    Vector row_means() const;
    /// Largest batch size recorded (the configured b).
    std::size_t batch_size_used() const;

    friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::size_t epochs_ = 0;
    Vector scores_;
    std::vector<std::size_t> sizes_;
};

/// CSV `sample_id,epoch,score,batch_size`, sample-major, epochs 0-based.
void save_scores_csv(const ScoreMatrix& scores, const std::filesystem::path& path);
ScoreMatrix load_scores_csv(const std::filesystem::path& path);

struct EpochStats {
    double train_loss = 0.0;
    std::optional<double> eval_accuracy;

    friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

struct TrainReport {
    ParamVector theta_final;
    std::optional<ScoreMatrix> score_matrix;
    std::vector<EpochStats> per_epoch;
    /// Batches where |v_t| == 0 forced a uniform fallback.
    std::size_t degenerate_batches = 0;
    std::vector<std::string> warnings;

    friend bool operator==(const TrainReport&, const TrainReport&) = default;
};

std::string report_to_json(const TrainReport& report, const TrainConfig& cfg);

/// Initial parameters for a run (seeded from cfg.seed).
ParamVector initial_params(const ModelSpec& spec, const TrainConfig& cfg);
/// Visiting order for one epoch: a seeded permutation, or 0..n-1 without shuffling.
std::vector<std::size_t> epoch_order(const TrainConfig& cfg, std::size_t n, std::size_t epoch);

/// Mini-batch SGD where each batch's gradients are combined with the weights
/// chosen by cfg.mimic (mimic scores, gradient norms, or uniform).
TrainReport train(const LabeledDataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
                  const std::optional<ReferenceTarget>& ref = std::nullopt,
                  const LabeledDataset* eval_ds = nullptr);

/// Uniform-weight training on noise-free data.
ParamVector train_reference(const LabeledDataset& clean_ds, const ModelSpec& spec, const TrainConfig& cfg);

/// theta + N(0, sigma^2 I).
ParamVector degrade_reference(const ParamVector& theta_ref, double sigma, RngSeed seed);

/// Accuracy against clean labels where available.
double evaluate(const ParamVector& theta, const LabeledDataset& test_ds);

}  // namespace gradmimic
