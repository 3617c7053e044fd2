#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gradmimic/config.hpp"
#include "gradmimic/datasets.hpp"
#include "gradmimic/filterkit.hpp"
#include "gradmimic/models.hpp"
#include "gradmimic/trainer.hpp"

namespace gradmimic {

enum class ExperimentKind { denoise, noise_sweep, membership, temp_ablation, convergence };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::denoise;
    RngSeed seed;

    BlobParams blobs{5, 400, 10, 3.5, 1.0};
    std::size_t test_per_class = 400;
    double noise_level = 0.5;

    ModelKind model_kind = ModelKind::linear_softmax;
    std::size_t hidden_dim = 32;
    double init_scale = 0.1;

    double learning_rate = 0.1;
    std::size_t batch_size = 40;
    std::size_t epochs = 20;
    bool shuffle = true;
    std::string mask = "last_layer";
    std::size_t reference_epochs = 20;

    Weighting weighting = Weighting::mimic;
    double temperature = 0.5;
    double reference_noise = 0.0;

    BinarizeOptions filter;

    std::vector<double> noise_levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    std::vector<double> temperatures{0.1, 0.5, 1.0, 1e6};
    double subset_fraction = 0.3;
    std::size_t random_draws = 100;
    std::optional<double> target_accuracy;
    std::size_t repeats = 1;

    std::filesystem::path output_dir;

    ModelSpec model_spec() const;
    /// Training settings for the run being studied (seed included).
    TrainConfig train_config() const;
    void validate() const;
};

/// "last_layer", "all", or a comma list of segment names.
ParamMask resolve_mask(std::string_view name, const ModelSpec& spec);

/// Build from parsed key = value text. Unknown keys and malformed values
/// throw ConfigError. The seed must be present (the CLI injects --seed).
ExperimentConfig experiment_config_from(const RunConfig& cfg);

/// Canonical `[section] key = value` rendering of every setting except the
/// output directory. Parsing it back yields an identical config.
std::string to_config_text(const ExperimentConfig& cfg);

/// 16 hex digits of FNV-1a over to_config_text().
std::string config_hash(const ExperimentConfig& cfg);

struct ExperimentReport {
    std::string experiment;
    std::string config_hash;
    /// Every seed the run derived, by purpose.
    std::map<std::string, std::uint64_t> seeds;
    /// Scalar results by name.
    std::map<std::string, double> metrics;
    /// Structured extras (per-epoch curves, per-level tables).
    nlohmann::ordered_json details = nlohmann::ordered_json::object();
    /// Table written next to the JSON report.
    std::string csv;
    std::vector<std::filesystem::path> artifacts;
};

std::string report_json(const ExperimentReport& report, const ExperimentConfig& cfg);

/// Noisy blobs, filtered by Grad-Mimic: detection F1 for every binarizer,
/// test accuracy of mimic, uniform and GraNd weighting, retention and the
/// per-epoch score means of clean and flipped samples.
ExperimentReport run_denoise(const ExperimentConfig& cfg);

/// One denoising pass per noise level (no baselines). Reports retention,
/// mean score and the Pearson correlation between noise level and retention.
ExperimentReport run_noise_sweep(const ExperimentConfig& cfg);

/// Reference trained on a random fraction of a noise-free pool. The pool is
/// ranked by mean mimic score and the top |A| compared with A.
ExperimentReport run_membership(const ExperimentConfig& cfg);

/// Final test accuracy of mimic weighting at each temperature and of uniform.
ExperimentReport run_temp_ablation(const ExperimentConfig& cfg);

/// Epochs until the test accuracy first reaches the target, mimic vs uniform.
ExperimentReport run_convergence(const ExperimentConfig& cfg);

/// Dispatch on cfg.kind. With repeats > 1 the experiment runs once per
/// derived seed (concurrently) and metrics are reported per repeat and as means.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Write `{experiment}_{hash}.json` and `.csv` into `dir`, recording the paths in
/// report.artifacts.
void write_report(ExperimentReport& report, const ExperimentConfig& cfg, const std::filesystem::path& dir);

}  // namespace gradmimic
