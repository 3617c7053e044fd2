#include "gradmimic/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

void TrainConfig::validate(std::size_t dataset_size) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train.learning_rate", "must be a positive number");
    }
    if (epochs < 1) throw ConfigError("train.epochs", "must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
    if (dataset_size > 0 && batch_size > dataset_size) {
        throw ConfigError("train.batch_size", "exceeds the dataset size");
    }
    if (!(mimic.temperature > 0.0) || !std::isfinite(mimic.temperature)) {
        throw ConfigError("mimic.temperature", "must be a positive number");
    }
}

ScoreMatrix::ScoreMatrix(std::size_t num_samples, std::size_t epochs)
    : n_(num_samples), epochs_(epochs), scores_(num_samples * epochs, 0.0), sizes_(num_samples * epochs, 0) {}

void ScoreMatrix::set(std::size_t sample, std::size_t epoch, double score, std::size_t batch_size) {
    if (sample >= n_ || epoch >= epochs_) throw InvalidArgument("ScoreMatrix::set: cell out of range");
    if (batch_size == 0) throw InvalidArgument("ScoreMatrix::set: batch size must be positive");
    scores_[sample * epochs_ + epoch] = score;
    sizes_[sample * epochs_ + epoch] = batch_size;
}

Vector ScoreMatrix::column(std::size_t epoch) const {
    Vector out(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = score(i, epoch);
    return out;
}

std::vector<std::size_t> ScoreMatrix::column_batch_sizes(std::size_t epoch) const {
    std::vector<std::size_t> out(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = batch_size(i, epoch);
    return out;
}

Vector ScoreMatrix::row_means() const {
    Vector out(n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t e = 0; e < epochs_; ++e) out[i] += score(i, e);
        out[i] /= static_cast<double>(epochs_);
    }
    return out;
}

std::size_t ScoreMatrix::batch_size_used() const {
    return sizes_.empty() ? 0 : *std::max_element(sizes_.begin(), sizes_.end());
}

void save_scores_csv(const ScoreMatrix& m, const std::filesystem::path& path) {
    std::string text = "sample_id,epoch,score,batch_size\n";
    for (std::size_t i = 0; i < m.num_samples(); ++i) {
        for (std::size_t e = 0; e < m.epochs(); ++e) {
            text += std::to_string(i) + ',' + std::to_string(e) + ',' + io::format_double(m.score(i, e)) + ',' +
                    std::to_string(m.batch_size(i, e)) + '\n';
        }
    }
    io::write_file(path, text);
}

ScoreMatrix load_scores_csv(const std::filesystem::path& path) {
    const std::string source = path.string();
    const std::string text = io::read_file(path);
    const auto rows = io::lines(text);
    if (rows.empty() || rows.front().empty()) throw ParseError(source, 1, "missing header");
    if (rows.front() != "sample_id,epoch,score,batch_size") {
        throw ParseError(source, 1, "header must be sample_id,epoch,score,batch_size");
    }
    struct Cell {
        std::size_t sample, epoch, batch;
        double score;
    };
    std::vector<Cell> cells;
    std::size_t n = 0, epochs = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].empty()) continue;
        const auto f = io::split_csv(rows[r]);
        if (f.size() != 4) throw ParseError(source, r + 1, "expected 4 columns");
        Cell c{io::parse_index(f[0], source, r + 1), io::parse_index(f[1], source, r + 1),
               io::parse_index(f[3], source, r + 1), io::parse_double(f[2], source, r + 1)};
        if (c.batch == 0) throw ParseError(source, r + 1, "batch_size must be positive");
        n = std::max(n, c.sample + 1);
        epochs = std::max(epochs, c.epoch + 1);
        cells.push_back(c);
    }
    if (cells.size() != n * epochs) throw ParseError(source, 0, "score matrix is not dense");
    ScoreMatrix m(n, epochs);
    for (const auto& c : cells) {
        if (m.is_set(c.sample, c.epoch)) throw ParseError(source, 0, "duplicate score cell");
        m.set(c.sample, c.epoch, c.score, c.batch);
    }
    return m;
}

std::string report_to_json(const TrainReport& report, const TrainConfig& cfg) {
    nlohmann::ordered_json j;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["weighting"] = to_string(cfg.mimic.weighting);
    j["temperature"] = cfg.mimic.temperature;
    j["seed"] = cfg.seed.value;
    j["degenerate_batches"] = report.degenerate_batches;
    auto& epochs = j["per_epoch"] = nlohmann::ordered_json::array();
    for (const auto& e : report.per_epoch) {
        nlohmann::ordered_json row;
        row["train_loss"] = e.train_loss;
        row["eval_accuracy"] = e.eval_accuracy ? nlohmann::ordered_json(*e.eval_accuracy) : nlohmann::ordered_json();
        epochs.push_back(row);
    }
    j["warnings"] = report.warnings;
    return j.dump(2) + "\n";
}

ParamVector initial_params(const ModelSpec& spec, const TrainConfig& cfg) {
    return init_params(spec, derive_seed(cfg.seed, "trainer.init"));
}

std::vector<std::size_t> epoch_order(const TrainConfig& cfg, std::size_t n, std::size_t epoch) {
    if (!cfg.shuffle) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return idx;
    }
    Rng rng(derive_seed(cfg.seed, "trainer.shuffle", epoch));
    return rng.permutation(n);
}

TrainReport train(const LabeledDataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
                  const std::optional<ReferenceTarget>& ref, const LabeledDataset* eval_ds) {
    if (ds.empty()) throw InvalidArgument("train: empty dataset");
    cfg.validate(ds.size());
    spec.validate();
    if (cfg.mimic.weighting == Weighting::mimic) {
        if (!ref) throw ConfigError("mimic.weighting", "mimic weighting needs a reference model");
        ref->validate(spec);
    }

    const std::size_t n = ds.size();
    TrainReport report;
    report.theta_final = initial_params(spec, cfg);
    ScoreMatrix scores(n, cfg.epochs);
    ParamVector& theta = report.theta_final;

    std::vector<Sample> batch;
    batch.reserve(cfg.batch_size);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(cfg, n, epoch);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            batch.clear();
            for (std::size_t k = start; k < stop; ++k) batch.push_back(ds.samples[order[k]]);

            const auto grads = batch_grads(theta, batch);
            const BatchWeighting w = compute_batch_weights(theta, grads, cfg.mimic, ref ? &*ref : nullptr);
            if (w.degenerate_target) {
                ++report.degenerate_batches;
                report.warnings.push_back("epoch " + std::to_string(epoch) + ", batch at " + std::to_string(start) +
                                          ": trainee equals reference on the mask, using uniform weights");
            }
            for (std::size_t k = start; k < stop; ++k) scores.set(order[k], epoch, w.weights[k - start], stop - start);
            theta = reweighted_update(theta, grads, w.weights, cfg.learning_rate);
        }
        EpochStats stats;
        stats.train_loss = mean_loss(theta, ds);
        if (eval_ds != nullptr) stats.eval_accuracy = evaluate(theta, *eval_ds);
        report.per_epoch.push_back(stats);
    }
    report.score_matrix = std::move(scores);
    return report;
}

ParamVector train_reference(const LabeledDataset& clean_ds, const ModelSpec& spec, const TrainConfig& cfg) {
    if (clean_ds.has_flips()) throw InvalidArgument("train_reference: dataset contains flipped labels");
    TrainConfig uniform = cfg;
    uniform.mimic.weighting = Weighting::uniform;
    return train(clean_ds, spec, uniform).theta_final;
}

ParamVector degrade_reference(const ParamVector& theta_ref, double sigma, RngSeed seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw InvalidArgument("degrade_reference: sigma must be >= 0");
    ParamVector out = theta_ref;
    if (sigma == 0.0) return out;
    Rng rng(seed, "trainer.degrade_reference");
    for (double& v : out.values) v += sigma * rng.normal();
    return out;
}

double evaluate(const ParamVector& theta, const LabeledDataset& test_ds) {
    if (test_ds.empty()) throw InvalidArgument("evaluate: empty test set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test_ds.size(); ++i) {
        const std::size_t truth = test_ds.clean_labels ? (*test_ds.clean_labels)[i] : test_ds.samples[i].label;
        correct += predict(theta, test_ds.samples[i]) == truth ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(test_ds.size());
}

}  // namespace gradmimic
