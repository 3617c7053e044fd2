#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "gradmimic/core.hpp"
#include "gradmimic/datasets.hpp"
#include "gradmimic/trainer.hpp"

namespace gradmimic {

using Votes = std::vector<std::uint8_t>;  // 1 = retain

enum class Binarizer { threshold, kmeans, gmm, topk };

std::string_view to_string(Binarizer b);
Binarizer parse_binarizer(std::string_view name);

/// vote_i = score_i > 1 / batch_size_i. Strict: a score of exactly 1/b is a
/// discard, so a singleton batch (score 1.0, b = 1) never votes retain.
Votes binarize_threshold(std::span<const double> scores, std::span<const std::size_t> batch_sizes);

/// Optimal 1-D two-cluster split found by trying every boundary between
/// consecutive distinct sorted values.
struct KmeansSplit {
    bool degenerate = false;  ///< fewer than two distinct values
    double cut = 0.0;         ///< smallest value of the upper cluster
    double low_mean = 0.0, high_mean = 0.0;
    double low_var = 0.0, high_var = 0.0;
    std::size_t low_count = 0, high_count = 0;
};

KmeansSplit kmeans_split_1d(std::span<const double> values);

/// Retain the upper k-means cluster; everything when the column is constant.
Votes binarize_kmeans(std::span<const double> scores);

struct Gmm1d {
    double weight[2] = {0.5, 0.5};
    double mean[2] = {0.0, 0.0};  ///< mean[0] <= mean[1] after fitting
    double var[2] = {1.0, 1.0};
    std::size_t iterations = 0;
    double log_likelihood = 0.0;

    /// Posterior responsibility of the higher-mean component.
    double posterior_high(double x) const;
};

/// Two-component EM started from the k-means split. At most 200 iterations,
/// stops once the log-likelihood gain drops below 1e-9, variances floored at 1e-12.
Gmm1d fit_gmm_1d(std::span<const double> values);

/// Retain where the higher-mean component's posterior is >= 0.5. The cut is
/// the lowest column value at or above the lower mean that meets that rule,
/// and every value at or above the cut is retained, which keeps the votes
/// monotone when the component variances differ.
Votes binarize_gmm(std::span<const double> scores);

/// Retain the ceil(k * n / 100) highest scores; ties at the cut go to the lower index.
Votes binarize_topk(std::span<const double> scores, double k_percent);

class VoteMatrix {
public:
    VoteMatrix() = default;
    VoteMatrix(std::size_t num_samples, std::size_t epochs, Binarizer source);

    std::size_t num_samples() const noexcept { return n_; }
    std::size_t epochs() const noexcept { return epochs_; }
    Binarizer source() const noexcept { return source_; }

    std::uint8_t vote(std::size_t sample, std::size_t epoch) const { return votes_[sample * epochs_ + epoch]; }
    void set(std::size_t sample, std::size_t epoch, bool retain) {
        votes_[sample * epochs_ + epoch] = retain ? 1 : 0;
    }
    void set_column(std::size_t epoch, const Votes& column);

    friend bool operator==(const VoteMatrix&, const VoteMatrix&) = default;

private:
    std::size_t n_ = 0;
    std::size_t epochs_ = 0;
    Binarizer source_ = Binarizer::threshold;
    std::vector<std::uint8_t> votes_;
};

struct BinarizeOptions {
    Binarizer method = Binarizer::gmm;
    double topk_percent = 50.0;
};

/// Binarize every epoch column of a score matrix.
VoteMatrix binarize(const ScoreMatrix& scores, const BinarizeOptions& options);

/// Two-class latent model over conditionally independent epoch voters.
struct LabelModel {
    double prior_retain = 0.5;
    Vector p_vote_given_retain;   ///< a_t
    Vector p_vote_given_discard;  ///< b_t
    std::size_t iterations = 0;
    double log_likelihood = 0.0;
};

/// Retain posterior of each sample under a fixed label model.
Vector label_model_posteriors(const LabelModel& model, const VoteMatrix& votes);
double label_model_log_likelihood(const LabelModel& model, const VoteMatrix& votes);

struct FilterDecision {
    Vector retain_prob;
    IndexSet retained;
    double threshold_used = 0.5;
    LabelModel model;

    IndexSet discarded() const;
};

/// Fit the label model by EM and threshold its posteriors at 0.5.
///
/// Starts from the row-majority labels (ties count as retain) with Laplace
/// smoothing, runs at most 500 iterations or until the log-likelihood gain is
/// below 1e-10, and clamps every probability to [0.01, 0.99]. If the fitted
/// voters are on average more likely to vote retain under "discard", the two
/// latent classes are swapped.
FilterDecision aggregate_em(const VoteMatrix& votes);

struct QualityStats {
    double retention_rate = 0.0;
    /// Mean over all samples of their per-epoch mean score. With full batches
    /// every batch sums to 1, so this sits at 1/b.
    double avg_mimic = 0.0;
    /// The same mean restricted to retained samples (0 when none are).
    double avg_mimic_retained = 0.0;
};

QualityStats quality_stats(const FilterDecision& decision, const ScoreMatrix& scores);

/// F1 of the discarded set against the flipped set.
double detection_f1(const FilterDecision& decision, const LabeledDataset& ds);

/// CSV `sample_id,epoch,vote`, sample-major.
void save_votes_csv(const VoteMatrix& votes, const std::filesystem::path& path);
/// CSV `sample_id,retain_prob,retained`.
void save_decision_csv(const FilterDecision& decision, const std::filesystem::path& path);
FilterDecision load_decision_csv(const std::filesystem::path& path);

}  // namespace gradmimic
