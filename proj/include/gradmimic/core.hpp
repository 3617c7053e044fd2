#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gradmimic {

/// Dense vector of 64-bit floats. Entry points that accept one reject NaN/Inf.
using Vector = std::vector<double>;
/// Sample indices. Order and duplicates are ignored by the set metrics.
using IndexSet = std::vector<std::size_t>;

/// Throws InvalidArgument naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);
double mean(std::span<const double> a);

/// Temperature softmax: exp(s_i / tau) / sum_j exp(s_j / tau).
///
/// The maximum score is subtracted before exponentiation, so equal scores
/// always produce bit-identical weights and large scores cannot overflow.
Vector softmax(std::span<const double> scores, double temperature = 1.0);

/// Sample Pearson correlation. Throws DegenerateError if either side has zero variance.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// F1 of the positive ("bad") class. 0 when precision + recall is 0.
double f1_score(const IndexSet& predicted_bad, const IndexSet& true_bad);

struct SetOverlap {
    double jaccard = 0.0;
    /// |a ∩ b| / |a|: how much of the selection landed in the target.
    double overlap_fraction = 0.0;
};

SetOverlap jaccard_overlap(const IndexSet& a, const IndexSet& b);

}  // namespace gradmimic
