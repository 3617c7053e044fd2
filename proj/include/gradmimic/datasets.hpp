#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "gradmimic/core.hpp"
#include "gradmimic/rng.hpp"

namespace gradmimic {

struct Sample {
    std::size_t id = 0;
    Vector features;
    std::size_t label = 0;
};

/// Classification data with optional label-noise ground truth.
///
/// When `flip_flags` is present, `clean_labels` is too, and
/// `flip_flags[i]` holds exactly when `samples[i].label != clean_labels[i]`.
/// Flags are evaluation-only; nothing in training reads them.
struct LabeledDataset {
    std::vector<Sample> samples;
    std::size_t num_classes = 0;
    std::optional<std::vector<bool>> flip_flags;
    std::optional<std::vector<std::size_t>> clean_labels;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    std::size_t dim() const noexcept { return samples.empty() ? 0 : samples.front().features.size(); }
    bool has_flips() const;
    /// Indices whose label was corrupted. Throws InvalidArgument without flags.
    IndexSet flipped_indices() const;
    /// Copy with every label restored to its clean value and no flips.
    LabeledDataset with_clean_labels() const;
    /// Copy restricted to `indices`, ids renumbered 0..k-1 in the given order.
    LabeledDataset subset(const IndexSet& indices) const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&);
};

bool operator==(const Sample& a, const Sample& b);

struct BlobParams {
    std::size_t num_classes = 5;
    std::size_t per_class = 400;
    std::size_t dim = 10;
    double class_separation = 3.0;
    double cluster_std = 1.0;
};

/// Isotropic Gaussian clusters whose means sit evenly on a circle of radius
/// `class_separation` in the first two coordinates. Features are standardized
/// per dimension afterwards. Samples are ordered class by class.
LabeledDataset gen_gaussian_blobs(const BlobParams& params, RngSeed seed);

/// Flip exactly floor(noise_level * n) labels, chosen without replacement,
/// each to a uniformly drawn wrong class. Existing clean labels are kept.
LabeledDataset inject_label_noise(const LabeledDataset& ds, double noise_level, RngSeed seed);

/// CSV schema: `id,label,clean_label,flipped,f0,...,f{d-1}`. Datasets without
/// noise ground truth are written with clean_label = label and flipped = 0.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path);
LabeledDataset load_csv(const std::filesystem::path& path);

}  // namespace gradmimic
