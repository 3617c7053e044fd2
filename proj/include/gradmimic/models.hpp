#pragma once

#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradmimic/core.hpp"
#include "gradmimic/datasets.hpp"
#include "gradmimic/rng.hpp"

namespace gradmimic {

enum class ModelKind { linear_softmax, mlp_one_hidden };

std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

/// linear_softmax: logits = W x + b.
/// mlp_one_hidden: logits = W2 tanh(W1 x + b1) + b2.
struct ModelSpec {
    ModelKind kind = ModelKind::linear_softmax;
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    std::size_t hidden_dim = 0;  ///< mlp only
    double init_scale = 0.1;

    void validate() const;
    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

inline constexpr std::string_view kHiddenWeights = "hidden_weights";
inline constexpr std::string_view kHiddenBias = "hidden_bias";
inline constexpr std::string_view kOutputWeights = "output_weights";
inline constexpr std::string_view kOutputBias = "output_bias";

struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

/// Segment table for a spec. Segments are contiguous and partition [0, total).
/// Weight blocks are row-major with one row per output unit.
std::vector<Segment> param_layout(const ModelSpec& spec);
std::size_t param_count(const ModelSpec& spec);

/// Flat parameter vector tagged with the spec that fixes its layout.
struct ParamVector {
    ModelSpec spec;
    Vector values;

    std::vector<Segment> segments() const { return param_layout(spec); }
    friend bool operator==(const ParamVector&, const ParamVector&) = default;
};

/// Which segments take part in mimic scoring.
struct ParamMask {
    std::set<std::string> included_segments;

    static ParamMask all(const ModelSpec& spec);
    /// {output_weights, output_bias}
    static ParamMask last_layer();

    /// Throws InvalidArgument if empty or naming a segment the spec lacks.
    void validate(const ModelSpec& spec) const;
    friend bool operator==(const ParamMask&, const ParamMask&) = default;
};

/// Concatenate the masked segments of `values` in layout order.
Vector extract_masked(std::span<const double> values, const ModelSpec& spec, const ParamMask& mask);
/// Inverse of extract_masked: overwrite the masked coordinates of `values`.
void write_masked(std::span<double> values, const ModelSpec& spec, const ParamMask& mask,
                  std::span<const double> masked);

/// Weights ~ Uniform(-init_scale, init_scale), biases zero.
ParamVector init_params(const ModelSpec& spec, RngSeed seed);

Vector logits(const ParamVector& theta, std::span<const double> features);
/// Cross-entropy -ln p(label | features), evaluated in log-sum-exp form.
double loss(const ParamVector& theta, const Sample& sample);
double mean_loss(const ParamVector& theta, const LabeledDataset& ds);
/// Exact gradient of `loss` with respect to every parameter.
Vector per_sample_grad(const ParamVector& theta, const Sample& sample);
/// One gradient per sample, in batch order.
std::vector<Vector> batch_grads(const ParamVector& theta, std::span<const Sample> batch);

/// argmax of the logits, lowest class index on ties.
std::size_t predict(const ParamVector& theta, const Sample& sample);
/// Fraction of samples whose current label is predicted.
double accuracy(const ParamVector& theta, const LabeledDataset& ds);

std::string params_to_json(const ParamVector& theta);
ParamVector params_from_json(std::string_view text, const std::string& source = "<json>");
void save_params(const ParamVector& theta, const std::filesystem::path& path);
ParamVector load_params(const std::filesystem::path& path);

}  // namespace gradmimic
