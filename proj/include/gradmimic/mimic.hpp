#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "gradmimic/core.hpp"
#include "gradmimic/models.hpp"

namespace gradmimic {

/// Reference weights plus the segments they are compared on.
struct ReferenceTarget {
    ParamVector theta_ref;
    ParamMask mask;

    void validate(const ModelSpec& trainee) const;
};

enum class Weighting { mimic, grand, uniform };

std::string_view to_string(Weighting w);
Weighting parse_weighting(std::string_view name);

struct MimicConfig {
    double temperature = 0.5;
    Weighting weighting = Weighting::mimic;

    void validate() const;
};

/// theta_ref - theta_t on the masked coordinates, in layout order.
Vector target_vector(const ParamVector& theta_t, const ReferenceTarget& ref);

/// Projection length of -g onto v: <-g, v> / |v|. Negative when g pushes
/// toward the reference. Throws DegenerateError if |v| == 0.
double mimic_score(std::span<const double> masked_grad, std::span<const double> target);

/// Softmax of raw / temperature over one batch.
Vector normalize_scores(std::span<const double> raw_scores, double temperature);

/// theta - lr * sum_i weights_i * grads_i over every parameter. The weights
/// must sum to 1 within 1e-9. Summation runs in ascending index order.
ParamVector reweighted_update(const ParamVector& theta, const std::vector<Vector>& grads,
                              std::span<const double> weights, double learning_rate);

/// |g_i| / sum_j |g_j|; uniform when every gradient is zero.
Vector grand_weights(const std::vector<Vector>& grads);

Vector uniform_weights(std::size_t count);

struct BatchWeighting {
    Vector weights;
    /// Raw mimic scores (mimic weighting only, empty otherwise).
    Vector raw_scores;
    /// |v_t| was zero and mimic weighting fell back to uniform.
    bool degenerate_target = false;
};

/// Per-batch weights for any weighting mode. `ref` is required for mimic.
BatchWeighting compute_batch_weights(const ParamVector& theta, const std::vector<Vector>& grads,
                                     const MimicConfig& cfg, const ReferenceTarget* ref);

}  // namespace gradmimic
