#include "gradmimic/mimic.hpp"

#include <cmath>
#include <string>

#include "gradmimic/errors.hpp"

namespace gradmimic {

void ReferenceTarget::validate(const ModelSpec& trainee) const {
    if (!(theta_ref.spec == trainee)) throw InvalidArgument("reference layout does not match the trained model");
    if (theta_ref.values.size() != param_count(trainee)) throw InvalidArgument("reference has wrong parameter count");
    mask.validate(trainee);
}

std::string_view to_string(Weighting w) {
    switch (w) {
        case Weighting::mimic: return "mimic";
        case Weighting::grand: return "grand";
        case Weighting::uniform: return "uniform";
    }
    return "uniform";
}

Weighting parse_weighting(std::string_view name) {
    if (name == "mimic") return Weighting::mimic;
    if (name == "grand") return Weighting::grand;
    if (name == "uniform") return Weighting::uniform;
    throw InvalidArgument("unknown weighting '" + std::string(name) + "'");
}

void MimicConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidArgument("temperature must be > 0");
}

Vector target_vector(const ParamVector& theta_t, const ReferenceTarget& ref) {
    ref.validate(theta_t.spec);
    if (theta_t.values.size() != ref.theta_ref.values.size()) throw InvalidArgument("target_vector: layout mismatch");
    Vector diff(theta_t.values.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = ref.theta_ref.values[i] - theta_t.values[i];
    return extract_masked(diff, theta_t.spec, ref.mask);
}

double mimic_score(std::span<const double> masked_grad, std::span<const double> target) {
    if (masked_grad.size() != target.size()) throw InvalidArgument("mimic_score: gradient and target lengths differ");
    const double len = norm(target);
    if (len == 0.0) throw DegenerateError("mimic_score: target vector has zero length");
    return -dot(masked_grad, target) / len;
}

Vector normalize_scores(std::span<const double> raw_scores, double temperature) {
    return softmax(raw_scores, temperature);
}

ParamVector reweighted_update(const ParamVector& theta, const std::vector<Vector>& grads,
                              std::span<const double> weights, double learning_rate) {
    if (grads.size() != weights.size()) throw InvalidArgument("reweighted_update: one weight per gradient required");
    if (grads.empty()) throw InvalidArgument("reweighted_update: empty batch");
    double total = 0.0;
    for (double w : weights) total += w;
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("reweighted_update: weights must sum to 1");

    Vector step(theta.values.size(), 0.0);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].size() != step.size()) throw InvalidArgument("reweighted_update: gradient length mismatch");
        for (std::size_t k = 0; k < step.size(); ++k) step[k] += weights[i] * grads[i][k];
    }
    ParamVector next = theta;
    for (std::size_t k = 0; k < step.size(); ++k) next.values[k] -= learning_rate * step[k];
    return next;
}

Vector grand_weights(const std::vector<Vector>& grads) {
    if (grads.empty()) throw InvalidArgument("grand_weights: empty batch");
    Vector norms(grads.size());
    double total = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        norms[i] = norm(grads[i]);
        total += norms[i];
    }
    if (total == 0.0) return uniform_weights(grads.size());
    for (double& w : norms) w /= total;
    return norms;
}

Vector uniform_weights(std::size_t count) {
    if (count == 0) throw InvalidArgument("uniform_weights: empty batch");
    return Vector(count, 1.0 / static_cast<double>(count));
}

BatchWeighting compute_batch_weights(const ParamVector& theta, const std::vector<Vector>& grads,
                                     const MimicConfig& cfg, const ReferenceTarget* ref) {
    cfg.validate();
    BatchWeighting out;
    switch (cfg.weighting) {
        case Weighting::uniform:
            out.weights = uniform_weights(grads.size());
            return out;
        case Weighting::grand:
            out.weights = grand_weights(grads);
            return out;
        case Weighting::mimic:
            break;
    }
    if (ref == nullptr) throw InvalidArgument("mimic weighting requires a reference target");
    const Vector v = target_vector(theta, *ref);
    if (norm(v) == 0.0) {
        out.weights = uniform_weights(grads.size());
        out.degenerate_target = true;
        return out;
    }
    out.raw_scores.reserve(grads.size());
    for (const auto& g : grads) out.raw_scores.push_back(mimic_score(extract_masked(g, theta.spec, ref->mask), v));
    out.weights = normalize_scores(out.raw_scores, cfg.temperature);
    return out;
}

}  // namespace gradmimic
