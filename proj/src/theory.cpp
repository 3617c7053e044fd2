#include "gradmimic/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "gradmimic/errors.hpp"

namespace gradmimic::theory {

namespace {

struct StepTerms {
    std::vector<Vector> grads;
    Vector target;         // v = theta_ref - theta_t
    Vector alignment;      // a_i = -g~_i . v
    Vector alpha_weights;  // alpha_i / sum alpha
    Vector mean_grad;      // E[g~]
    Vector weighted_grad;  // E[alpha g~] / E[alpha]
};

StepTerms step_terms(const TheoryInstance& inst) {
    inst.validate();
    StepTerms t;
    t.grads = noisy_gradients(inst);
    const std::size_t n = inst.size();
    const std::size_t d = inst.dim();
    t.target.resize(d);
    for (std::size_t k = 0; k < d; ++k) t.target[k] = inst.theta_ref[k] - inst.theta_t[k];
    const double vlen = norm(t.target);
    if (vlen == 0.0) throw DegenerateError("theta_t equals theta_ref; the target vector is zero");

    t.alignment.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.alignment[i] = -dot(t.grads[i], t.target);
    // alpha_i = exp(lambda a_i) with lambda = 1/(tau |v|); the common factor
    // exp(-max) cancels in alpha_i / sum alpha.
    const double lambda = 1.0 / (inst.temperature * vlen);
    Vector exponent(n);
    for (std::size_t i = 0; i < n; ++i) exponent[i] = lambda * t.alignment[i];
    t.alpha_weights = softmax(exponent);

    t.mean_grad.assign(d, 0.0);
    t.weighted_grad.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            t.mean_grad[k] += t.grads[i][k];
            t.weighted_grad[k] += t.alpha_weights[i] * t.grads[i][k];
        }
    }
    for (double& g : t.mean_grad) g /= static_cast<double>(n);
    return t;
}

double softmax_gap_sq(std::span<const double> alignment, double lambda) {
    Vector scaled(alignment.size());
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = lambda * alignment[i];
    const Vector s = softmax(scaled);
    const double uniform = 1.0 / static_cast<double>(alignment.size());
    double gap = 0.0;
    for (double p : s) gap += (p - uniform) * (p - uniform);
    return gap;
}

double log_uniform(Rng& rng, double lo, double hi) {
    return std::exp(rng.uniform(std::log(lo), std::log(hi)));
}

Vector gaussian_vector(Rng& rng, std::size_t d, double scale) {
    Vector v(d);
    for (double& x : v) x = scale * rng.normal();
    return v;
}

}  // namespace

Vector TheoryInstance::theta_star() const {
    Vector star(dim(), 0.0);
    for (const auto& c : centers) {
        for (std::size_t k = 0; k < star.size(); ++k) star[k] += c[k];
    }
    for (double& s : star) s /= static_cast<double>(centers.size());
    return star;
}

double TheoryInstance::reference_error() const { return std::sqrt(squared_distance(theta_ref, theta_star())); }

void TheoryInstance::validate() const {
    if (centers.size() < 2) throw InvalidArgument("theory instance needs at least two samples");
    if (theta_t.empty()) throw InvalidArgument("theory instance has zero dimension");
    if (theta_ref.size() != theta_t.size()) throw InvalidArgument("theta_ref and theta_t differ in dimension");
    for (const auto& c : centers) {
        if (c.size() != theta_t.size()) throw InvalidArgument("center dimension mismatch");
    }
    if (!(noise_level >= 0.0)) throw InvalidArgument("noise level must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be > 0");
}

std::vector<Vector> noisy_gradients(const TheoryInstance& inst) {
    inst.validate();
    const std::size_t d = inst.dim();
    const double sd = std::sqrt(inst.noise_level / static_cast<double>(d));
    Rng rng(inst.seed, "theory.gradient_noise");
    std::vector<Vector> grads(inst.size(), Vector(d));
    for (std::size_t i = 0; i < inst.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) {
            const double noise = rng.normal();
            grads[i][k] = (inst.theta_t[k] - inst.centers[i][k]) + sd * noise;
        }
    }
    return grads;
}

StepComparison gm_and_gd_step(const TheoryInstance& inst) {
    const StepTerms t = step_terms(inst);
    const std::size_t d = inst.dim();
    StepComparison out;
    out.theta_gd_next.resize(d);
    out.theta_gm_next.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
        out.theta_gd_next[k] = inst.theta_t[k] - inst.learning_rate * t.mean_grad[k];
        out.theta_gm_next[k] = inst.theta_t[k] - inst.learning_rate * t.weighted_grad[k];
    }
    const Vector star = inst.theta_star();
    out.dist_gd = std::sqrt(squared_distance(out.theta_gd_next, star));
    out.dist_gm = std::sqrt(squared_distance(out.theta_gm_next, star));
    out.R = compute_R(inst);
    out.eta_bound = eta_bound(inst);
    return out;
}

double compute_R(const TheoryInstance& inst) {
    const StepTerms t = step_terms(inst);
    const double n = static_cast<double>(inst.size());
    // Cov(w, a) with w_i = alpha_i / E[alpha] = n * alpha_weights_i, E[w] = 1.
    double e_wa = 0.0, e_a = 0.0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
        e_wa += n * t.alpha_weights[i] * t.alignment[i];
        e_a += t.alignment[i];
    }
    e_wa /= n;
    e_a /= n;
    const double cov = e_wa - e_a;
    return 2.0 * cov - inst.learning_rate * (dot(t.weighted_grad, t.weighted_grad) - dot(t.mean_grad, t.mean_grad));
}

double lemma1_residual(const TheoryInstance& inst) {
    const StepComparison s = gm_and_gd_step(inst);
    const double gm_ref = squared_distance(s.theta_gm_next, inst.theta_ref);
    const double gd_ref = squared_distance(s.theta_gd_next, inst.theta_ref);
    return std::abs(gm_ref - (gd_ref - inst.learning_rate * s.R)) / std::max(1.0, gd_ref);
}

Lemma2Check check_lemma2(std::span<const double> values, double lambda) {
    if (!(lambda > 0.0)) throw InvalidArgument("check_lemma2: lambda must be > 0");
    if (values.size() < 2) throw InvalidArgument("check_lemma2: need at least two values");
    require_finite(values, "check_lemma2");

    Vector scaled(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) scaled[i] = lambda * values[i];
    const Vector s_lambda = softmax(scaled);
    const Vector s_zero = softmax(Vector(values.size(), 0.0));
    double f_lambda = 0.0, f_zero = 0.0, gap = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        f_lambda += s_lambda[i] * values[i];
        f_zero += s_zero[i] * values[i];
        gap += (s_lambda[i] - s_zero[i]) * (s_lambda[i] - s_zero[i]);
    }
    Lemma2Check out;
    out.lhs = f_lambda - f_zero;
    out.rhs = gap / lambda;
    out.holds = out.lhs >= out.rhs - 1e-12;
    return out;
}

double eta_bound_from(const std::vector<Vector>& grads, std::span<const double> target, double temperature,
                      double reference_error) {
    if (grads.size() < 2) throw InvalidArgument("eta_bound: need at least two gradients");
    const double vlen = norm(target);
    if (vlen == 0.0) throw DegenerateError("eta_bound: target vector is zero");
    double kappa = 0.0;
    Vector alignment(grads.size());
    for (std::size_t i = 0; i < grads.size(); ++i) {
        kappa = std::max(kappa, norm(grads[i]));
        alignment[i] = -dot(grads[i], target);
    }
    if (kappa == 0.0) throw DegenerateError("eta_bound: every gradient is zero");
    const double gap = softmax_gap_sq(alignment, 1.0 / (temperature * vlen));
    return (2.0 * temperature * vlen * gap - 4.0 * reference_error * kappa) / (kappa * kappa);
}

double eta_bound(const TheoryInstance& inst) {
    inst.validate();
    Vector target(inst.dim());
    for (std::size_t k = 0; k < target.size(); ++k) target[k] = inst.theta_ref[k] - inst.theta_t[k];
    return eta_bound_from(noisy_gradients(inst), target, inst.temperature, inst.reference_error());
}

double lemma3_eta_bound(const TheoryInstance& inst) {
    const StepTerms t = step_terms(inst);
    const double vlen = norm(t.target);
    const double gap = softmax_gap_sq(t.alignment, 1.0 / (inst.temperature * vlen));
    const double denom = dot(t.weighted_grad, t.weighted_grad) - dot(t.mean_grad, t.mean_grad);
    if (denom <= 0.0) return std::numeric_limits<double>::infinity();
    return 2.0 * inst.temperature * vlen * gap / denom;
}

Theorem1Check check_theorem1(const TheoryInstance& inst) {
    Theorem1Check out;
    const double bound = eta_bound(inst);
    if (!(bound > 0.0) || !(inst.learning_rate < bound)) return out;
    out.comparison = gm_and_gd_step(inst);
    out.status = out.comparison.dist_gm <= out.comparison.dist_gd + 1e-12 ? TheoremStatus::holds
                                                                           : TheoremStatus::violated;
    return out;
}

TheoryInstance random_instance(Rng& rng, const InstanceShape& shape) {
    TheoryInstance inst;
    const std::size_t d = 1 + rng.below(shape.max_dim);
    const std::size_t n = 2 + rng.below(shape.max_samples - 1);
    const double spread = log_uniform(rng, 0.1, 3.0);
    for (std::size_t i = 0; i < n; ++i) inst.centers.push_back(gaussian_vector(rng, d, spread));
    inst.theta_t = gaussian_vector(rng, d, 3.0);
    inst.theta_ref = gaussian_vector(rng, d, 1.0);
    inst.noise_level = rng.uniform(0.0, 2.0);
    inst.learning_rate = log_uniform(rng, 1e-3, 1.0);
    inst.temperature = log_uniform(rng, 0.05, 10.0);
    inst.seed = RngSeed{rng.next_u64()};
    return inst;
}

TheoryInstance random_theorem_instance(Rng& rng, bool& vacuous, const InstanceShape& shape) {
    TheoryInstance inst = random_instance(rng, shape);
    inst.noise_level = rng.uniform(0.01, 2.0);
    inst.temperature = log_uniform(rng, 0.1, 5.0);
    const Vector star = inst.theta_star();
    const Vector dir = gaussian_vector(rng, inst.dim(), 1.0);
    const double eps = rng.uniform(0.0, 1e-3);
    const double dlen = norm(dir);
    for (std::size_t k = 0; k < star.size(); ++k) inst.theta_ref[k] = star[k] + (dlen > 0.0 ? eps * dir[k] / dlen : 0.0);

    const double bound = eta_bound(inst);
    vacuous = !(bound > 0.0);
    inst.learning_rate = vacuous ? log_uniform(rng, 1e-3, 1.0) : bound * rng.uniform(0.01, 0.99);
    return inst;
}

TheoryReport verify_theory(std::size_t trials, RngSeed seed) {
    TheoryReport report;
    Rng lemma1_rng(seed, "theory.verify.lemma1");
    for (std::size_t i = 0; i < trials; ++i) {
        const TheoryInstance inst = random_instance(lemma1_rng);
        report.lemma1_max_rel_err = std::max(report.lemma1_max_rel_err, lemma1_residual(inst));
        ++report.lemma1_trials;
    }

    Rng lemma2_rng(seed, "theory.verify.lemma2");
    for (std::size_t i = 0; i < trials; ++i) {
        const std::size_t size = 2 + lemma2_rng.below(99);
        const Vector v = gaussian_vector(lemma2_rng, size, log_uniform(lemma2_rng, 0.01, 10.0));
        const double lambda = log_uniform(lemma2_rng, 1e-3, 1e3);
        if (!check_lemma2(v, lambda).holds) ++report.lemma2_violations;
        ++report.lemma2_trials;
    }

    Rng theorem_rng(seed, "theory.verify.theorem1");
    for (std::size_t i = 0; i < trials; ++i) {
        bool vacuous = false;
        const TheoryInstance inst = random_theorem_instance(theorem_rng, vacuous);
        if (vacuous) {
            ++report.theorem1_vacuous;
            continue;
        }
        const Theorem1Check check = check_theorem1(inst);
        if (check.status == TheoremStatus::not_applicable) continue;
        ++report.theorem1_admissible;
        if (check.status == TheoremStatus::holds) ++report.theorem1_holds;
    }
    return report;
}

std::string theory_report_json(const TheoryReport& r) {
    nlohmann::ordered_json j;
    j["lemma1"] = {{"trials", r.lemma1_trials}, {"max_rel_err", r.lemma1_max_rel_err}};
    j["lemma2"] = {{"trials", r.lemma2_trials}, {"violations", r.lemma2_violations}};
    j["theorem1"] = {{"admissible", r.theorem1_admissible}, {"holds", r.theorem1_holds}, {"vacuous", r.theorem1_vacuous}};
    return j.dump(2) + "\n";
}

}  // namespace gradmimic::theory
