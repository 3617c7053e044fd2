#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gradmimic/core.hpp"
#include "gradmimic/rng.hpp"

namespace gradmimic::theory {

/// Single-step comparison problem with quadratic per-sample losses
/// l_i(theta) = 0.5 * |theta - c_i|^2, whose joint minimizer is mean(c_i).
///
/// Each sample's gradient is perturbed by zero-mean Gaussian noise with
/// per-coordinate variance noise_level / dim, so E|noise|^2 = noise_level.
/// The noise is drawn from `seed`, so every function below sees the same draw.
struct TheoryInstance {
    std::vector<Vector> centers;
    Vector theta_t;
    Vector theta_ref;
    double noise_level = 0.0;
    double learning_rate = 0.1;
    double temperature = 1.0;
    RngSeed seed;

    std::size_t dim() const { return theta_t.size(); }
    std::size_t size() const { return centers.size(); }
    Vector theta_star() const;
    /// |theta_ref - theta_star|
    double reference_error() const;
    void validate() const;
};

/// g~_i = (theta_t - c_i) + noise_i
std::vector<Vector> noisy_gradients(const TheoryInstance& inst);

struct StepComparison {
    Vector theta_gd_next;
    Vector theta_gm_next;
    double dist_gd = 0.0;  ///< |theta_gd_next - theta_star|
    double dist_gm = 0.0;
    double R = 0.0;
    double eta_bound = 0.0;
};

/// Full-dataset GD step and the alpha-weighted step
/// theta_t - lr * sum_i alpha_i g~_i / sum_i alpha_i with
/// alpha_i = exp(-g~_i . v / (tau |v|)), v = theta_ref - theta_t.
/// Throws DegenerateError when |v| == 0.
StepComparison gm_and_gd_step(const TheoryInstance& inst);

/// Exact advantage term satisfying
/// |gm - ref|^2 = |gd - ref|^2 - lr * R.
double compute_R(const TheoryInstance& inst);

/// Relative residual of that identity, normalized by max(1, |gd - ref|^2).
double lemma1_residual(const TheoryInstance& inst);

struct Lemma2Check {
    double lhs = 0.0;
    double rhs = 0.0;
    bool holds = false;
};

/// f(lambda) - f(0) >= |sigma(lambda) - sigma(0)|^2 / lambda, where
/// f(lambda) = sum softmax(lambda v)_i v_i. `holds` allows 1e-12 slack.
Lemma2Check check_lemma2(std::span<const double> values, double lambda);

/// Learning-rate threshold below which the reweighted step lands no farther
/// from theta_star than the GD step:
/// (2 tau |v| |sigma(a/(tau|v|)) - sigma(0)|^2 - 4 eps kappa) / kappa^2,
/// with a_i = -g~_i . v, kappa = max |g~_i|, eps = |theta_ref - theta_star|.
/// May be <= 0, in which case no learning rate qualifies.
double eta_bound(const TheoryInstance& inst);
/// The same threshold from explicit gradients, target and reference error.
double eta_bound_from(const std::vector<Vector>& grads, std::span<const double> target, double temperature,
                      double reference_error);

/// Sufficient learning rate for R > 0 from the covariance bound alone.
/// +inf when the weighted-mean gradient is no longer than the plain mean.
double lemma3_eta_bound(const TheoryInstance& inst);

enum class TheoremStatus { holds, violated, not_applicable };

struct Theorem1Check {
    TheoremStatus status = TheoremStatus::not_applicable;
    StepComparison comparison;
};

/// Not applicable unless 0 < lr < eta_bound. Otherwise holds iff
/// dist_gm <= dist_gd + 1e-12.
Theorem1Check check_theorem1(const TheoryInstance& inst);

struct InstanceShape {
    std::size_t max_dim = 10;
    std::size_t max_samples = 50;
};

/// Generic random instance for the identity checks.
TheoryInstance random_instance(Rng& rng, const InstanceShape& shape = {});
/// Random instance whose reference sits within 1e-3 of the optimum, with the
/// learning rate drawn strictly inside (0, eta_bound) whenever the bound is
/// positive. Sets `vacuous` when the bound is <= 0.
TheoryInstance random_theorem_instance(Rng& rng, bool& vacuous, const InstanceShape& shape = {});

struct TheoryReport {
    std::size_t lemma1_trials = 0;
    double lemma1_max_rel_err = 0.0;
    std::size_t lemma2_trials = 0;
    std::size_t lemma2_violations = 0;
    std::size_t theorem1_admissible = 0;
    std::size_t theorem1_holds = 0;
    std::size_t theorem1_vacuous = 0;
};

/// Random sweep over all three checks, `trials` draws each.
TheoryReport verify_theory(std::size_t trials, RngSeed seed);
std::string theory_report_json(const TheoryReport& report);

}  // namespace gradmimic::theory
