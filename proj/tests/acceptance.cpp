// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Every threshold, trial count, seed and time limit is pinned below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gradmimic/cli.hpp"
#include "gradmimic/errors.hpp"
#include "gradmimic/filterkit.hpp"
#include "gradmimic/harness.hpp"
#include "gradmimic/io.hpp"
#include "gradmimic/theory.hpp"
#include "support.hpp"

using namespace gradmimic;
namespace fs = std::filesystem;

namespace {

#ifndef GRADMIMIC_CONFIG_DIR
#error "GRADMIMIC_CONFIG_DIR must point at configs/"
#endif

const fs::path kConfigs = GRADMIMIC_CONFIG_DIR;
constexpr std::uint64_t kSeed = 1;
constexpr std::uint64_t kSeedCount = 10;  // multi-seed criteria use seeds 1..10
constexpr std::size_t kSeedsRequired = 8;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    const char* name;
    double time_limit_s;  // 0 = no limit
    std::function<Outcome()> run;
};

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, a, b, c);
    return buf;
}

ExperimentConfig load_config(const std::string& file, std::uint64_t seed) {
    RunConfig rc = RunConfig::load(kConfigs / file);
    rc.set("experiment.seed", std::to_string(seed));
    return experiment_config_from(rc);
}

// --- theory ---------------------------------------------------------------

Outcome lemma1_identity() {
    constexpr std::size_t kTrials = 10000;
    constexpr double kTol = 1e-9;
    Rng rng(RngSeed{kSeed}, "acceptance.lemma1");
    double worst = 0.0;
    for (std::size_t i = 0; i < kTrials; ++i) {
        worst = std::max(worst, theory::lemma1_residual(theory::random_instance(rng)));
    }
    return {worst < kTol, fmt("%.0f trials, max relative residual %.3g (< 1e-9)", kTrials, worst)};
}

Outcome lemma2_inequality() {
    constexpr std::size_t kTrials = 10000;
    testing::Draw d(kSeed);
    std::size_t violations = 0;
    for (std::size_t i = 0; i < kTrials; ++i) {
        const std::size_t n = d.index(2, 100);
        const Vector v = d.vec(n, -10.0, 10.0);
        const double lambda = std::exp(d.uniform(std::log(1e-3), std::log(1e3)));
        const theory::Lemma2Check c = theory::check_lemma2(v, lambda);
        if (!(c.lhs >= c.rhs - 1e-12)) ++violations;
    }
    return {violations == 0, fmt("%.0f draws, %.0f violations", kTrials, double(violations))};
}

Outcome theorem1_bound() {
    constexpr std::size_t kAdmissible = 1000;
    Rng rng(RngSeed{kSeed}, "acceptance.theorem1");
    std::size_t admissible = 0, holds = 0, drawn = 0;
    while (admissible < kAdmissible && drawn < 100 * kAdmissible) {
        ++drawn;
        bool vacuous = false;
        const theory::TheoryInstance inst = theory::random_theorem_instance(rng, vacuous);
        const theory::Theorem1Check c = theory::check_theorem1(inst);
        if (c.status == theory::TheoremStatus::not_applicable) continue;
        ++admissible;
        if (c.comparison.dist_gm <= c.comparison.dist_gd + 1e-12) ++holds;
    }
    return {admissible == kAdmissible && holds == admissible,
            fmt("%.0f admissible of %.0f drawn, %.0f hold", double(admissible), double(drawn), double(holds))};
}

// --- models and trainer -------------------------------------------------------

Outcome gradient_check() {
    constexpr int kTriples = 100;
    constexpr double kStep = 1e-5;
    constexpr double kTol = 1e-6;
    // Relative error per coordinate; coordinates below 1e-3 in magnitude are
    // compared against 1e-3 so finite-difference round-off cannot dominate.
    constexpr double kFloor = 1e-3;
    testing::Draw d(kSeed);
    double worst = 0.0;
    for (ModelKind kind : {ModelKind::linear_softmax, ModelKind::mlp_one_hidden}) {
        for (int t = 0; t < kTriples; ++t) {
            ModelSpec spec{kind, d.index(1, 8), d.index(2, 6), kind == ModelKind::mlp_one_hidden ? d.index(1, 8) : 0,
                           0.1};
            ParamVector theta{spec, d.vec(param_count(spec), -1.5, 1.5)};
            const Sample s{0, d.vec(spec.input_dim, -2.0, 2.0), d.index(0, spec.num_classes - 1)};
            const Vector g = per_sample_grad(theta, s);
            for (std::size_t k = 0; k < g.size(); ++k) {
                ParamVector plus = theta, minus = theta;
                plus.values[k] += kStep;
                minus.values[k] -= kStep;
                const double fd = (loss(plus, s) - loss(minus, s)) / (2 * kStep);
                worst = std::max(worst, std::abs(g[k] - fd) / std::max(std::abs(fd), kFloor));
            }
        }
    }
    return {worst < kTol, fmt("200 triples, max relative error %.3g (< 1e-6)", worst)};
}

Vector independent_gd(const LabeledDataset& ds, const TrainConfig& cfg, Vector theta, std::size_t d, std::size_t c) {
    const std::size_t n = ds.size();
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const auto order = epoch_order(cfg, n, e);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            Vector step(theta.size(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const Sample& s = ds.samples[order[k]];
                Vector z(c);
                for (std::size_t j = 0; j < c; ++j) {
                    z[j] = theta[c * d + j];
                    for (std::size_t f = 0; f < d; ++f) z[j] += theta[j * d + f] * s.features[f];
                }
                const double hi = *std::max_element(z.begin(), z.end());
                double total = 0.0;
                for (double& v : z) total += (v = std::exp(v - hi));
                for (std::size_t j = 0; j < c; ++j) {
                    const double r = (z[j] / total - (j == s.label ? 1.0 : 0.0)) / double(stop - start);
                    for (std::size_t f = 0; f < d; ++f) step[j * d + f] += r * s.features[f];
                    step[c * d + j] += r;
                }
            }
            for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= cfg.learning_rate * step[k];
        }
    }
    return theta;
}

Outcome reduction_to_gd() {
    ExperimentConfig cfg = load_config("denoise.cfg", kSeed);
    cfg.blobs.per_class = 100;
    cfg.epochs = 10;
    const ModelSpec spec = cfg.model_spec();
    const LabeledDataset clean = gen_gaussian_blobs(cfg.blobs, derive_seed(cfg.seed, "dataset.train"));
    const LabeledDataset noisy = inject_label_noise(clean, 0.5, derive_seed(cfg.seed, "dataset.noise"));

    TrainConfig uni = cfg.train_config();
    uni.mimic.weighting = Weighting::uniform;
    const Vector got = train(noisy, spec, uni).theta_final.values;
    const Vector want = independent_gd(noisy, uni, initial_params(spec, uni).values, spec.input_dim, spec.num_classes);
    const double gd_err = testing::max_abs_diff(got, want);

    const ParamVector ref = train_reference(clean, spec, uni);
    TrainConfig hot = uni;
    hot.mimic.weighting = Weighting::mimic;
    hot.mimic.temperature = 1e6;
    const Vector warm = train(noisy, spec, hot, ReferenceTarget{ref, ParamMask::last_layer()}).theta_final.values;
    double rel = 0.0;
    for (std::size_t k = 0; k < warm.size(); ++k) rel = std::max(rel, testing::rel_err(warm[k], got[k]));
    return {gd_err < 1e-12 && rel < 1e-4,
            fmt("uniform vs independent GD max |diff| %.3g (< 1e-12); tau=1e6 vs uniform max rel %.3g (< 1e-4)",
                gd_err, rel)};
}

// --- experiments --------------------------------------------------------------

// Criteria 6 and 11 read the same run.
const ExperimentReport& denoise_run() {
    static const ExperimentReport report = run_experiment(load_config("denoise.cfg", kSeed));
    return report;
}

Outcome denoise_f1() {
    const auto& m = denoise_run().metrics;
    const double gmm = m.at("f1_gmm"), thr = m.at("f1_threshold");
    return {gmm >= 0.90 && thr >= 0.85, fmt("F1 gmm %.4f (>= 0.90), threshold %.4f (>= 0.85)", gmm, thr)};
}

Outcome accuracy_gain() {
    constexpr double kLevels[3] = {0.4, 0.5, 0.6};
    constexpr double kMinGainAtHalf = 0.01;  // one accuracy point
    bool pass = true;
    std::string detail;
    for (double rho : kLevels) {
        std::size_t wins = 0;
        double gain = 0.0;
        for (std::uint64_t s = 1; s <= kSeedCount; ++s) {
            ExperimentConfig cfg = load_config("denoise.cfg", s);
            cfg.noise_level = rho;
            const auto m = run_experiment(cfg).metrics;
            wins += m.at("accuracy_mimic") >= m.at("accuracy_uniform") ? 1 : 0;
            gain += m.at("accuracy_mimic") - m.at("accuracy_uniform");
        }
        gain /= double(kSeedCount);
        pass = pass && wins >= kSeedsRequired;
        if (rho == 0.5) pass = pass && gain >= kMinGainAtHalf;
        detail += fmt("rho=%.1f: %.0f/10 seeds, mean gain %.2f pts; ", rho, double(wins), 100 * gain);
    }
    detail += "need >= 8/10 each and >= 1.0 pt at rho=0.5";
    return {pass, detail};
}

Outcome retention_correlation() {
    const auto m = run_experiment(load_config("noise_sweep.cfg", kSeed)).metrics;
    const double r = m.at("pearson_noise_retention");
    return {r <= -0.8, fmt("Pearson(rho, retention) = %.4f (<= -0.8)", r)};
}

Outcome membership_overlap() {
    std::size_t wins = 0;
    double lo = INFINITY, hi = -INFINITY;
    for (std::uint64_t s = 1; s <= kSeedCount; ++s) {
        const double ratio = run_experiment(load_config("membership.cfg", s)).metrics.at("overlap_ratio");
        wins += ratio >= 1.3 ? 1 : 0;
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
    }
    return {wins >= kSeedsRequired,
            fmt("overlap ratio >= 1.3 on %.0f/10 seeds (need 8), range [%.3f, %.3f]", double(wins), lo, hi)};
}

// --- aggregator ---------------------------------------------------------------

Outcome aggregator_oracle() {
    constexpr int kParameterizations = 100;
    constexpr double kTol = 1e-9;
    testing::Draw d(kSeed);
    double worst = 0.0;
    for (int p = 0; p < kParameterizations; ++p) {
        const std::size_t n = d.index(1, 12), epochs = d.index(1, 4);
        const double prior = d.uniform(0.1, 0.9);
        const Vector a = d.vec(epochs, 0.05, 0.95), b = d.vec(epochs, 0.05, 0.95);
        VoteMatrix votes(n, epochs, Binarizer::gmm);
        for (std::size_t i = 0; i < n; ++i) {
            const bool retain = d.coin(prior);
            for (std::size_t t = 0; t < epochs; ++t) votes.set(i, t, d.coin(retain ? a[t] : b[t]));
        }
        const FilterDecision dec = aggregate_em(votes);
        const LabelModel& m = dec.model;
        // Joint enumeration over all 2^n latent assignments.
        Vector num(n, 0.0);
        double den = 0.0;
        for (std::uint32_t z = 0; z < (1u << n); ++z) {
            double w = 1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const bool r = (z >> i) & 1u;
                w *= r ? m.prior_retain : 1.0 - m.prior_retain;
                for (std::size_t t = 0; t < epochs; ++t) {
                    const double q = r ? m.p_vote_given_retain[t] : m.p_vote_given_discard[t];
                    w *= votes.vote(i, t) ? q : 1.0 - q;
                }
            }
            den += w;
            for (std::size_t i = 0; i < n; ++i) {
                if ((z >> i) & 1u) num[i] += w;
            }
        }
        for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(dec.retain_prob[i] - num[i] / den));
    }
    return {worst < kTol, fmt("100 parameterizations, max |posterior - enumeration| %.3g (< 1e-9)", worst)};
}

Outcome score_separation() {
    const auto& rep = denoise_run();
    const auto& clean = rep.details["clean_mean_score"];
    const auto& flipped = rep.details["flipped_mean_score"];
    std::size_t separated = 0, checked = 0;
    double min_gap = INFINITY;
    for (std::size_t e = 1; e < clean.size(); ++e) {  // every epoch after the first
        ++checked;
        const double gap = clean[e].get<double>() - flipped[e].get<double>();
        min_gap = std::min(min_gap, gap);
        separated += gap > 0.0 ? 1 : 0;
    }
    return {checked > 0 && separated == checked,
            fmt("clean > flipped in %.0f of %.0f epochs, smallest gap %.3g", double(separated), double(checked),
                min_gap)};
}

// --- determinism --------------------------------------------------------------

Outcome cli_determinism() {
    const auto root = testing::scratch_dir("acceptance_determinism");
    std::size_t compared = 0, differing = 0;
    for (const char* cfg : {"denoise.cfg", "noise_sweep.cfg", "membership.cfg", "temp_ablation.cfg",
                            "convergence.cfg"}) {
        std::vector<fs::path> dirs;
        for (const char* run : {"a", "b"}) {
            const fs::path dir = root / cfg / run;
            std::ostringstream out, err;
            const int code = run_cli({"experiment", "--config", (kConfigs / cfg).string(), "--seed",
                                      std::to_string(kSeed), "--out", dir.string()},
                                     out, err);
            if (code != 0) return {false, std::string(cfg) + ": exit " + std::to_string(code) + ": " + err.str()};
            dirs.push_back(dir);
        }
        for (const auto& e : fs::directory_iterator(dirs[0])) {
            ++compared;
            const fs::path twin = dirs[1] / e.path().filename();
            if (!fs::exists(twin) || io::read_file(e.path()) != io::read_file(twin)) ++differing;
        }
    }
    return {compared == 10 && differing == 0,
            fmt("%.0f files compared across 5 experiments, %.0f differ", double(compared), double(differing))};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {1, "lemma1 identity", 10, lemma1_identity},
        {2, "lemma2 inequality", 10, lemma2_inequality},
        {3, "theorem1 bound", 10, theorem1_bound},
        {4, "gradient correctness", 0, gradient_check},
        {5, "reduction to GD", 0, reduction_to_gd},
        {6, "denoise F1", 60, denoise_f1},
        {7, "accuracy gain", 600, accuracy_gain},
        {8, "retention/noise correlation", 300, retention_correlation},
        {9, "membership overlap", 300, membership_overlap},
        {10, "aggregator oracle", 0, aggregator_oracle},
        {11, "score separation", 0, score_separation},
        {12, "CLI determinism", 0, cli_determinism},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
            o.pass = false;
            o.detail += fmt(" [over the %.0f s limit]", c.time_limit_s);
        }
        if (!o.pass) ++failures;
        std::printf("%s [%2d] %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", int(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
