#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"
#include "gradmimic/trainer.hpp"
#include "support.hpp"

using namespace gradmimic;

namespace {

// Linear softmax written out directly: W is C x d row-major, then b.
Vector oracle_grad(const Vector& theta, const Sample& s, std::size_t d, std::size_t c) {
    Vector z(c);
    for (std::size_t k = 0; k < c; ++k) {
        z[k] = theta[c * d + k];
        for (std::size_t j = 0; j < d; ++j) z[k] += theta[k * d + j] * s.features[j];
    }
    const double hi = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double& v : z) total += (v = std::exp(v - hi));
    Vector g(theta.size(), 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        const double r = z[k] / total - (k == s.label ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) g[k * d + j] = r * s.features[j];
        g[c * d + k] = r;
    }
    return g;
}

// Mini-batch SGD with uniform or mimic weights, sharing only the visiting order
// and the initial parameters with the library.
Vector oracle_train(const LabeledDataset& ds, const TrainConfig& cfg, Vector theta, std::size_t d, std::size_t c,
                    const Vector* ref) {
    const std::size_t n = ds.size();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(cfg, n, epoch);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(n, start + cfg.batch_size);
            std::vector<Vector> grads;
            for (std::size_t k = start; k < stop; ++k) grads.push_back(oracle_grad(theta, ds.samples[order[k]], d, c));
            Vector w(grads.size(), 1.0 / double(grads.size()));
            if (ref != nullptr) {
                Vector v(theta.size());
                double vv = 0.0;
                for (std::size_t k = 0; k < v.size(); ++k) vv += (v[k] = (*ref)[k] - theta[k]) * v[k];
                Vector m(grads.size());
                for (std::size_t i = 0; i < grads.size(); ++i) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < v.size(); ++k) s -= grads[i][k] * v[k];
                    m[i] = s / std::sqrt(vv);
                }
                const double hi = *std::max_element(m.begin(), m.end());
                double total = 0.0;
                for (std::size_t i = 0; i < m.size(); ++i) total += (w[i] = std::exp((m[i] - hi) / cfg.mimic.temperature));
                for (double& x : w) x /= total;
            }
            for (std::size_t k = 0; k < theta.size(); ++k) {
                double step = 0.0;
                for (std::size_t i = 0; i < grads.size(); ++i) step += w[i] * grads[i][k];
                theta[k] -= cfg.learning_rate * step;
            }
        }
    }
    return theta;
}

LabeledDataset small_blobs(std::uint64_t seed, double noise) {
    auto ds = gen_gaussian_blobs(BlobParams{3, 20, 4, 2.5, 1.0}, RngSeed{seed});
    return noise > 0 ? inject_label_noise(ds, noise, RngSeed{seed + 1}) : ds;
}

TrainConfig base_config(std::uint64_t seed, Weighting w) {
    TrainConfig cfg;
    cfg.learning_rate = 0.2;
    cfg.batch_size = 7;  // 60 samples: the last batch of each epoch has 4
    cfg.epochs = 5;
    cfg.mimic.weighting = w;
    cfg.mimic.temperature = 0.5;
    cfg.seed = RngSeed{seed};
    return cfg;
}

const ModelSpec kSpec{ModelKind::linear_softmax, 4, 3, 0, 0.1};

}  // namespace

TEST_CASE("uniform training matches an independent SGD loop") {
    for (bool shuffle : {true, false}) {
        const auto ds = small_blobs(3, 0.2);
        TrainConfig cfg = base_config(11, Weighting::uniform);
        cfg.shuffle = shuffle;
        const TrainReport rep = train(ds, kSpec, cfg);
        const Vector want = oracle_train(ds, cfg, initial_params(kSpec, cfg).values, 4, 3, nullptr);
        CHECK(testing::max_abs_diff(rep.theta_final.values, want) < 1e-12);
        CHECK(rep.per_epoch.size() == 5);
        CHECK(rep.per_epoch.back().train_loss == doctest::Approx(mean_loss(rep.theta_final, ds)).epsilon(1e-15));
    }
}

TEST_CASE("mimic training matches an independent reweighted loop") {
    const auto ds = small_blobs(4, 0.3);
    const ParamVector ref = train_reference(small_blobs(4, 0.0), kSpec, base_config(5, Weighting::uniform));
    const TrainConfig cfg = base_config(12, Weighting::mimic);
    const TrainReport rep = train(ds, kSpec, cfg, ReferenceTarget{ref, ParamMask::last_layer()});
    const Vector want = oracle_train(ds, cfg, initial_params(kSpec, cfg).values, 4, 3, &ref.values);
    CHECK(testing::max_abs_diff(rep.theta_final.values, want) < 1e-12);
    CHECK(rep.degenerate_batches == 0);
}

TEST_CASE("very high temperature reproduces uniform training") {
    const auto ds = small_blobs(6, 0.3);
    const ParamVector ref = train_reference(small_blobs(6, 0.0), kSpec, base_config(1, Weighting::uniform));
    TrainConfig cfg = base_config(2, Weighting::mimic);
    cfg.mimic.temperature = 1e6;
    const TrainReport hot = train(ds, kSpec, cfg, ReferenceTarget{ref, ParamMask::last_layer()});
    cfg.mimic.weighting = Weighting::uniform;
    const TrainReport uni = train(ds, kSpec, cfg);
    CHECK(testing::max_abs_diff(hot.theta_final.values, uni.theta_final.values) < 1e-6);
}

TEST_CASE("score matrix invariants") {
    const auto ds = small_blobs(7, 0.2);
    const ParamVector ref = train_reference(small_blobs(7, 0.0), kSpec, base_config(3, Weighting::uniform));
    for (Weighting w : {Weighting::mimic, Weighting::grand, Weighting::uniform}) {
        const TrainConfig cfg = base_config(8, w);
        const TrainReport rep = train(ds, kSpec, cfg, ReferenceTarget{ref, ParamMask::last_layer()});
        REQUIRE(rep.score_matrix);
        const ScoreMatrix& m = *rep.score_matrix;
        CHECK(m.num_samples() == 60);
        CHECK(m.epochs() == 5);
        CHECK(m.batch_size_used() == 7);
        for (std::size_t e = 0; e < m.epochs(); ++e) {
            const auto order = epoch_order(cfg, 60, e);
            for (std::size_t start = 0; start < 60; start += 7) {
                const std::size_t stop = std::min<std::size_t>(60, start + 7);
                double total = 0.0;
                for (std::size_t k = start; k < stop; ++k) {
                    CHECK(m.is_set(order[k], e));
                    CHECK(m.batch_size(order[k], e) == stop - start);
                    CHECK(m.score(order[k], e) >= 0.0);
                    total += m.score(order[k], e);
                }
                CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("training is deterministic per seed") {
    const auto ds = small_blobs(9, 0.2);
    const auto test = small_blobs(90, 0.0);
    const ParamVector ref = train_reference(small_blobs(9, 0.0), kSpec, base_config(3, Weighting::uniform));
    const ReferenceTarget target{ref, ParamMask::last_layer()};
    const TrainConfig cfg = base_config(10, Weighting::mimic);
    const TrainReport a = train(ds, kSpec, cfg, target, &test);
    CHECK(a == train(ds, kSpec, cfg, target, &test));
    CHECK(report_to_json(a, cfg) == report_to_json(train(ds, kSpec, cfg, target, &test), cfg));
    CHECK(a.per_epoch.back().eval_accuracy.has_value());
    CHECK_FALSE(a == train(ds, kSpec, base_config(11, Weighting::mimic), target, &test));
}

TEST_CASE("configuration errors name their key") {
    const auto ds = small_blobs(1, 0.0);
    auto key_of = [&](TrainConfig cfg, bool with_ref = false) {
        try {
            if (with_ref) {
                train(ds, kSpec, cfg, ReferenceTarget{initial_params(kSpec, cfg), ParamMask::last_layer()});
            } else {
                train(ds, kSpec, cfg);
            }
        } catch (const ConfigError& e) {
            return e.key();
        }
        return std::string("none");
    };
    TrainConfig cfg = base_config(1, Weighting::uniform);
    cfg.learning_rate = 0.0;
    CHECK(key_of(cfg) == "train.learning_rate");
    cfg = base_config(1, Weighting::uniform);
    cfg.epochs = 0;
    CHECK(key_of(cfg) == "train.epochs");
    cfg = base_config(1, Weighting::uniform);
    cfg.batch_size = 0;
    CHECK(key_of(cfg) == "train.batch_size");
    cfg.batch_size = 61;
    CHECK(key_of(cfg) == "train.batch_size");
    cfg = base_config(1, Weighting::mimic);
    CHECK(key_of(cfg) == "mimic.weighting");
    cfg.mimic.temperature = -1.0;
    CHECK(key_of(cfg, true) == "mimic.temperature");
    CHECK_THROWS_AS(train(LabeledDataset{}, kSpec, base_config(1, Weighting::uniform)), InvalidArgument);
    CHECK_THROWS_AS(train_reference(small_blobs(1, 0.2), kSpec, base_config(1, Weighting::uniform)), InvalidArgument);
}

TEST_CASE("reference equal to the trainee is degenerate, not fatal") {
    const auto ds = small_blobs(2, 0.0);
    TrainConfig cfg = base_config(4, Weighting::mimic);
    cfg.epochs = 1;
    const ReferenceTarget same{initial_params(kSpec, cfg), ParamMask::last_layer()};
    const TrainReport rep = train(ds, kSpec, cfg, same);
    CHECK(rep.degenerate_batches == 1);
    CHECK(rep.warnings.size() == 1);
}

TEST_CASE("degrade reference") {
    const ParamVector theta{kSpec, Vector(15, 1.0)};
    CHECK(degrade_reference(theta, 0.0, RngSeed{1}) == theta);
    CHECK(degrade_reference(theta, 0.3, RngSeed{1}) == degrade_reference(theta, 0.3, RngSeed{1}));
    CHECK_THROWS_AS(degrade_reference(theta, -0.1, RngSeed{1}), InvalidArgument);

    const ParamVector big{kSpec, Vector(20000, 0.0)};
    const ParamVector noisy = degrade_reference(big, 0.5, RngSeed{7});
    double s = 0.0, ss = 0.0;
    for (double v : noisy.values) {
        s += v;
        ss += v * v;
    }
    const double n = double(noisy.values.size());
    // Standard errors: mean 0.5/sqrt(n) ~ 0.0035, variance 0.25*sqrt(2/n) ~ 0.0025.
    CHECK(std::abs(s / n) < 0.02);
    CHECK(std::abs(ss / n - 0.25) < 0.0125);
}

TEST_CASE("evaluate scores against clean labels") {
    auto ds = small_blobs(5, 0.0);
    const ParamVector ref = train_reference(ds, kSpec, base_config(3, Weighting::uniform));
    const double clean = evaluate(ref, ds);
    const auto noisy = inject_label_noise(ds, 0.5, RngSeed{2});
    CHECK(evaluate(ref, noisy) == clean);
    CHECK(accuracy(ref, noisy) < clean);
    CHECK_THROWS_AS(evaluate(ref, LabeledDataset{}), InvalidArgument);
}

TEST_CASE("score csv round trip") {
    ScoreMatrix m(3, 2);
    m.set(0, 0, 0.1, 2);
    m.set(1, 0, 0.9, 2);
    m.set(2, 0, 1.0, 1);
    m.set(0, 1, 1.0 / 3.0, 3);
    m.set(1, 1, 1e-300, 3);
    m.set(2, 1, 2.0 / 3.0 - 1e-300, 3);
    const auto dir = testing::scratch_dir("scores_csv");
    save_scores_csv(m, dir / "s.csv");
    CHECK(load_scores_csv(dir / "s.csv") == m);
    CHECK(m.row_means()[0] == doctest::Approx((0.1 + 1.0 / 3.0) / 2));
    CHECK_THROWS_AS(m.set(3, 0, 0.5, 1), InvalidArgument);
    CHECK_THROWS_AS(m.set(0, 0, 0.5, 0), InvalidArgument);

    io::write_file(dir / "bad.csv", "sample,epoch,score,batch\n");
    CHECK_THROWS_AS(load_scores_csv(dir / "bad.csv"), ParseError);
    io::write_file(dir / "sparse.csv", "sample_id,epoch,score,batch_size\n0,0,0.5,2\n1,1,0.5,2\n");
    CHECK_THROWS_AS(load_scores_csv(dir / "sparse.csv"), ParseError);
    io::write_file(dir / "short.csv", "sample_id,epoch,score,batch_size\n0,0,0.5\n");
    try {
        load_scores_csv(dir / "short.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}
