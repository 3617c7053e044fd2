#include <doctest.h>

#include <cmath>
#include <fstream>

#include "gradmimic/datasets.hpp"
#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"
#include "gradmimic/models.hpp"
#include "gradmimic/trainer.hpp"
#include "support.hpp"

using namespace gradmimic;

namespace {

std::size_t count_flags(const LabeledDataset& ds) {
    std::size_t c = 0;
    for (bool f : *ds.flip_flags) c += f;
    return c;
}

}  // namespace

TEST_CASE("well separated blobs are learnable to perfect train accuracy") {
    const LabeledDataset ds = gen_gaussian_blobs({2, 10, 2, 10.0, 0.1}, RngSeed{7});
    REQUIRE(ds.size() == 20);
    const ModelSpec spec{ModelKind::linear_softmax, 2, 2, 0, 0.1};
    TrainConfig cfg;
    cfg.batch_size = 5;
    cfg.epochs = 20;
    cfg.seed = RngSeed{1};
    const ParamVector theta = train_reference(ds, spec, cfg);
    CHECK(accuracy(theta, ds) == 1.0);
}

TEST_CASE("blob generation validates its arguments") {
    CHECK_THROWS_AS(gen_gaussian_blobs({3, 0, 4, 1.0, 1.0}, RngSeed{1}), InvalidArgument);
    CHECK_THROWS_AS(gen_gaussian_blobs({1, 5, 4, 1.0, 1.0}, RngSeed{1}), InvalidArgument);
    CHECK_THROWS_AS(gen_gaussian_blobs({3, 5, 1, 1.0, 1.0}, RngSeed{1}), InvalidArgument);
}

TEST_CASE("blob generation is deterministic to the byte") {
    const BlobParams p{4, 25, 6, 2.0, 1.0};
    const LabeledDataset a = gen_gaussian_blobs(p, RngSeed{99});
    const LabeledDataset b = gen_gaussian_blobs(p, RngSeed{99});
    CHECK(a == b);
    const auto dir = testing::scratch_dir("datasets_det");
    save_csv(a, dir / "a.csv");
    save_csv(b, dir / "b.csv");
    CHECK(io::read_file(dir / "a.csv") == io::read_file(dir / "b.csv"));
    CHECK(!(gen_gaussian_blobs(p, RngSeed{100}) == a));
}

TEST_CASE("blob features are standardized and classes ordered") {
    const LabeledDataset ds = gen_gaussian_blobs({5, 40, 7, 3.0, 1.0}, RngSeed{3});
    CHECK(ds.num_classes == 5);
    CHECK(ds.dim() == 7);
    for (std::size_t k = 0; k < 7; ++k) {
        double mu = 0.0, sq = 0.0;
        for (const auto& s : ds.samples) mu += s.features[k];
        mu /= double(ds.size());
        for (const auto& s : ds.samples) sq += (s.features[k] - mu) * (s.features[k] - mu);
        CHECK(std::abs(mu) < 1e-12);
        CHECK(std::abs(sq / double(ds.size()) - 1.0) < 1e-12);
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(ds.samples[i].id == i);
        CHECK(ds.samples[i].label == i / 40);
    }
    CHECK(!ds.has_flips());
}

TEST_CASE("label noise examples") {
    const LabeledDataset clean = gen_gaussian_blobs({2, 500, 3, 2.0, 1.0}, RngSeed{4});

    const LabeledDataset none = inject_label_noise(clean, 0.0, RngSeed{5});
    CHECK(none == clean);
    CHECK(count_flags(none) == 0);

    const LabeledDataset all = inject_label_noise(clean, 1.0, RngSeed{5});
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all.samples[i].label == 1 - clean.samples[i].label);
        CHECK((*all.flip_flags)[i]);
    }

    const LabeledDataset half = inject_label_noise(clean, 0.5, RngSeed{5});
    CHECK(half.size() == 1000);
    CHECK(count_flags(half) == 500);

    CHECK_THROWS_AS(inject_label_noise(clean, -0.1, RngSeed{5}), InvalidArgument);
    CHECK_THROWS_AS(inject_label_noise(clean, 1.5, RngSeed{5}), InvalidArgument);
}

TEST_CASE("flip count is exactly floor(rho n) and flags track labels") {
    testing::Draw d(8);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t c = d.index(2, 6), per = d.index(1, 40);
        const double rho = d.uniform(0.0, 1.0);
        const LabeledDataset clean = gen_gaussian_blobs({c, per, 2, 1.0, 1.0}, RngSeed{static_cast<std::uint64_t>(trial)});
        const LabeledDataset noisy = inject_label_noise(clean, rho, RngSeed{static_cast<std::uint64_t>(trial + 1000)});
        const std::size_t n = clean.size();
        CHECK(count_flags(noisy) == static_cast<std::size_t>(std::floor(rho * double(n))));
        for (std::size_t i = 0; i < n; ++i) {
            CHECK((*noisy.flip_flags)[i] == (noisy.samples[i].label != (*noisy.clean_labels)[i]));
            CHECK((*noisy.clean_labels)[i] == clean.samples[i].label);
            CHECK(noisy.samples[i].label < c);
            CHECK(noisy.samples[i].features == clean.samples[i].features);
        }
    }
}

TEST_CASE("wrong labels are spread over every other class") {
    // 2500 flips from class 0 of a 5-class set, expected 625 in each wrong class.
    LabeledDataset ds;
    ds.num_classes = 5;
    for (std::size_t i = 0; i < 2500; ++i) ds.samples.push_back({i, {0.0, 0.0}, 0});
    const LabeledDataset noisy = inject_label_noise(ds, 1.0, RngSeed{12});
    std::vector<double> counts(5, 0.0);
    for (const auto& s : noisy.samples) counts[s.label] += 1.0;
    CHECK(counts[0] == 0.0);
    double chi = 0.0;
    for (std::size_t k = 1; k < 5; ++k) chi += (counts[k] - 625.0) * (counts[k] - 625.0) / 625.0;
    CHECK(chi < 21.1);  // 3 dof, 99.99th percentile
}

TEST_CASE("csv round trip keeps labels, flags and every bit of the features") {
    const LabeledDataset clean = gen_gaussian_blobs({3, 20, 4, 2.0, 1.0}, RngSeed{6});
    const LabeledDataset noisy = inject_label_noise(clean, 0.3, RngSeed{7});
    const auto dir = testing::scratch_dir("datasets_csv");
    save_csv(noisy, dir / "noisy.csv");
    const LabeledDataset back = load_csv(dir / "noisy.csv");
    CHECK(back == noisy);
    CHECK(back.num_classes == 3);
    CHECK(io::read_file(dir / "noisy.csv").rfind("id,label,clean_label,flipped,f0,f1,f2,f3\n", 0) == 0);
}

TEST_CASE("csv parse errors name the line") {
    const auto dir = testing::scratch_dir("datasets_bad");
    io::write_file(dir / "empty.csv", "");
    try {
        load_csv(dir / "empty.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("missing header") != std::string::npos);
    }

    io::write_file(dir / "cols.csv", "id,label,clean_label,flipped,f0,f1\n0,1,1,0,0.5,0.25\n1,0,0,0,0.5\n");
    try {
        load_csv(dir / "cols.csv");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }

    io::write_file(dir / "flag.csv", "id,label,clean_label,flipped,f0\n0,1,1,1,0.5\n");
    CHECK_THROWS_AS(load_csv(dir / "flag.csv"), ParseError);
    io::write_file(dir / "num.csv", "id,label,clean_label,flipped,f0\n0,1,1,0,abc\n");
    CHECK_THROWS_AS(load_csv(dir / "num.csv"), ParseError);
    CHECK_THROWS(load_csv(dir / "does_not_exist.csv"));
}

TEST_CASE("subset renumbers ids and carries ground truth") {
    const LabeledDataset noisy = inject_label_noise(gen_gaussian_blobs({2, 10, 2, 1.0, 1.0}, RngSeed{1}), 0.5, RngSeed{2});
    const LabeledDataset sub = noisy.subset({7, 2, 15});
    REQUIRE(sub.size() == 3);
    CHECK(sub.samples[0].id == 0);
    CHECK(sub.samples[0].features == noisy.samples[7].features);
    CHECK((*sub.flip_flags)[2] == (*noisy.flip_flags)[15]);
    CHECK_THROWS_AS(noisy.subset({20}), InvalidArgument);
    CHECK(!sub.with_clean_labels().has_flips());
}
