#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "gradmimic/cli.hpp"
#include "gradmimic/config.hpp"
#include "gradmimic/core.hpp"
#include "gradmimic/datasets.hpp"
#include "gradmimic/errors.hpp"
#include "gradmimic/filterkit.hpp"
#include "gradmimic/harness.hpp"
#include "gradmimic/mimic.hpp"
#include "gradmimic/theory.hpp"

namespace py = pybind11;
using namespace gradmimic;

namespace {

ExperimentConfig config_from_text(const std::string& text, std::optional<std::uint64_t> seed) {
    RunConfig rc = RunConfig::parse(text, "<python>");
    if (seed) rc.set("experiment.seed", std::to_string(*seed));
    return experiment_config_from(rc);
}

VoteMatrix votes_from_rows(const std::vector<std::vector<int>>& rows) {
    const std::size_t epochs = rows.empty() ? 0 : rows.front().size();
    VoteMatrix votes(rows.size(), epochs, Binarizer::threshold);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != epochs) throw InvalidArgument("aggregate_em: ragged vote rows");
        for (std::size_t e = 0; e < epochs; ++e) votes.set(i, e, rows[i][e] != 0);
    }
    return votes;
}

}  // namespace

PYBIND11_MODULE(_gradmimic, m) {
    m.doc() = "Grad-Mimic data selection (C++ core)";

    m.def("softmax", [](const std::vector<double>& s, double t) { return softmax(s, t); }, py::arg("scores"),
          py::arg("temperature") = 1.0);
    m.def("mimic_score", [](const std::vector<double>& g, const std::vector<double>& v) { return mimic_score(g, v); },
          py::arg("masked_grad"), py::arg("target"));
    m.def("normalize_scores", [](const std::vector<double>& s, double t) { return normalize_scores(s, t); },
          py::arg("raw_scores"), py::arg("temperature"));
    m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson(x, y); });

    m.def(
        "binarize",
        [](const std::vector<double>& scores, const std::string& method, std::vector<std::size_t> batch_sizes,
           double topk_percent) {
            switch (parse_binarizer(method)) {
                case Binarizer::threshold: return binarize_threshold(scores, batch_sizes);
                case Binarizer::kmeans: return binarize_kmeans(scores);
                case Binarizer::gmm: return binarize_gmm(scores);
                case Binarizer::topk: return binarize_topk(scores, topk_percent);
            }
            return Votes{};
        },
        py::arg("scores"), py::arg("method"), py::arg("batch_sizes") = std::vector<std::size_t>{},
        py::arg("topk_percent") = 50.0);

    m.def(
        "aggregate_em",
        [](const std::vector<std::vector<int>>& rows) {
            const FilterDecision d = aggregate_em(votes_from_rows(rows));
            py::dict out;
            out["retain_prob"] = d.retain_prob;
            out["retained"] = d.retained;
            out["prior_retain"] = d.model.prior_retain;
            out["p_vote_given_retain"] = d.model.p_vote_given_retain;
            out["p_vote_given_discard"] = d.model.p_vote_given_discard;
            out["iterations"] = d.model.iterations;
            out["log_likelihood"] = d.model.log_likelihood;
            return out;
        },
        py::arg("votes"));

    m.def(
        "gen_blobs",
        [](std::size_t num_classes, std::size_t per_class, std::size_t dim, double sep, double std_dev,
           double noise_level, std::uint64_t seed) {
            LabeledDataset ds =
                gen_gaussian_blobs(BlobParams{num_classes, per_class, dim, sep, std_dev}, derive_seed({seed}, "dataset.train"));
            if (noise_level > 0.0) ds = inject_label_noise(ds, noise_level, derive_seed({seed}, "dataset.noise"));
            std::vector<std::vector<double>> x;
            std::vector<std::size_t> y;
            for (const auto& s : ds.samples) {
                x.push_back(s.features);
                y.push_back(s.label);
            }
            return py::make_tuple(x, y, ds.has_flips() ? ds.flipped_indices() : IndexSet{});
        },
        py::arg("num_classes") = 5, py::arg("per_class") = 400, py::arg("dim") = 10, py::arg("class_separation") = 3.5,
        py::arg("cluster_std") = 1.0, py::arg("noise_level") = 0.0, py::arg("seed") = 0);

    m.def(
        "verify_theory",
        [](std::size_t trials, std::uint64_t seed) {
            py::gil_scoped_release release;
            return theory::theory_report_json(theory::verify_theory(trials, RngSeed{seed}));
        },
        py::arg("trials"), py::arg("seed"));

    m.def(
        "run_experiment",
        [](const std::string& config_text, std::optional<std::uint64_t> seed) {
            const ExperimentConfig cfg = config_from_text(config_text, seed);
            py::gil_scoped_release release;
            return report_json(run_experiment(cfg), cfg);
        },
        py::arg("config_text"), py::arg("seed") = py::none());

    m.def(
        "config_hash",
        [](const std::string& config_text, std::optional<std::uint64_t> seed) {
            return config_hash(config_from_text(config_text, seed));
        },
        py::arg("config_text"), py::arg("seed") = py::none());

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
