#include "gradmimic/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradmimic/config.hpp"
#include "gradmimic/errors.hpp"
#include "gradmimic/filterkit.hpp"
#include "gradmimic/harness.hpp"
#include "gradmimic/io.hpp"
#include "gradmimic/theory.hpp"

namespace gradmimic {

namespace {

namespace fs = std::filesystem;
using io::format_double;

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> overrides;
};

std::string keys_footer() {
    std::string text = "Configuration keys (file sections or --set section.key=value):\n";
    for (const auto& k : all_config_keys()) {
        std::string line = "  " + k.key;
        line.resize(std::max<std::size_t>(line.size() + 1, 32), ' ');
        text += line + k.description + "\n";
    }
    return text;
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool needs_out) {
    cmd->add_option("--config", opts.config, "Sectioned key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", opts.seed, "Master seed (overrides experiment.seed)");
    auto* out = cmd->add_option("--out", opts.out, "Directory receiving every output file");
    if (needs_out) out->required();
    cmd->add_option("--set", opts.overrides, "Override a config key: section.key=value");
    cmd->footer(keys_footer());
}

/// Config file, then --set overrides, then --seed.
ExperimentConfig resolve_config(const CommonOptions& opts) {
    RunConfig rc;
    try {
        if (!opts.config.empty()) rc = RunConfig::load(opts.config);
    } catch (const ParseError& e) {
        throw ConfigError("--config", e.what());
    }
    for (const auto& o : opts.overrides) rc.set_assignment(o);
    if (opts.seed) rc.set("experiment.seed", std::to_string(*opts.seed));
    return experiment_config_from(rc);
}

/// Spec for a model trained on `ds` under `cfg`.
ModelSpec spec_for(const ExperimentConfig& cfg, const LabeledDataset& ds) {
    ModelSpec spec = cfg.model_spec();
    spec.input_dim = ds.dim();
    spec.num_classes = std::max(ds.num_classes, cfg.blobs.num_classes);
    spec.validate();
    return spec;
}

TrainConfig training_for(const ExperimentConfig& cfg, const ModelSpec& spec, std::string_view purpose) {
    TrainConfig t = cfg.train_config();
    t.mask = resolve_mask(cfg.mask, spec);
    t.seed = derive_seed(cfg.seed, purpose);
    return t;
}

std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

nlohmann::ordered_json number(double v) { return nlohmann::ordered_json::parse(format_double(v)); }

int cmd_gen_data(const CommonOptions& opts, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    BlobParams test_params = cfg.blobs;
    test_params.per_class = cfg.test_per_class;
    const LabeledDataset clean = gen_gaussian_blobs(cfg.blobs, derive_seed(cfg.seed, "dataset.train"));
    const LabeledDataset test = gen_gaussian_blobs(test_params, derive_seed(cfg.seed, "dataset.test"));
    const LabeledDataset noisy = inject_label_noise(clean, cfg.noise_level, derive_seed(cfg.seed, "dataset.noise"));
    const fs::path dir(opts.out);
    save_csv(noisy, dir / "train.csv");
    save_csv(clean, dir / "train_clean.csv");
    save_csv(test, dir / "test.csv");
    out << "wrote " << (dir / "train.csv").string() << " (" << noisy.size() << " samples, "
        << noisy.flipped_indices().size() << " flipped)\n";
    out << "wrote " << (dir / "train_clean.csv").string() << "\n";
    out << "wrote " << (dir / "test.csv").string() << " (" << test.size() << " samples)\n";
    return 0;
}

int cmd_train_ref(const CommonOptions& opts, const std::string& data, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    const LabeledDataset ds = load_csv(data);
    const ModelSpec spec = spec_for(cfg, ds);
    TrainConfig t = training_for(cfg, spec, "reference");
    t.epochs = cfg.reference_epochs;
    t.mimic.weighting = Weighting::uniform;
    const ParamVector theta = train_reference(ds, spec, t);
    const fs::path path = fs::path(opts.out) / "reference.json";
    save_params(theta, path);
    out << "wrote " << path.string() << " (train accuracy " << format_double(accuracy(theta, ds)) << ")\n";
    return 0;
}

int cmd_train(const CommonOptions& opts, const std::string& data, const std::string& ref_path,
              const std::string& eval_path, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    if (cfg.weighting == Weighting::mimic && ref_path.empty()) {
        throw ConfigError("mimic.weighting", "mimic weighting needs a reference model (pass --ref)");
    }
    const LabeledDataset ds = load_csv(data);
    const ModelSpec spec = spec_for(cfg, ds);
    const TrainConfig t = training_for(cfg, spec, "run");
    t.validate(ds.size());

    std::optional<ReferenceTarget> ref;
    if (!ref_path.empty()) {
        ParamVector theta_ref = load_params(ref_path);
        if (cfg.reference_noise > 0.0) {
            theta_ref = degrade_reference(theta_ref, cfg.reference_noise, derive_seed(cfg.seed, "reference.degrade"));
        }
        ref = ReferenceTarget{std::move(theta_ref), t.mask};
    }
    std::optional<LabeledDataset> eval;
    if (!eval_path.empty()) eval = load_csv(eval_path);

    const TrainReport report = train(ds, spec, t, ref, eval ? &*eval : nullptr);
    const fs::path dir(opts.out);
    save_params(report.theta_final, dir / "model.json");
    io::write_file(dir / "train_report.json", report_to_json(report, t));
    out << "wrote " << (dir / "model.json").string() << "\n";
    out << "wrote " << (dir / "train_report.json").string() << "\n";
    if (report.score_matrix) {
        save_scores_csv(*report.score_matrix, dir / "scores.csv");
        out << "wrote " << (dir / "scores.csv").string() << "\n";
    }
    if (eval) out << "final eval accuracy " << format_double(*report.per_epoch.back().eval_accuracy) << "\n";
    for (const auto& w : report.warnings) out << "warning: " << w << "\n";
    return 0;
}

int cmd_filter(const CommonOptions& opts, const std::string& scores_path, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    const ScoreMatrix scores = load_scores_csv(scores_path);
    const VoteMatrix votes = binarize(scores, cfg.filter);
    const FilterDecision decision = aggregate_em(votes);
    const QualityStats q = quality_stats(decision, scores);

    const fs::path dir(opts.out);
    save_votes_csv(votes, dir / "votes.csv");
    save_decision_csv(decision, dir / "decision.csv");

    nlohmann::ordered_json j;
    j["method"] = to_string(cfg.filter.method);
    if (cfg.filter.method == Binarizer::topk) j["topk_percent"] = number(cfg.filter.topk_percent);
    j["num_samples"] = scores.num_samples();
    j["epochs"] = scores.epochs();
    j["retained"] = decision.retained.size();
    j["retention_rate"] = number(q.retention_rate);
    j["avg_mimic"] = number(q.avg_mimic);
    j["avg_mimic_retained"] = number(q.avg_mimic_retained);
    auto& lm = j["label_model"];
    lm["prior_retain"] = number(decision.model.prior_retain);
    lm["p_vote_given_retain"] = nlohmann::ordered_json::array();
    lm["p_vote_given_discard"] = nlohmann::ordered_json::array();
    for (double a : decision.model.p_vote_given_retain) lm["p_vote_given_retain"].push_back(number(a));
    for (double b : decision.model.p_vote_given_discard) lm["p_vote_given_discard"].push_back(number(b));
    lm["iterations"] = decision.model.iterations;
    lm["log_likelihood"] = number(decision.model.log_likelihood);
    io::write_file(dir / "filter_report.json", json_text(j));

    out << "retained " << decision.retained.size() << " of " << scores.num_samples() << " (retention "
        << format_double(q.retention_rate) << ")\n";
    out << "wrote " << (dir / "decision.csv").string() << "\n";
    return 0;
}

int cmd_report(const CommonOptions& opts, const std::string& scores_path, const std::string& decision_path,
               const std::string& data_path, std::ostream& out) {
    resolve_config(opts);  // validates keys and the seed even though nothing is random here
    const ScoreMatrix scores = load_scores_csv(scores_path);
    const FilterDecision decision = load_decision_csv(decision_path);
    const QualityStats q = quality_stats(decision, scores);
    nlohmann::ordered_json j;
    j["num_samples"] = scores.num_samples();
    j["retained"] = decision.retained.size();
    j["retention_rate"] = number(q.retention_rate);
    j["avg_mimic"] = number(q.avg_mimic);
    j["avg_mimic_retained"] = number(q.avg_mimic_retained);
    if (!data_path.empty()) {
        const LabeledDataset ds = load_csv(data_path);
        if (ds.size() != scores.num_samples()) {
            throw InvalidArgument("report: dataset and score matrix disagree on the number of samples");
        }
        if (ds.has_flips()) j["detection_f1"] = number(detection_f1(decision, ds));
    }
    const std::string text = json_text(j);
    io::write_file(fs::path(opts.out) / "quality_report.json", text);
    out << text;
    return 0;
}

int cmd_verify_theory(const CommonOptions& opts, std::size_t trials, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    const std::string text = theory::theory_report_json(theory::verify_theory(trials, cfg.seed));
    if (!opts.out.empty()) io::write_file(fs::path(opts.out) / "verify_theory.json", text);
    out << text;
    return 0;
}

int cmd_experiment(const CommonOptions& opts, std::ostream& out) {
    const ExperimentConfig cfg = resolve_config(opts);
    fs::path dir = opts.out.empty() ? cfg.output_dir : fs::path(opts.out);
    if (dir.empty()) throw ConfigError("experiment.output_dir", "no output directory (set it or pass --out)");
    ExperimentReport report = run_experiment(cfg);
    write_report(report, cfg, dir);
    out << report.experiment << " " << report.config_hash << "\n";
    for (const auto& [name, value] : report.metrics) out << "  " << name << " = " << format_double(value) << "\n";
    for (const auto& p : report.artifacts) out << "wrote " << p.string() << "\n";
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Grad-Mimic data selection: generate data, train, filter and report", "gradmimic"};
    app.require_subcommand(1);
    app.footer("Run `gradmimic <subcommand> --help` for options and configuration keys.");

    CommonOptions opts;
    std::string data, ref, eval, scores, decision;
    std::size_t trials = 1000;

    auto* gen = app.add_subcommand("gen-data", "Write noisy, clean and held-out Gaussian-blob CSVs");
    add_common(gen, opts, true);

    auto* tref = app.add_subcommand("train-ref", "Train the reference model on clean data");
    add_common(tref, opts, true);
    tref->add_option("--data", data, "Clean training CSV")->required()->check(CLI::ExistingFile);

    auto* tr = app.add_subcommand("train", "Train with mimic, GraNd or uniform batch weighting");
    add_common(tr, opts, true);
    tr->add_option("--data", data, "Training CSV")->required()->check(CLI::ExistingFile);
    tr->add_option("--ref", ref, "Reference model JSON (required for mimic weighting)")->check(CLI::ExistingFile);
    tr->add_option("--eval", eval, "Held-out CSV evaluated after every epoch")->check(CLI::ExistingFile);

    auto* filt = app.add_subcommand("filter", "Binarize per-epoch scores and aggregate the votes");
    add_common(filt, opts, true);
    filt->add_option("--scores", scores, "Score CSV written by train")->required()->check(CLI::ExistingFile);

    auto* rep = app.add_subcommand("report", "Retention, mean score and (with flags) detection F1");
    add_common(rep, opts, true);
    rep->add_option("--scores", scores, "Score CSV written by train")->required()->check(CLI::ExistingFile);
    rep->add_option("--decision", decision, "Decision CSV written by filter")->required()->check(CLI::ExistingFile);
    rep->add_option("--data", data, "Training CSV carrying flip flags")->check(CLI::ExistingFile);

    auto* theory_cmd = app.add_subcommand("verify-theory", "Check the step-comparison identities on random instances");
    add_common(theory_cmd, opts, false);
    theory_cmd->add_option("--trials", trials, "Random draws per check")->check(CLI::PositiveNumber);

    auto* exp = app.add_subcommand("experiment", "Run a configured experiment and write its report");
    add_common(exp, opts, false);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts, out);
        if (tref->parsed()) return cmd_train_ref(opts, data, out);
        if (tr->parsed()) return cmd_train(opts, data, ref, eval, out);
        if (filt->parsed()) return cmd_filter(opts, scores, out);
        if (rep->parsed()) return cmd_report(opts, scores, decision, data, out);
        if (theory_cmd->parsed()) return cmd_verify_theory(opts, trials, out);
        if (exp->parsed()) return cmd_experiment(opts, out);
    } catch (const ConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    err << app.help();
    return 1;
}

}  // namespace gradmimic
