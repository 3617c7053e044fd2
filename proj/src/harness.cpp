#include "gradmimic/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <sstream>
#include <thread>

#include "gradmimic/core.hpp"
#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

namespace {

using io::format_double;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

/// Runs fn(0..n-1) on up to hardware_concurrency threads. Results are
/// written by index, so the outcome never depends on scheduling. The first
/// failing index's exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min<std::size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Seeds derived from the master seed, remembered for the report.
class SeedBook {
public:
    explicit SeedBook(RngSeed master) : master_(master) {}
    RngSeed operator()(const std::string& purpose) {
        const RngSeed s = derive_seed(master_, purpose);
        used_[purpose] = s.value;
        return s;
    }
    const std::map<std::string, std::uint64_t>& used() const { return used_; }

private:
    RngSeed master_;
    std::map<std::string, std::uint64_t> used_;
};

struct Workload {
    LabeledDataset clean;
    LabeledDataset test;
    ModelSpec spec;
    ReferenceTarget reference;
};

BlobParams test_blobs(const ExperimentConfig& cfg) {
    BlobParams p = cfg.blobs;
    p.per_class = cfg.test_per_class;
    return p;
}

TrainConfig reference_config(const ExperimentConfig& cfg, RngSeed seed) {
    TrainConfig t = cfg.train_config();
    t.epochs = cfg.reference_epochs;
    t.mimic.weighting = Weighting::uniform;
    t.seed = seed;
    return t;
}

ParamVector maybe_degrade(const ExperimentConfig& cfg, ParamVector theta, SeedBook& seeds) {
    if (cfg.reference_noise > 0.0) theta = degrade_reference(theta, cfg.reference_noise, seeds("reference.degrade"));
    return theta;
}

/// Clean training blobs, a held-out draw and a reference trained on the
/// clean labels.
Workload prepare_workload(const ExperimentConfig& cfg, SeedBook& seeds) {
    Workload w;
    w.spec = cfg.model_spec();
    w.clean = gen_gaussian_blobs(cfg.blobs, seeds("dataset.train"));
    w.test = gen_gaussian_blobs(test_blobs(cfg), seeds("dataset.test"));
    ParamVector ref = train_reference(w.clean, w.spec, reference_config(cfg, seeds("reference")));
    w.reference = ReferenceTarget{maybe_degrade(cfg, std::move(ref), seeds), resolve_mask(cfg.mask, w.spec)};
    return w;
}

TrainConfig run_config(const ExperimentConfig& cfg, Weighting weighting, SeedBook& seeds) {
    TrainConfig t = cfg.train_config();
    t.seed = seeds("run");
    t.mimic.weighting = weighting;
    return t;
}

double final_accuracy(const TrainReport& r) { return r.per_epoch.back().eval_accuracy.value(); }

std::string csv_row(std::initializer_list<std::string> fields) {
    std::string out;
    for (const auto& f : fields) {
        if (!out.empty()) out += ',';
        out += f;
    }
    return out + "\n";
}

nlohmann::ordered_json json_number(double v) {
    // Round-trips through %.17g like every other number we emit.
    return nlohmann::ordered_json::parse(format_double(v));
}

struct ScoreMeans {
    std::vector<double> clean;
    std::vector<std::optional<double>> flipped;
};

ScoreMeans epoch_score_means(const ScoreMatrix& m, const LabeledDataset& ds) {
    const auto& flags = ds.flip_flags.value();
    ScoreMeans out;
    for (std::size_t e = 0; e < m.epochs(); ++e) {
        double c = 0.0, f = 0.0;
        std::size_t nc = 0, nf = 0;
        for (std::size_t i = 0; i < m.num_samples(); ++i) {
            if (flags[i]) {
                f += m.score(i, e);
                ++nf;
            } else {
                c += m.score(i, e);
                ++nc;
            }
        }
        out.clean.push_back(nc ? c / static_cast<double>(nc) : 0.0);
        out.flipped.push_back(nf ? std::optional<double>(f / static_cast<double>(nf)) : std::nullopt);
    }
    return out;
}

/// Shortest text that reads back as `v`, for metric names and table keys.
std::string short_label(double v) {
    char buf[32];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

ExperimentReport start_report(const ExperimentConfig& cfg) {
    ExperimentReport r;
    r.experiment = std::string(to_string(cfg.kind));
    r.config_hash = config_hash(cfg);
    return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::denoise: return "denoise";
        case ExperimentKind::noise_sweep: return "noise_sweep";
        case ExperimentKind::membership: return "membership";
        case ExperimentKind::temp_ablation: return "temp_ablation";
        case ExperimentKind::convergence: return "convergence";
    }
    return "denoise";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
    for (auto k : {ExperimentKind::denoise, ExperimentKind::noise_sweep, ExperimentKind::membership,
                   ExperimentKind::temp_ablation, ExperimentKind::convergence}) {
        if (to_string(k) == name) return k;
    }
    throw ConfigError("experiment.name", "unknown experiment '" + std::string(name) + "'");
}

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec s;
    s.kind = model_kind;
    s.input_dim = blobs.dim;
    s.num_classes = blobs.num_classes;
    s.hidden_dim = model_kind == ModelKind::mlp_one_hidden ? hidden_dim : 0;
    s.init_scale = init_scale;
    return s;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig t;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.epochs = epochs;
    t.mimic.temperature = temperature;
    t.mimic.weighting = weighting;
    t.mask = resolve_mask(mask, model_spec());
    t.seed = seed;
    t.shuffle = shuffle;
    return t;
}

ParamMask resolve_mask(std::string_view name, const ModelSpec& spec) {
    ParamMask m;
    if (name == "last_layer") {
        m = ParamMask::last_layer();
    } else if (name == "all") {
        m = ParamMask::all(spec);
    } else {
        for (auto part : io::split_csv(name)) {
            std::string seg(part);
            seg.erase(0, seg.find_first_not_of(' '));
            seg.erase(seg.find_last_not_of(' ') + 1);
            m.included_segments.insert(seg);
        }
    }
    try {
        m.validate(spec);
    } catch (const InvalidArgument& e) {
        throw ConfigError("train.mask", e.what());
    }
    return m;
}

void ExperimentConfig::validate() const {
    auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
    if (blobs.num_classes < 2) fail("dataset.num_classes", "must be at least 2");
    if (blobs.per_class < 1) fail("dataset.per_class", "must be at least 1");
    if (test_per_class < 1) fail("dataset.test_per_class", "must be at least 1");
    if (blobs.dim < 2) fail("dataset.dim", "must be at least 2");
    if (!(blobs.class_separation >= 0.0)) fail("dataset.class_separation", "must be non-negative");
    if (!(blobs.cluster_std > 0.0)) fail("dataset.cluster_std", "must be positive");
    if (!(noise_level >= 0.0 && noise_level < 1.0)) fail("dataset.noise_level", "must lie in [0, 1)");
    if (model_kind == ModelKind::mlp_one_hidden && hidden_dim < 1) fail("model.hidden_dim", "must be at least 1");
    if (!(init_scale >= 0.0)) fail("model.init_scale", "must be non-negative");
    if (reference_epochs < 1) fail("train.reference_epochs", "must be at least 1");
    if (!(reference_noise >= 0.0)) fail("mimic.reference_noise", "must be non-negative");
    if (!(filter.topk_percent > 0.0 && filter.topk_percent <= 100.0)) fail("filter.topk_percent", "must lie in (0, 100]");
    if (noise_levels.empty()) fail("experiment.noise_levels", "must not be empty");
    for (double r : noise_levels) {
        if (!(r >= 0.0 && r < 1.0)) fail("experiment.noise_levels", "levels must lie in [0, 1)");
    }
    if (temperatures.empty()) fail("experiment.temperatures", "must not be empty");
    for (double t : temperatures) {
        if (!(t > 0.0) || !std::isfinite(t)) fail("experiment.temperatures", "temperatures must be positive");
    }
    if (!(subset_fraction > 0.0 && subset_fraction < 1.0)) fail("experiment.subset_fraction", "must lie in (0, 1)");
    if (random_draws < 1) fail("experiment.random_draws", "must be at least 1");
    if (target_accuracy && !(*target_accuracy > 0.0 && *target_accuracy <= 1.0)) {
        fail("experiment.target_accuracy", "must lie in (0, 1]");
    }
    if (repeats < 1) fail("experiment.repeats", "must be at least 1");
    train_config().validate(blobs.num_classes * blobs.per_class);
}

ExperimentConfig experiment_config_from(const RunConfig& rc) {
    std::vector<std::string> known;
    for (const auto& k : all_config_keys()) known.push_back(k.key);
    rc.reject_unknown(known);

    ExperimentConfig c;
    const auto seed = rc.u64("experiment.seed");
    if (!seed) throw ConfigError("experiment.seed", "a seed is required (pass --seed)");
    c.seed = RngSeed{*seed};
    if (auto v = rc.text("experiment.name")) c.kind = parse_experiment_kind(*v);
    if (auto v = rc.path("experiment.output_dir")) c.output_dir = *v;
    if (auto v = rc.number_list("experiment.noise_levels")) c.noise_levels = *v;
    if (auto v = rc.number_list("experiment.temperatures")) c.temperatures = *v;
    if (auto v = rc.number("experiment.subset_fraction")) c.subset_fraction = *v;
    if (auto v = rc.count("experiment.random_draws")) c.random_draws = *v;
    if (auto v = rc.number("experiment.target_accuracy")) c.target_accuracy = *v;
    if (auto v = rc.count("experiment.repeats")) c.repeats = *v;

    if (auto v = rc.count("dataset.num_classes")) c.blobs.num_classes = *v;
    if (auto v = rc.count("dataset.per_class")) c.blobs.per_class = *v;
    if (auto v = rc.count("dataset.test_per_class")) c.test_per_class = *v;
    if (auto v = rc.count("dataset.dim")) c.blobs.dim = *v;
    if (auto v = rc.number("dataset.class_separation")) c.blobs.class_separation = *v;
    if (auto v = rc.number("dataset.cluster_std")) c.blobs.cluster_std = *v;
    if (auto v = rc.number("dataset.noise_level")) c.noise_level = *v;

    try {
        if (auto v = rc.text("model.kind")) c.model_kind = parse_model_kind(*v);
    } catch (const InvalidArgument& e) {
        throw ConfigError("model.kind", e.what());
    }
    if (auto v = rc.count("model.hidden_dim")) c.hidden_dim = *v;
    if (auto v = rc.number("model.init_scale")) c.init_scale = *v;

    if (auto v = rc.number("train.learning_rate")) c.learning_rate = *v;
    if (auto v = rc.count("train.batch_size")) c.batch_size = *v;
    if (auto v = rc.count("train.epochs")) c.epochs = *v;
    if (auto v = rc.flag("train.shuffle")) c.shuffle = *v;
    if (auto v = rc.text("train.mask")) c.mask = *v;
    if (auto v = rc.count("train.reference_epochs")) c.reference_epochs = *v;

    try {
        if (auto v = rc.text("mimic.weighting")) c.weighting = parse_weighting(*v);
    } catch (const InvalidArgument& e) {
        throw ConfigError("mimic.weighting", e.what());
    }
    if (auto v = rc.number("mimic.temperature")) c.temperature = *v;
    if (auto v = rc.number("mimic.reference_noise")) c.reference_noise = *v;

    try {
        if (auto v = rc.text("filter.method")) c.filter.method = parse_binarizer(*v);
    } catch (const InvalidArgument& e) {
        throw ConfigError("filter.method", e.what());
    }
    if (auto v = rc.number("filter.topk_percent")) c.filter.topk_percent = *v;

    c.validate();
    return c;
}

std::string to_config_text(const ExperimentConfig& c) {
    auto list = [](const std::vector<double>& xs) {
        std::string out;
        for (double x : xs) {
            if (!out.empty()) out += ',';
            out += format_double(x);
        }
        return out;
    };
    std::ostringstream o;
    o << "[experiment]\n"
      << "name = " << to_string(c.kind) << "\n"
      << "seed = " << c.seed.value << "\n"
      << "noise_levels = " << list(c.noise_levels) << "\n"
      << "temperatures = " << list(c.temperatures) << "\n"
      << "subset_fraction = " << format_double(c.subset_fraction) << "\n"
      << "random_draws = " << c.random_draws << "\n";
    if (c.target_accuracy) o << "target_accuracy = " << format_double(*c.target_accuracy) << "\n";
    o << "repeats = " << c.repeats << "\n"
      << "\n[dataset]\n"
      << "num_classes = " << c.blobs.num_classes << "\n"
      << "per_class = " << c.blobs.per_class << "\n"
      << "test_per_class = " << c.test_per_class << "\n"
      << "dim = " << c.blobs.dim << "\n"
      << "class_separation = " << format_double(c.blobs.class_separation) << "\n"
      << "cluster_std = " << format_double(c.blobs.cluster_std) << "\n"
      << "noise_level = " << format_double(c.noise_level) << "\n"
      << "\n[model]\n"
      << "kind = " << to_string(c.model_kind) << "\n"
      << "hidden_dim = " << c.hidden_dim << "\n"
      << "init_scale = " << format_double(c.init_scale) << "\n"
      << "\n[train]\n"
      << "learning_rate = " << format_double(c.learning_rate) << "\n"
      << "batch_size = " << c.batch_size << "\n"
      << "epochs = " << c.epochs << "\n"
      << "shuffle = " << (c.shuffle ? "true" : "false") << "\n"
      << "mask = " << c.mask << "\n"
      << "reference_epochs = " << c.reference_epochs << "\n"
      << "\n[mimic]\n"
      << "weighting = " << to_string(c.weighting) << "\n"
      << "temperature = " << format_double(c.temperature) << "\n"
      << "reference_noise = " << format_double(c.reference_noise) << "\n"
      << "\n[filter]\n"
      << "method = " << to_string(c.filter.method) << "\n"
      << "topk_percent = " << format_double(c.filter.topk_percent) << "\n";
    return o.str();
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::uint64_t h = kFnvOffset;
    for (unsigned char ch : to_config_text(cfg)) {
        h ^= ch;
        h *= kFnvPrime;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Reports

std::string report_json(const ExperimentReport& report, const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["experiment"] = report.experiment;
    j["config_hash"] = report.config_hash;
    j["config"] = to_config_text(cfg);
    j["seeds"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.seeds) j["seeds"][k] = v;
    j["metrics"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.metrics) j["metrics"][k] = json_number(v);
    j["details"] = report.details;
    return j.dump(2) + "\n";
}

void write_report(ExperimentReport& report, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    const std::string stem = report.experiment + "_" + report.config_hash;
    const auto json_path = dir / (stem + ".json");
    const auto csv_path = dir / (stem + ".csv");
    io::write_file(json_path, report_json(report, cfg));
    io::write_file(csv_path, report.csv);
    report.artifacts = {json_path, csv_path};
}

// ---------------------------------------------------------------------------
// Experiments

ExperimentReport run_denoise(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!(cfg.noise_level > 0.0)) throw ConfigError("dataset.noise_level", "denoising needs label noise (> 0)");
    ExperimentReport rep = start_report(cfg);
    SeedBook seeds(cfg.seed);
    Workload w = prepare_workload(cfg, seeds);
    const LabeledDataset noisy = inject_label_noise(w.clean, cfg.noise_level, seeds("dataset.noise"));

    const Weighting modes[3] = {Weighting::mimic, Weighting::uniform, Weighting::grand};
    TrainConfig tcfg[3];
    for (int m = 0; m < 3; ++m) tcfg[m] = run_config(cfg, modes[m], seeds);
    TrainReport runs[3];
    parallel_for(3, [&](std::size_t m) {
        const auto ref = modes[m] == Weighting::mimic ? std::optional<ReferenceTarget>(w.reference) : std::nullopt;
        runs[m] = train(noisy, w.spec, tcfg[m], ref, &w.test);
    });
    const ScoreMatrix& scores = runs[0].score_matrix.value();

    for (auto b : {Binarizer::threshold, Binarizer::kmeans, Binarizer::gmm, Binarizer::topk}) {
        BinarizeOptions opt = cfg.filter;
        opt.method = b;
        const FilterDecision d = aggregate_em(binarize(scores, opt));
        rep.metrics["f1_" + std::string(to_string(b))] = detection_f1(d, noisy);
        if (b == cfg.filter.method) {
            const QualityStats q = quality_stats(d, scores);
            rep.metrics["f1"] = detection_f1(d, noisy);
            rep.metrics["retention_rate"] = q.retention_rate;
            rep.metrics["avg_mimic"] = q.avg_mimic;
            rep.metrics["avg_mimic_retained"] = q.avg_mimic_retained;
        }
    }
    rep.metrics["accuracy_reference"] = evaluate(w.reference.theta_ref, w.test);
    rep.metrics["accuracy_mimic"] = final_accuracy(runs[0]);
    rep.metrics["accuracy_uniform"] = final_accuracy(runs[1]);
    rep.metrics["accuracy_grand"] = final_accuracy(runs[2]);
    rep.metrics["accuracy_gain"] = final_accuracy(runs[0]) - final_accuracy(runs[1]);
    rep.metrics["num_flipped"] = static_cast<double>(noisy.flipped_indices().size());
    rep.metrics["degenerate_batches"] = static_cast<double>(runs[0].degenerate_batches);

    const ScoreMeans means = epoch_score_means(scores, noisy);
    std::size_t separated = 0;
    auto clean_curve = nlohmann::ordered_json::array();
    auto flipped_curve = nlohmann::ordered_json::array();
    rep.csv = csv_row({"epoch", "clean_mean_score", "flipped_mean_score", "accuracy_mimic", "accuracy_uniform",
                       "accuracy_grand"});
    for (std::size_t e = 0; e < scores.epochs(); ++e) {
        if (means.flipped[e] && means.clean[e] > *means.flipped[e]) ++separated;
        clean_curve.push_back(json_number(means.clean[e]));
        flipped_curve.push_back(means.flipped[e] ? json_number(*means.flipped[e]) : nlohmann::ordered_json());
        rep.csv += csv_row({std::to_string(e), format_double(means.clean[e]), opt_text(means.flipped[e]),
                            format_double(*runs[0].per_epoch[e].eval_accuracy),
                            format_double(*runs[1].per_epoch[e].eval_accuracy),
                            format_double(*runs[2].per_epoch[e].eval_accuracy)});
    }
    rep.metrics["separated_epochs"] = static_cast<double>(separated);
    rep.details["clean_mean_score"] = clean_curve;
    rep.details["flipped_mean_score"] = flipped_curve;
    rep.seeds = seeds.used();
    return rep;
}

ExperimentReport run_noise_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.noise_levels.size() < 4) throw ConfigError("experiment.noise_levels", "a sweep needs at least 4 levels");
    ExperimentReport rep = start_report(cfg);
    SeedBook seeds(cfg.seed);
    Workload w = prepare_workload(cfg, seeds);
    const RngSeed noise_seed = seeds("dataset.noise");
    const TrainConfig tcfg = run_config(cfg, Weighting::mimic, seeds);

    struct Level {
        double f1 = 0.0, retention = 0.0, avg_mimic = 0.0, avg_retained = 0.0, accuracy = 0.0;
    };
    std::vector<Level> levels(cfg.noise_levels.size());
    parallel_for(levels.size(), [&](std::size_t i) {
        const LabeledDataset noisy = inject_label_noise(w.clean, cfg.noise_levels[i], noise_seed);
        const TrainReport run = train(noisy, w.spec, tcfg, w.reference, &w.test);
        const FilterDecision d = aggregate_em(binarize(*run.score_matrix, cfg.filter));
        const QualityStats q = quality_stats(d, *run.score_matrix);
        levels[i] = {detection_f1(d, noisy), q.retention_rate, q.avg_mimic, q.avg_mimic_retained, final_accuracy(run)};
    });

    Vector retention;
    auto table = nlohmann::ordered_json::array();
    rep.csv = csv_row({"noise_level", "retention_rate", "avg_mimic", "avg_mimic_retained", "f1", "accuracy_mimic"});
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const std::string key = short_label(cfg.noise_levels[i]);
        const Level& l = levels[i];
        retention.push_back(l.retention);
        rep.metrics["retention_rate@" + key] = l.retention;
        rep.metrics["avg_mimic@" + key] = l.avg_mimic;
        rep.metrics["avg_mimic_retained@" + key] = l.avg_retained;
        rep.metrics["f1@" + key] = l.f1;
        rep.csv += csv_row({key, format_double(l.retention), format_double(l.avg_mimic),
                            format_double(l.avg_retained), format_double(l.f1),
                            format_double(l.accuracy)});
        nlohmann::ordered_json row;
        row["noise_level"] = json_number(cfg.noise_levels[i]);
        row["retention_rate"] = json_number(l.retention);
        row["avg_mimic"] = json_number(l.avg_mimic);
        row["avg_mimic_retained"] = json_number(l.avg_retained);
        row["f1"] = json_number(l.f1);
        row["accuracy_mimic"] = json_number(l.accuracy);
        table.push_back(row);
    }
    rep.details["levels"] = table;
    // Throws DegenerateError when either series is constant.
    rep.metrics["pearson_noise_retention"] = pearson(cfg.noise_levels, retention);
    rep.seeds = seeds.used();
    return rep;
}

ExperimentReport run_membership(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentReport rep = start_report(cfg);
    SeedBook seeds(cfg.seed);
    const ModelSpec spec = cfg.model_spec();
    LabeledDataset pool = gen_gaussian_blobs(cfg.blobs, seeds("dataset.train"));
    if (cfg.noise_level > 0.0) pool = inject_label_noise(pool, cfg.noise_level, seeds("dataset.noise"));
    const std::size_t n = pool.size();
    const auto k = static_cast<std::size_t>(std::llround(cfg.subset_fraction * static_cast<double>(n)));
    if (k < 1 || k >= n) throw ConfigError("experiment.subset_fraction", "subset must hold between 1 and n-1 samples");

    Rng subset_rng(seeds("membership.subset"));
    IndexSet subset = subset_rng.sample_without_replacement(n, k);
    std::sort(subset.begin(), subset.end());

    // The reference sees A with whatever labels the pool carries.
    TrainConfig ref_cfg = reference_config(cfg, seeds("reference"));
    const TrainReport ref_run = train(pool.subset(subset), spec, ref_cfg);
    ParamVector theta_ref = maybe_degrade(cfg, ref_run.theta_final, seeds);
    const ReferenceTarget target{theta_ref, resolve_mask(cfg.mask, spec)};

    const TrainReport run = train(pool, spec, run_config(cfg, Weighting::mimic, seeds), target);
    const Vector mean_score = run.score_matrix->row_means();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return mean_score[a] > mean_score[b]; });
    IndexSet selected(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(selected.begin(), selected.end());
    const SetOverlap mimic = jaccard_overlap(selected, subset);

    Rng base_rng(seeds("membership.baseline"));
    double jac = 0.0, ov = 0.0;
    for (std::size_t d = 0; d < cfg.random_draws; ++d) {
        IndexSet draw = base_rng.sample_without_replacement(n, k);
        std::sort(draw.begin(), draw.end());
        const SetOverlap r = jaccard_overlap(draw, subset);
        jac += r.jaccard;
        ov += r.overlap_fraction;
    }
    jac /= static_cast<double>(cfg.random_draws);
    ov /= static_cast<double>(cfg.random_draws);

    rep.metrics["subset_size"] = static_cast<double>(k);
    rep.metrics["jaccard_mimic"] = mimic.jaccard;
    rep.metrics["overlap_mimic"] = mimic.overlap_fraction;
    rep.metrics["jaccard_random"] = jac;
    rep.metrics["overlap_random"] = ov;
    rep.metrics["overlap_ratio"] = ov > 0.0 ? mimic.overlap_fraction / ov : 0.0;
    rep.metrics["reference_subset_accuracy"] = accuracy(theta_ref, pool.subset(subset));

    std::vector<std::uint8_t> in_subset(n, 0), in_selected(n, 0);
    for (auto i : subset) in_subset[i] = 1;
    for (auto i : selected) in_selected[i] = 1;
    rep.csv = csv_row({"sample_id", "mean_score", "in_subset", "selected"});
    for (std::size_t i = 0; i < n; ++i) {
        rep.csv += csv_row({std::to_string(i), format_double(mean_score[i]), std::to_string(in_subset[i]),
                            std::to_string(in_selected[i])});
    }
    rep.seeds = seeds.used();
    return rep;
}

ExperimentReport run_temp_ablation(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.temperatures.size() < 2) throw ConfigError("experiment.temperatures", "an ablation needs at least 2");
    ExperimentReport rep = start_report(cfg);
    SeedBook seeds(cfg.seed);
    Workload w = prepare_workload(cfg, seeds);
    const LabeledDataset noisy = inject_label_noise(w.clean, cfg.noise_level, seeds("dataset.noise"));
    const TrainConfig base = run_config(cfg, Weighting::mimic, seeds);

    const std::size_t nt = cfg.temperatures.size();
    Vector acc(nt + 1);
    parallel_for(nt + 1, [&](std::size_t i) {
        TrainConfig t = base;
        if (i < nt) {
            t.mimic.temperature = cfg.temperatures[i];
            acc[i] = final_accuracy(train(noisy, w.spec, t, w.reference, &w.test));
        } else {
            t.mimic.weighting = Weighting::uniform;
            acc[i] = final_accuracy(train(noisy, w.spec, t, std::nullopt, &w.test));
        }
    });

    rep.csv = csv_row({"weighting", "temperature", "test_accuracy"});
    for (std::size_t i = 0; i < nt; ++i) {
        const std::string tau = short_label(cfg.temperatures[i]);
        rep.metrics["accuracy_tau=" + tau] = acc[i];
        rep.csv += csv_row({"mimic", tau, format_double(acc[i])});
    }
    rep.metrics["accuracy_uniform"] = acc[nt];
    rep.csv += csv_row({"uniform", "", format_double(acc[nt])});
    rep.seeds = seeds.used();
    return rep;
}

ExperimentReport run_convergence(const ExperimentConfig& cfg) {
    cfg.validate();
    ExperimentReport rep = start_report(cfg);
    SeedBook seeds(cfg.seed);
    Workload w = prepare_workload(cfg, seeds);
    const LabeledDataset noisy = inject_label_noise(w.clean, cfg.noise_level, seeds("dataset.noise"));
    const TrainConfig mcfg = run_config(cfg, Weighting::mimic, seeds);
    const TrainConfig ucfg = run_config(cfg, Weighting::uniform, seeds);

    TrainReport runs[2];
    parallel_for(2, [&](std::size_t i) {
        runs[i] = i == 0 ? train(noisy, w.spec, mcfg, w.reference, &w.test)
                         : train(noisy, w.spec, ucfg, std::nullopt, &w.test);
    });
    const double target = cfg.target_accuracy.value_or(final_accuracy(runs[1]));

    auto first_reach = [&](const TrainReport& r) -> std::optional<std::size_t> {
        for (std::size_t e = 0; e < r.per_epoch.size(); ++e) {
            if (*r.per_epoch[e].eval_accuracy >= target) return e + 1;
        }
        return std::nullopt;
    };
    const auto em = first_reach(runs[0]);
    const auto eu = first_reach(runs[1]);

    rep.metrics["target_accuracy"] = target;
    rep.metrics["reached_mimic"] = em ? 1.0 : 0.0;
    rep.metrics["reached_uniform"] = eu ? 1.0 : 0.0;
    if (em) rep.metrics["epochs_to_target_mimic"] = static_cast<double>(*em);
    if (eu) rep.metrics["epochs_to_target_uniform"] = static_cast<double>(*eu);
    if (em && eu) rep.metrics["epoch_ratio"] = static_cast<double>(*em) / static_cast<double>(*eu);
    auto reach_json = [](const std::optional<std::size_t>& e) {
        return e ? nlohmann::ordered_json(*e) : nlohmann::ordered_json("not reached");
    };
    rep.details["epochs_to_target"]["mimic"] = reach_json(em);
    rep.details["epochs_to_target"]["uniform"] = reach_json(eu);

    rep.csv = csv_row({"epoch", "accuracy_mimic", "accuracy_uniform"});
    for (std::size_t e = 0; e < runs[0].per_epoch.size(); ++e) {
        rep.csv += csv_row({std::to_string(e + 1), format_double(*runs[0].per_epoch[e].eval_accuracy),
                            format_double(*runs[1].per_epoch[e].eval_accuracy)});
    }
    rep.seeds = seeds.used();
    return rep;
}

namespace {

ExperimentReport run_once(const ExperimentConfig& cfg) {
    switch (cfg.kind) {
        case ExperimentKind::denoise: return run_denoise(cfg);
        case ExperimentKind::noise_sweep: return run_noise_sweep(cfg);
        case ExperimentKind::membership: return run_membership(cfg);
        case ExperimentKind::temp_ablation: return run_temp_ablation(cfg);
        case ExperimentKind::convergence: return run_convergence(cfg);
    }
    throw ConfigError("experiment.name", "unknown experiment");
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.repeats == 1) return run_once(cfg);

    std::vector<ExperimentConfig> cfgs(cfg.repeats, cfg);
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
        cfgs[r].repeats = 1;
        cfgs[r].seed = derive_seed(cfg.seed, "repeat", r);
    }
    std::vector<ExperimentReport> parts(cfg.repeats);
    parallel_for(cfg.repeats, [&](std::size_t r) { parts[r] = run_once(cfgs[r]); });

    ExperimentReport rep = start_report(cfg);
    rep.csv = csv_row({"repeat", "seed", "metric", "value"});
    std::map<std::string, std::vector<double>> by_name;
    auto per_repeat = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < parts.size(); ++r) {
        rep.seeds["repeat." + std::to_string(r)] = cfgs[r].seed.value;
        for (const auto& [name, value] : parts[r].metrics) {
            rep.metrics["repeat_" + std::to_string(r) + "." + name] = value;
            by_name[name].push_back(value);
            rep.csv += csv_row({std::to_string(r), std::to_string(cfgs[r].seed.value), name, format_double(value)});
        }
        nlohmann::ordered_json entry;
        entry["seed"] = cfgs[r].seed.value;
        entry["details"] = parts[r].details;
        per_repeat.push_back(entry);
    }
    for (const auto& [name, values] : by_name) {
        // Metrics that only some repeats produce (e.g. epochs to a target that
        // was not always reached) get a count instead of a misleading mean.
        rep.metrics["count." + name] = static_cast<double>(values.size());
        if (values.size() != parts.size()) continue;
        rep.metrics["mean." + name] = mean(values);
        rep.metrics["min." + name] = *std::min_element(values.begin(), values.end());
        rep.metrics["max." + name] = *std::max_element(values.begin(), values.end());
    }
    rep.details["repeats"] = per_repeat;
    return rep;
}

}  // namespace gradmimic
