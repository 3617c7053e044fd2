#include "gradmimic/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

bool valid_name(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
    });
}

double to_number(const std::string& key, std::string_view raw) {
    const std::string tmp(trim(raw));
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
        throw ConfigError(key, "expected a number, got '" + tmp + "'");
    }
    return v;
}

}  // namespace

RunConfig RunConfig::parse(std::string_view text, const std::string& source) {
    RunConfig cfg;
    std::string section;
    const auto rows = io::lines(text);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::string_view line = rows[r];
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(source, r + 1, "unterminated section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            if (!valid_name(section)) throw ParseError(source, r + 1, "invalid section name");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError(source, r + 1, "expected key = value");
        const std::string key(trim(line.substr(0, eq)));
        if (!valid_name(key)) throw ParseError(source, r + 1, "invalid key '" + key + "'");
        if (section.empty()) throw ParseError(source, r + 1, "key '" + key + "' appears before any [section]");
        const std::string dotted = section + "." + key;
        if (cfg.values_.contains(dotted)) throw ParseError(source, r + 1, "duplicate key '" + dotted + "'");
        cfg.values_[dotted] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    RunConfig cfg = parse(io::read_file(path), path.string());
    cfg.base_dir_ = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return cfg;
}

void RunConfig::set(const std::string& key, std::string value) {
    const auto dot = key.find('.');
    if (dot == std::string::npos || !valid_name(std::string_view(key).substr(0, dot)) ||
        !valid_name(std::string_view(key).substr(dot + 1))) {
        throw ConfigError(key, "keys must look like section.key");
    }
    values_[key] = std::move(value);
}

void RunConfig::set_assignment(std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) throw ConfigError(std::string(assignment), "override must be section.key=value");
    set(std::string(trim(assignment.substr(0, eq))), std::string(trim(assignment.substr(eq + 1))));
}

std::optional<std::string> RunConfig::text(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

std::optional<double> RunConfig::number(const std::string& key) const {
    const auto raw = text(key);
    if (!raw) return std::nullopt;
    return to_number(key, *raw);
}

std::optional<std::size_t> RunConfig::count(const std::string& key) const {
    const auto v = u64(key);
    if (!v) return std::nullopt;
    return static_cast<std::size_t>(*v);
}

std::optional<std::uint64_t> RunConfig::u64(const std::string& key) const {
    const auto raw = text(key);
    if (!raw) return std::nullopt;
    const std::string_view s = trim(*raw);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ConfigError(key, "expected a non-negative integer, got '" + *raw + "'");
    }
    return v;
}

std::optional<bool> RunConfig::flag(const std::string& key) const {
    const auto raw = text(key);
    if (!raw) return std::nullopt;
    if (*raw == "true" || *raw == "1" || *raw == "yes") return true;
    if (*raw == "false" || *raw == "0" || *raw == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + *raw + "'");
}

std::optional<std::vector<double>> RunConfig::number_list(const std::string& key) const {
    const auto raw = text(key);
    if (!raw) return std::nullopt;
    std::vector<double> out;
    for (auto field : io::split_csv(*raw)) out.push_back(to_number(key, field));
    return out;
}

std::optional<std::filesystem::path> RunConfig::path(const std::string& key) const {
    const auto raw = text(key);
    if (!raw) return std::nullopt;
    std::filesystem::path p(*raw);
    if (p.is_relative()) p = base_dir_ / p;
    return p.lexically_normal();
}

void RunConfig::reject_unknown(const std::vector<std::string>& known) const {
    for (const auto& [key, value] : values_) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(key, "unknown configuration key");
        }
    }
}

const std::vector<ConfigKey>& all_config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"experiment.name", "denoise | noise_sweep | membership | temp_ablation | convergence"},
        {"experiment.seed", "master seed (the --seed flag overrides it)"},
        {"experiment.output_dir", "directory for reports, relative to the config file"},
        {"experiment.noise_levels", "comma-separated label-noise levels (noise_sweep)"},
        {"experiment.temperatures", "comma-separated temperatures (temp_ablation)"},
        {"experiment.subset_fraction", "fraction of the pool used to train the reference (membership)"},
        {"experiment.random_draws", "random selections averaged for the membership baseline"},
        {"experiment.target_accuracy", "accuracy target for convergence; default: uniform's final accuracy"},
        {"experiment.repeats", "independent repetitions with derived seeds"},
        {"dataset.num_classes", "number of Gaussian blobs"},
        {"dataset.per_class", "training samples per class"},
        {"dataset.test_per_class", "held-out samples per class"},
        {"dataset.dim", "feature dimension"},
        {"dataset.class_separation", "radius of the circle holding the class means"},
        {"dataset.cluster_std", "per-coordinate standard deviation within a class"},
        {"dataset.noise_level", "fraction of training labels flipped"},
        {"model.kind", "linear_softmax | mlp_one_hidden"},
        {"model.hidden_dim", "hidden units (mlp_one_hidden)"},
        {"model.init_scale", "weights start Uniform(-s, s)"},
        {"train.learning_rate", "SGD step size"},
        {"train.batch_size", "mini-batch size"},
        {"train.epochs", "passes over the training set"},
        {"train.shuffle", "reshuffle every epoch (true | false)"},
        {"train.mask", "segments compared with the reference: last_layer | all | comma list"},
        {"train.reference_epochs", "epochs used to train the reference model"},
        {"mimic.weighting", "mimic | grand | uniform"},
        {"mimic.temperature", "softmax temperature for mimic weights"},
        {"mimic.reference_noise", "std of Gaussian noise added to the reference weights"},
        {"filter.method", "threshold | kmeans | gmm | topk"},
        {"filter.topk_percent", "percentage retained by the topk binarizer"},
    };
    return keys;
}

}  // namespace gradmimic
