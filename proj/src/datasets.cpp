#include "gradmimic/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

bool operator==(const Sample& a, const Sample& b) {
    return a.id == b.id && a.label == b.label && a.features == b.features;
}

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.num_classes == b.num_classes && a.samples == b.samples && a.flip_flags == b.flip_flags &&
           a.clean_labels == b.clean_labels;
}

bool LabeledDataset::has_flips() const {
    return flip_flags && std::any_of(flip_flags->begin(), flip_flags->end(), [](bool f) { return f; });
}

IndexSet LabeledDataset::flipped_indices() const {
    if (!flip_flags) throw InvalidArgument("dataset carries no flip flags");
    IndexSet out;
    for (std::size_t i = 0; i < flip_flags->size(); ++i) {
        if ((*flip_flags)[i]) out.push_back(i);
    }
    return out;
}

LabeledDataset LabeledDataset::with_clean_labels() const {
    LabeledDataset out = *this;
    if (clean_labels) {
        for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i].label = (*clean_labels)[i];
    }
    out.clean_labels.emplace();
    for (const auto& s : out.samples) out.clean_labels->push_back(s.label);
    out.flip_flags = std::vector<bool>(out.samples.size(), false);
    return out;
}

LabeledDataset LabeledDataset::subset(const IndexSet& indices) const {
    LabeledDataset out;
    out.num_classes = num_classes;
    if (flip_flags) out.flip_flags.emplace();
    if (clean_labels) out.clean_labels.emplace();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= samples.size()) throw InvalidArgument("subset: index out of range");
        Sample s = samples[i];
        s.id = k;
        out.samples.push_back(std::move(s));
        if (flip_flags) out.flip_flags->push_back((*flip_flags)[i]);
        if (clean_labels) out.clean_labels->push_back((*clean_labels)[i]);
    }
    return out;
}

LabeledDataset gen_gaussian_blobs(const BlobParams& p, RngSeed seed) {
    if (p.num_classes < 2) throw InvalidArgument("gen_gaussian_blobs: num_classes must be >= 2");
    if (p.per_class < 1) throw InvalidArgument("gen_gaussian_blobs: per_class must be >= 1");
    if (p.dim < 2) throw InvalidArgument("gen_gaussian_blobs: dim must be >= 2");
    if (!(p.cluster_std >= 0.0) || !std::isfinite(p.class_separation)) {
        throw InvalidArgument("gen_gaussian_blobs: invalid separation or spread");
    }

    Rng rng(seed, "datasets.blobs");
    LabeledDataset ds;
    ds.num_classes = p.num_classes;
    const std::size_t n = p.num_classes * p.per_class;
    ds.samples.reserve(n);
    for (std::size_t c = 0; c < p.num_classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(p.num_classes);
        Vector center(p.dim, 0.0);
        center[0] = p.class_separation * std::cos(angle);
        center[1] = p.class_separation * std::sin(angle);
        for (std::size_t j = 0; j < p.per_class; ++j) {
            Sample s;
            s.id = ds.samples.size();
            s.label = c;
            s.features.resize(p.dim);
            for (std::size_t k = 0; k < p.dim; ++k) s.features[k] = center[k] + p.cluster_std * rng.normal();
            ds.samples.push_back(std::move(s));
        }
    }

    // Standardize each coordinate; constant coordinates are only centered.
    for (std::size_t k = 0; k < p.dim; ++k) {
        double mu = 0.0;
        for (const auto& s : ds.samples) mu += s.features[k];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (const auto& s : ds.samples) var += (s.features[k] - mu) * (s.features[k] - mu);
        var /= static_cast<double>(n);
        const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
        for (auto& s : ds.samples) s.features[k] = (s.features[k] - mu) / sd;
    }

    ds.clean_labels.emplace();
    for (const auto& s : ds.samples) ds.clean_labels->push_back(s.label);
    ds.flip_flags = std::vector<bool>(n, false);
    return ds;
}

LabeledDataset inject_label_noise(const LabeledDataset& ds, double noise_level, RngSeed seed) {
    if (!(noise_level >= 0.0 && noise_level <= 1.0)) {
        throw InvalidArgument("inject_label_noise: noise level must lie in [0, 1]");
    }
    if (ds.num_classes < 2) throw InvalidArgument("inject_label_noise: need at least two classes");

    LabeledDataset out = ds;
    if (!out.clean_labels) {
        out.clean_labels.emplace();
        for (const auto& s : out.samples) out.clean_labels->push_back(s.label);
    }
    if (!out.flip_flags) out.flip_flags = std::vector<bool>(out.size(), false);

    const std::size_t n = out.size();
    const auto flips = static_cast<std::size_t>(std::floor(noise_level * static_cast<double>(n)));
    Rng rng(seed, "datasets.label_noise");
    for (std::size_t i : rng.sample_without_replacement(n, flips)) {
        const std::size_t clean = (*out.clean_labels)[i];
        // Uniform over the C-1 wrong classes: draw an offset in [1, C).
        const std::size_t offset = 1 + rng.below(out.num_classes - 1);
        out.samples[i].label = (clean + offset) % out.num_classes;
    }
    for (std::size_t i = 0; i < n; ++i) (*out.flip_flags)[i] = out.samples[i].label != (*out.clean_labels)[i];
    return out;
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
    const std::size_t d = ds.dim();
    std::string text = "id,label,clean_label,flipped";
    for (std::size_t k = 0; k < d; ++k) text += ",f" + std::to_string(k);
    text += '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        const std::size_t clean = ds.clean_labels ? (*ds.clean_labels)[i] : s.label;
        const bool flipped = ds.flip_flags ? static_cast<bool>((*ds.flip_flags)[i]) : false;
        text += std::to_string(s.id) + ',' + std::to_string(s.label) + ',' + std::to_string(clean) + ',' +
                (flipped ? "1" : "0");
        for (double f : s.features) text += ',' + io::format_double(f);
        text += '\n';
    }
    io::write_file(path, text);
}

LabeledDataset load_csv(const std::filesystem::path& path) {
    const std::string source = path.string();
    const std::string text = io::read_file(path);
    const auto rows = io::lines(text);
    if (rows.empty() || rows.front().empty()) throw ParseError(source, 1, "missing header");

    const auto header = io::split_csv(rows.front());
    if (header.size() < 4 || header[0] != "id" || header[1] != "label" || header[2] != "clean_label" ||
        header[3] != "flipped") {
        throw ParseError(source, 1, "header must start with id,label,clean_label,flipped");
    }
    const std::size_t d = header.size() - 4;
    for (std::size_t k = 0; k < d; ++k) {
        if (header[4 + k] != "f" + std::to_string(k)) throw ParseError(source, 1, "feature columns must be f0..f{d-1}");
    }

    LabeledDataset ds;
    ds.clean_labels.emplace();
    ds.flip_flags.emplace();
    std::size_t max_label = 0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const std::size_t line_no = r + 1;
        if (rows[r].empty()) {
            if (r + 1 == rows.size()) break;
            throw ParseError(source, line_no, "empty record");
        }
        const auto fields = io::split_csv(rows[r]);
        if (fields.size() != header.size()) {
            throw ParseError(source, line_no,
                             "expected " + std::to_string(header.size()) + " columns, got " +
                                 std::to_string(fields.size()));
        }
        Sample s;
        s.id = io::parse_index(fields[0], source, line_no);
        s.label = io::parse_index(fields[1], source, line_no);
        const std::size_t clean = io::parse_index(fields[2], source, line_no);
        if (fields[3] != "0" && fields[3] != "1") throw ParseError(source, line_no, "flipped must be 0 or 1");
        const bool flipped = fields[3] == "1";
        if (flipped != (clean != s.label)) throw ParseError(source, line_no, "flipped flag disagrees with labels");
        s.features.reserve(d);
        for (std::size_t k = 0; k < d; ++k) s.features.push_back(io::parse_double(fields[4 + k], source, line_no));
        max_label = std::max({max_label, s.label, clean});
        ds.samples.push_back(std::move(s));
        ds.clean_labels->push_back(clean);
        ds.flip_flags->push_back(flipped);
    }
    // The schema does not store C; it is the largest label seen plus one.
    ds.num_classes = ds.samples.empty() ? 0 : max_label + 1;
    return ds;
}

}  // namespace gradmimic
