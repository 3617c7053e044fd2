#include "gradmimic/models.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

namespace {

struct Forward {
    Vector hidden;  // tanh activations (mlp only)
    Vector logits;
};

void check_sample(const ModelSpec& spec, const Sample& s) {
    if (s.features.size() != spec.input_dim) {
        throw InvalidArgument("sample " + std::to_string(s.id) + " has " + std::to_string(s.features.size()) +
                              " features, model expects " + std::to_string(spec.input_dim));
    }
    if (s.label >= spec.num_classes) {
        throw InvalidArgument("sample " + std::to_string(s.id) + " label out of range");
    }
}

void check_theta(const ParamVector& theta) {
    if (theta.values.size() != param_count(theta.spec)) throw InvalidArgument("parameter vector has wrong length");
}

const Segment& find_segment(const std::vector<Segment>& layout, std::string_view name) {
    for (const auto& seg : layout) {
        if (seg.name == name) return seg;
    }
    throw InvalidArgument("unknown segment '" + std::string(name) + "'");
}

// out[r] = bias[r] + sum_k weights[r * cols + k] * in[k]
void affine(std::span<const double> weights, std::span<const double> bias, std::span<const double> in,
            std::span<double> out) {
    const std::size_t cols = in.size();
    for (std::size_t r = 0; r < out.size(); ++r) {
        double acc = bias[r];
        const double* row = weights.data() + r * cols;
        for (std::size_t k = 0; k < cols; ++k) acc += row[k] * in[k];
        out[r] = acc;
    }
}

Forward forward(const ParamVector& theta, std::span<const double> x) {
    const ModelSpec& spec = theta.spec;
    const auto layout = param_layout(spec);
    const std::span<const double> v(theta.values);
    auto block = [&](std::string_view name) {
        const Segment& seg = find_segment(layout, name);
        return v.subspan(seg.offset, seg.size);
    };

    Forward f;
    f.logits.resize(spec.num_classes);
    if (spec.kind == ModelKind::linear_softmax) {
        affine(block(kOutputWeights), block(kOutputBias), x, f.logits);
    } else {
        f.hidden.resize(spec.hidden_dim);
        affine(block(kHiddenWeights), block(kHiddenBias), x, f.hidden);
        for (double& h : f.hidden) h = std::tanh(h);
        affine(block(kOutputWeights), block(kOutputBias), f.hidden, f.logits);
    }
    return f;
}

}  // namespace

std::string_view to_string(ModelKind kind) {
    return kind == ModelKind::linear_softmax ? "linear_softmax" : "mlp_one_hidden";
}

ModelKind parse_model_kind(std::string_view name) {
    if (name == "linear_softmax") return ModelKind::linear_softmax;
    if (name == "mlp_one_hidden") return ModelKind::mlp_one_hidden;
    throw InvalidArgument("unknown model kind '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    if (input_dim == 0) throw InvalidArgument("model input_dim must be positive");
    if (num_classes < 2) throw InvalidArgument("model num_classes must be >= 2");
    if (kind == ModelKind::mlp_one_hidden && hidden_dim == 0) throw InvalidArgument("mlp hidden_dim must be positive");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw InvalidArgument("init_scale must be >= 0");
}

std::vector<Segment> param_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<Segment> out;
    std::size_t offset = 0;
    auto add = [&](std::string_view name, std::size_t size) {
        out.push_back(Segment{std::string(name), offset, size});
        offset += size;
    };
    if (spec.kind == ModelKind::mlp_one_hidden) {
        add(kHiddenWeights, spec.hidden_dim * spec.input_dim);
        add(kHiddenBias, spec.hidden_dim);
        add(kOutputWeights, spec.num_classes * spec.hidden_dim);
    } else {
        add(kOutputWeights, spec.num_classes * spec.input_dim);
    }
    add(kOutputBias, spec.num_classes);
    return out;
}

std::size_t param_count(const ModelSpec& spec) {
    const auto layout = param_layout(spec);
    return layout.back().offset + layout.back().size;
}

ParamMask ParamMask::all(const ModelSpec& spec) {
    ParamMask m;
    for (const auto& seg : param_layout(spec)) m.included_segments.insert(seg.name);
    return m;
}

ParamMask ParamMask::last_layer() {
    return ParamMask{{std::string(kOutputWeights), std::string(kOutputBias)}};
}

void ParamMask::validate(const ModelSpec& spec) const {
    if (included_segments.empty()) throw InvalidArgument("parameter mask is empty");
    const auto layout = param_layout(spec);
    for (const auto& name : included_segments) find_segment(layout, name);
}

Vector extract_masked(std::span<const double> values, const ModelSpec& spec, const ParamMask& mask) {
    mask.validate(spec);
    if (values.size() != param_count(spec)) throw InvalidArgument("extract_masked: length does not match spec");
    Vector out;
    for (const auto& seg : param_layout(spec)) {
        if (!mask.included_segments.contains(seg.name)) continue;
        out.insert(out.end(), values.begin() + static_cast<std::ptrdiff_t>(seg.offset),
                   values.begin() + static_cast<std::ptrdiff_t>(seg.offset + seg.size));
    }
    return out;
}

void write_masked(std::span<double> values, const ModelSpec& spec, const ParamMask& mask,
                  std::span<const double> masked) {
    mask.validate(spec);
    if (values.size() != param_count(spec)) throw InvalidArgument("write_masked: length does not match spec");
    std::size_t pos = 0;
    for (const auto& seg : param_layout(spec)) {
        if (!mask.included_segments.contains(seg.name)) continue;
        if (pos + seg.size > masked.size()) throw InvalidArgument("write_masked: masked vector too short");
        std::copy_n(masked.begin() + static_cast<std::ptrdiff_t>(pos), seg.size,
                    values.begin() + static_cast<std::ptrdiff_t>(seg.offset));
        pos += seg.size;
    }
    if (pos != masked.size()) throw InvalidArgument("write_masked: masked vector too long");
}

ParamVector init_params(const ModelSpec& spec, RngSeed seed) {
    ParamVector theta{spec, Vector(param_count(spec), 0.0)};
    Rng rng(seed, "models.init");
    for (const auto& seg : param_layout(spec)) {
        if (seg.name == kOutputBias || seg.name == kHiddenBias) continue;
        for (std::size_t i = 0; i < seg.size; ++i) {
            theta.values[seg.offset + i] = rng.uniform(-spec.init_scale, spec.init_scale);
        }
    }
    return theta;
}

Vector logits(const ParamVector& theta, std::span<const double> features) {
    check_theta(theta);
    if (features.size() != theta.spec.input_dim) throw InvalidArgument("logits: feature length mismatch");
    return forward(theta, features).logits;
}

double loss(const ParamVector& theta, const Sample& sample) {
    check_theta(theta);
    check_sample(theta.spec, sample);
    const Vector z = forward(theta, sample.features).logits;
    const double top = *std::max_element(z.begin(), z.end());
    const double zy = z[sample.label];
    if (zy == top) {
        // log1p keeps tiny losses exact when the true class already wins.
        double rest = 0.0;
        for (std::size_t c = 0; c < z.size(); ++c) {
            if (c != sample.label) rest += std::exp(z[c] - zy);
        }
        return std::log1p(rest);
    }
    double total = 0.0;
    for (double zc : z) total += std::exp(zc - top);
    return std::log(total) - (zy - top);
}

double mean_loss(const ParamVector& theta, const LabeledDataset& ds) {
    if (ds.empty()) throw InvalidArgument("mean_loss: empty dataset");
    double s = 0.0;
    for (const auto& sample : ds.samples) s += loss(theta, sample);
    return s / static_cast<double>(ds.size());
}

Vector per_sample_grad(const ParamVector& theta, const Sample& sample) {
    check_theta(theta);
    check_sample(theta.spec, sample);
    const ModelSpec& spec = theta.spec;
    const Forward f = forward(theta, sample.features);

    Vector delta_out = softmax(f.logits);
    delta_out[sample.label] -= 1.0;

    const auto layout = param_layout(spec);
    Vector grad(theta.values.size(), 0.0);
    const Segment& ow = find_segment(layout, kOutputWeights);
    const Segment& ob = find_segment(layout, kOutputBias);
    const std::span<const double> input =
        spec.kind == ModelKind::linear_softmax ? std::span<const double>(sample.features) : f.hidden;
    const std::size_t cols = input.size();
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < cols; ++k) grad[ow.offset + c * cols + k] = delta_out[c] * input[k];
        grad[ob.offset + c] = delta_out[c];
    }
    if (spec.kind == ModelKind::linear_softmax) return grad;

    const Segment& hw = find_segment(layout, kHiddenWeights);
    const Segment& hb = find_segment(layout, kHiddenBias);
    const std::size_t d = spec.input_dim;
    for (std::size_t j = 0; j < spec.hidden_dim; ++j) {
        double back = 0.0;
        for (std::size_t c = 0; c < spec.num_classes; ++c) back += theta.values[ow.offset + c * cols + j] * delta_out[c];
        const double delta_h = back * (1.0 - f.hidden[j] * f.hidden[j]);
        for (std::size_t k = 0; k < d; ++k) grad[hw.offset + j * d + k] = delta_h * sample.features[k];
        grad[hb.offset + j] = delta_h;
    }
    return grad;
}

std::vector<Vector> batch_grads(const ParamVector& theta, std::span<const Sample> batch) {
    if (batch.empty()) throw InvalidArgument("batch_grads: empty batch");
    std::vector<Vector> out;
    out.reserve(batch.size());
    for (const auto& s : batch) out.push_back(per_sample_grad(theta, s));
    return out;
}

std::size_t predict(const ParamVector& theta, const Sample& sample) {
    const Vector z = logits(theta, sample.features);
    // max_element returns the first maximum, i.e. the lowest class on ties.
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

double accuracy(const ParamVector& theta, const LabeledDataset& ds) {
    if (ds.empty()) throw InvalidArgument("accuracy: empty dataset");
    std::size_t correct = 0;
    for (const auto& s : ds.samples) correct += predict(theta, s) == s.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::string params_to_json(const ParamVector& theta) {
    check_theta(theta);
    // Hand-assembled so the value array carries exactly 17 significant digits.
    nlohmann::ordered_json spec;
    spec["kind"] = to_string(theta.spec.kind);
    spec["input_dim"] = theta.spec.input_dim;
    spec["num_classes"] = theta.spec.num_classes;
    spec["hidden_dim"] = theta.spec.hidden_dim;
    spec["init_scale"] = theta.spec.init_scale;
    nlohmann::ordered_json segments = nlohmann::ordered_json::array();
    for (const auto& seg : theta.segments()) {
        segments.push_back({{"name", seg.name}, {"offset", seg.offset}, {"size", seg.size}});
    }
    std::string out = "{\n  \"spec\": " + spec.dump() + ",\n  \"segments\": " + segments.dump() + ",\n  \"values\": [";
    for (std::size_t i = 0; i < theta.values.size(); ++i) {
        if (i > 0) out += ", ";
        out += io::format_double(theta.values[i]);
    }
    out += "]\n}\n";
    return out;
}

ParamVector params_from_json(std::string_view text, const std::string& source) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(source, 0, e.what());
    }
    try {
        const auto& js = doc.at("spec");
        ParamVector theta;
        theta.spec.kind = parse_model_kind(js.at("kind").get<std::string>());
        theta.spec.input_dim = js.at("input_dim").get<std::size_t>();
        theta.spec.num_classes = js.at("num_classes").get<std::size_t>();
        theta.spec.hidden_dim = js.at("hidden_dim").get<std::size_t>();
        theta.spec.init_scale = js.at("init_scale").get<double>();
        theta.spec.validate();
        theta.values = doc.at("values").get<Vector>();
        std::vector<Segment> segments;
        for (const auto& s : doc.at("segments")) {
            segments.push_back(Segment{s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                                       s.at("size").get<std::size_t>()});
        }
        if (segments != param_layout(theta.spec)) throw ParseError(source, 0, "segment table does not match spec");
        if (theta.values.size() != param_count(theta.spec)) throw ParseError(source, 0, "value count does not match spec");
        require_finite(theta.values, "parameter file");
        return theta;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(source, 0, e.what());
    }
}

void save_params(const ParamVector& theta, const std::filesystem::path& path) {
    io::write_file(path, params_to_json(theta));
}

ParamVector load_params(const std::filesystem::path& path) {
    return params_from_json(io::read_file(path), path.string());
}

}  // namespace gradmimic
