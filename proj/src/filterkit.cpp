#include "gradmimic/filterkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

#include "gradmimic/errors.hpp"
#include "gradmimic/io.hpp"

namespace gradmimic {

namespace {

constexpr double kVarianceFloor = 1e-12;
constexpr std::size_t kGmmMaxIter = 200;
constexpr double kGmmTol = 1e-9;
constexpr std::size_t kEmMaxIter = 500;
constexpr double kEmTol = 1e-10;
constexpr double kClampLo = 0.01;
constexpr double kClampHi = 0.99;

double clamp_prob(double p) { return std::clamp(p, kClampLo, kClampHi); }

double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double log_add_exp(double a, double b) {
    const double hi = std::max(a, b);
    if (hi == -std::numeric_limits<double>::infinity()) return hi;
    return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

bool has_two_distinct(std::span<const double> v) {
    return !v.empty() && std::any_of(v.begin(), v.end(), [&](double x) { return x != v.front(); });
}

struct SampleLogJoint {
    double retain;
    double discard;
};

SampleLogJoint log_joint(const LabelModel& m, const VoteMatrix& votes, std::size_t i) {
    SampleLogJoint out{std::log(m.prior_retain), std::log(1.0 - m.prior_retain)};
    for (std::size_t t = 0; t < votes.epochs(); ++t) {
        const bool v = votes.vote(i, t) != 0;
        const double a = m.p_vote_given_retain[t];
        const double b = m.p_vote_given_discard[t];
        out.retain += std::log(v ? a : 1.0 - a);
        out.discard += std::log(v ? b : 1.0 - b);
    }
    return out;
}

void check_model(const LabelModel& m, const VoteMatrix& votes) {
    if (m.p_vote_given_retain.size() != votes.epochs() || m.p_vote_given_discard.size() != votes.epochs()) {
        throw InvalidArgument("label model and vote matrix disagree on the number of voters");
    }
}

}  // namespace

std::string_view to_string(Binarizer b) {
    switch (b) {
        case Binarizer::threshold: return "threshold";
        case Binarizer::kmeans: return "kmeans";
        case Binarizer::gmm: return "gmm";
        case Binarizer::topk: return "topk";
    }
    return "threshold";
}

Binarizer parse_binarizer(std::string_view name) {
    if (name == "threshold") return Binarizer::threshold;
    if (name == "kmeans") return Binarizer::kmeans;
    if (name == "gmm") return Binarizer::gmm;
    if (name == "topk") return Binarizer::topk;
    throw InvalidArgument("unknown binarizer '" + std::string(name) + "'");
}

Votes binarize_threshold(std::span<const double> scores, std::span<const std::size_t> batch_sizes) {
    if (scores.size() != batch_sizes.size()) throw InvalidArgument("binarize_threshold: one batch size per score");
    Votes out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (batch_sizes[i] == 0) throw InvalidArgument("binarize_threshold: batch size must be positive");
        out[i] = scores[i] > 1.0 / static_cast<double>(batch_sizes[i]) ? 1 : 0;
    }
    return out;
}

KmeansSplit kmeans_split_1d(std::span<const double> values) {
    KmeansSplit out;
    if (!has_two_distinct(values)) {
        out.degenerate = true;
        return out;
    }
    Vector sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();

    // Centre first so the prefix-sum SSE does not cancel catastrophically.
    const double shift = mean(sorted);
    Vector sum(n + 1, 0.0), sq(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double c = sorted[i] - shift;
        sum[i + 1] = sum[i] + c;
        sq[i + 1] = sq[i] + c * c;
    }
    auto sse = [&](std::size_t lo, std::size_t hi) {  // [lo, hi)
        const double m = static_cast<double>(hi - lo);
        const double s = sum[hi] - sum[lo];
        return std::max(0.0, (sq[hi] - sq[lo]) - s * s / m);
    };

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;  // lower cluster = sorted[0, best_k)
    for (std::size_t k = 1; k < n; ++k) {
        if (sorted[k - 1] == sorted[k]) continue;  // never split a run of equal values
        const double cost = sse(0, k) + sse(k, n);
        if (cost < best) {
            best = cost;
            best_k = k;
        }
    }
    out.cut = sorted[best_k];
    out.low_count = best_k;
    out.high_count = n - best_k;
    out.low_mean = shift + (sum[best_k] - sum[0]) / static_cast<double>(best_k);
    out.high_mean = shift + (sum[n] - sum[best_k]) / static_cast<double>(n - best_k);
    out.low_var = sse(0, best_k) / static_cast<double>(best_k);
    out.high_var = sse(best_k, n) / static_cast<double>(n - best_k);
    return out;
}

Votes binarize_kmeans(std::span<const double> scores) {
    const KmeansSplit split = kmeans_split_1d(scores);
    Votes out(scores.size(), 1);
    if (split.degenerate) return out;
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= split.cut ? 1 : 0;
    return out;
}

double Gmm1d::posterior_high(double x) const {
    const double l0 = std::log(weight[0]) + log_normal_pdf(x, mean[0], var[0]);
    const double l1 = std::log(weight[1]) + log_normal_pdf(x, mean[1], var[1]);
    return 1.0 / (1.0 + std::exp(l0 - l1));
}

Gmm1d fit_gmm_1d(std::span<const double> values) {
    const KmeansSplit split = kmeans_split_1d(values);
    if (split.degenerate) throw DegenerateError("fit_gmm_1d: need at least two distinct values");
    const std::size_t n = values.size();
    const double nd = static_cast<double>(n);

    Gmm1d g;
    g.weight[0] = static_cast<double>(split.low_count) / nd;
    g.weight[1] = static_cast<double>(split.high_count) / nd;
    g.mean[0] = split.low_mean;
    g.mean[1] = split.high_mean;
    g.var[0] = std::max(split.low_var, kVarianceFloor);
    g.var[1] = std::max(split.high_var, kVarianceFloor);

    Vector resp(n);
    auto e_step = [&](const Gmm1d& m) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double l0 = std::log(m.weight[0]) + log_normal_pdf(values[i], m.mean[0], m.var[0]);
            const double l1 = std::log(m.weight[1]) + log_normal_pdf(values[i], m.mean[1], m.var[1]);
            const double total = log_add_exp(l0, l1);
            resp[i] = std::exp(l1 - total);
            ll += total;
        }
        return ll;
    };

    double ll = e_step(g);
    for (std::size_t it = 1; it <= kGmmMaxIter; ++it) {
        Gmm1d next = g;
        double r1 = 0.0, s1 = 0.0, s0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            r1 += resp[i];
            s1 += resp[i] * values[i];
            s0 += (1.0 - resp[i]) * values[i];
        }
        const double r0 = nd - r1;
        if (r0 <= 0.0 || r1 <= 0.0) break;  // a component emptied out; keep the last valid fit
        next.weight[0] = r0 / nd;
        next.weight[1] = r1 / nd;
        next.mean[0] = s0 / r0;
        next.mean[1] = s1 / r1;
        double v0 = 0.0, v1 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d0 = values[i] - next.mean[0];
            const double d1 = values[i] - next.mean[1];
            v0 += (1.0 - resp[i]) * d0 * d0;
            v1 += resp[i] * d1 * d1;
        }
        next.var[0] = std::max(v0 / r0, kVarianceFloor);
        next.var[1] = std::max(v1 / r1, kVarianceFloor);
        next.iterations = it;

        const Vector previous_resp = resp;
        const double next_ll = e_step(next);
        if (!std::isfinite(next_ll)) {
            resp = previous_resp;
            break;
        }
        const double gain = next_ll - ll;
        g = next;
        ll = next_ll;
        if (gain < kGmmTol) break;
    }
    g.log_likelihood = ll;
    if (g.mean[0] > g.mean[1]) {
        std::swap(g.weight[0], g.weight[1]);
        std::swap(g.mean[0], g.mean[1]);
        std::swap(g.var[0], g.var[1]);
    }
    return g;
}

Votes binarize_gmm(std::span<const double> scores) {
    Votes out(scores.size(), 1);
    if (!has_two_distinct(scores)) return out;
    const Gmm1d g = fit_gmm_1d(scores);

    Vector sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    double cut = std::numeric_limits<double>::infinity();
    for (double x : sorted) {
        if (x >= g.mean[0] && g.posterior_high(x) >= 0.5) {
            cut = x;
            break;
        }
    }
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= cut ? 1 : 0;
    return out;
}

Votes binarize_topk(std::span<const double> scores, double k_percent) {
    if (!(k_percent > 0.0 && k_percent <= 100.0)) throw InvalidArgument("binarize_topk: k must lie in (0, 100]");
    const std::size_t n = scores.size();
    const double exact = k_percent * static_cast<double>(n) / 100.0;
    // Guard against k * n / 100 landing a hair above an integer.
    const auto keep = std::min(n, static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact))));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    Votes out(n, 0);
    for (std::size_t r = 0; r < keep; ++r) out[order[r]] = 1;
    return out;
}

VoteMatrix::VoteMatrix(std::size_t num_samples, std::size_t epochs, Binarizer source)
    : n_(num_samples), epochs_(epochs), source_(source), votes_(num_samples * epochs, 0) {}

void VoteMatrix::set_column(std::size_t epoch, const Votes& column) {
    if (column.size() != n_ || epoch >= epochs_) throw InvalidArgument("VoteMatrix::set_column: shape mismatch");
    for (std::size_t i = 0; i < n_; ++i) votes_[i * epochs_ + epoch] = column[i];
}

VoteMatrix binarize(const ScoreMatrix& scores, const BinarizeOptions& options) {
    VoteMatrix out(scores.num_samples(), scores.epochs(), options.method);
    for (std::size_t e = 0; e < scores.epochs(); ++e) {
        const Vector col = scores.column(e);
        switch (options.method) {
            case Binarizer::threshold: out.set_column(e, binarize_threshold(col, scores.column_batch_sizes(e))); break;
            case Binarizer::kmeans: out.set_column(e, binarize_kmeans(col)); break;
            case Binarizer::gmm: out.set_column(e, binarize_gmm(col)); break;
            case Binarizer::topk: out.set_column(e, binarize_topk(col, options.topk_percent)); break;
        }
    }
    return out;
}

Vector label_model_posteriors(const LabelModel& model, const VoteMatrix& votes) {
    check_model(model, votes);
    Vector out(votes.num_samples());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const SampleLogJoint lj = log_joint(model, votes, i);
        out[i] = 1.0 / (1.0 + std::exp(lj.discard - lj.retain));
    }
    return out;
}

double label_model_log_likelihood(const LabelModel& model, const VoteMatrix& votes) {
    check_model(model, votes);
    double ll = 0.0;
    for (std::size_t i = 0; i < votes.num_samples(); ++i) {
        const SampleLogJoint lj = log_joint(model, votes, i);
        ll += log_add_exp(lj.retain, lj.discard);
    }
    return ll;
}

IndexSet FilterDecision::discarded() const {
    IndexSet out;
    std::size_t next = 0;
    for (std::size_t i = 0; i < retain_prob.size(); ++i) {
        if (next < retained.size() && retained[next] == i) {
            ++next;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

FilterDecision aggregate_em(const VoteMatrix& votes) {
    const std::size_t n = votes.num_samples();
    const std::size_t epochs = votes.epochs();
    if (n == 0 || epochs == 0) throw InvalidArgument("aggregate_em: empty vote matrix");

    // Majority-vote initialization with add-one smoothing.
    std::vector<bool> majority(n);
    std::size_t majority_retain = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t yes = 0;
        for (std::size_t t = 0; t < epochs; ++t) yes += votes.vote(i, t);
        majority[i] = 2 * yes >= epochs;
        majority_retain += majority[i] ? 1 : 0;
    }
    LabelModel model;
    model.prior_retain = clamp_prob(static_cast<double>(majority_retain) / static_cast<double>(n));
    model.p_vote_given_retain.resize(epochs);
    model.p_vote_given_discard.resize(epochs);
    for (std::size_t t = 0; t < epochs; ++t) {
        double yes_r = 0.0, yes_d = 0.0;
        for (std::size_t i = 0; i < n; ++i) (majority[i] ? yes_r : yes_d) += votes.vote(i, t);
        const double n_r = static_cast<double>(majority_retain);
        const double n_d = static_cast<double>(n - majority_retain);
        model.p_vote_given_retain[t] = clamp_prob((yes_r + 1.0) / (n_r + 2.0));
        model.p_vote_given_discard[t] = clamp_prob((yes_d + 1.0) / (n_d + 2.0));
    }

    Vector post = label_model_posteriors(model, votes);
    double ll = label_model_log_likelihood(model, votes);
    for (std::size_t it = 1; it <= kEmMaxIter; ++it) {
        LabelModel next = model;
        double mass_r = 0.0;
        for (double p : post) mass_r += p;
        const double mass_d = static_cast<double>(n) - mass_r;
        next.prior_retain = clamp_prob(mass_r / static_cast<double>(n));
        for (std::size_t t = 0; t < epochs; ++t) {
            double yes_r = 0.0, yes_d = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (votes.vote(i, t) != 0) {
                    yes_r += post[i];
                    yes_d += 1.0 - post[i];
                }
            }
            next.p_vote_given_retain[t] = clamp_prob(mass_r > 0.0 ? yes_r / mass_r : 0.5);
            next.p_vote_given_discard[t] = clamp_prob(mass_d > 0.0 ? yes_d / mass_d : 0.5);
        }
        next.iterations = it;
        const double next_ll = label_model_log_likelihood(next, votes);
        model = std::move(next);
        post = label_model_posteriors(model, votes);
        const double gain = next_ll - ll;
        ll = next_ll;
        if (gain < kEmTol) break;
    }
    model.log_likelihood = ll;

    if (mean(model.p_vote_given_retain) < mean(model.p_vote_given_discard)) {
        std::swap(model.p_vote_given_retain, model.p_vote_given_discard);
        model.prior_retain = 1.0 - model.prior_retain;
        post = label_model_posteriors(model, votes);
    }

    FilterDecision decision;
    decision.retain_prob = std::move(post);
    decision.model = std::move(model);
    for (std::size_t i = 0; i < n; ++i) {
        if (decision.retain_prob[i] > decision.threshold_used) decision.retained.push_back(i);
    }
    return decision;
}

QualityStats quality_stats(const FilterDecision& decision, const ScoreMatrix& scores) {
    if (decision.retain_prob.size() != scores.num_samples()) {
        throw InvalidArgument("quality_stats: decision and score matrix sizes differ");
    }
    QualityStats q;
    if (scores.num_samples() == 0) return q;
    q.retention_rate = static_cast<double>(decision.retained.size()) / static_cast<double>(scores.num_samples());
    if (scores.epochs() == 0) return q;
    const Vector rows = scores.row_means();
    q.avg_mimic = mean(rows);
    if (!decision.retained.empty()) {
        double sum = 0.0;
        for (auto i : decision.retained) sum += rows[i];
        q.avg_mimic_retained = sum / static_cast<double>(decision.retained.size());
    }
    return q;
}

double detection_f1(const FilterDecision& decision, const LabeledDataset& ds) {
    if (!ds.flip_flags) throw InvalidArgument("detection_f1: dataset has no flip flags");
    if (ds.size() != decision.retain_prob.size()) throw InvalidArgument("detection_f1: size mismatch");
    return f1_score(decision.discarded(), ds.flipped_indices());
}

void save_votes_csv(const VoteMatrix& votes, const std::filesystem::path& path) {
    std::string text = "sample_id,epoch,vote\n";
    for (std::size_t i = 0; i < votes.num_samples(); ++i) {
        for (std::size_t e = 0; e < votes.epochs(); ++e) {
            text += std::to_string(i) + ',' + std::to_string(e) + ',' + (votes.vote(i, e) ? "1" : "0") + '\n';
        }
    }
    io::write_file(path, text);
}

void save_decision_csv(const FilterDecision& decision, const std::filesystem::path& path) {
    std::string text = "sample_id,retain_prob,retained\n";
    std::size_t next = 0;
    for (std::size_t i = 0; i < decision.retain_prob.size(); ++i) {
        const bool kept = next < decision.retained.size() && decision.retained[next] == i;
        if (kept) ++next;
        text += std::to_string(i) + ',' + io::format_double(decision.retain_prob[i]) + ',' + (kept ? "1" : "0") + '\n';
    }
    io::write_file(path, text);
}

FilterDecision load_decision_csv(const std::filesystem::path& path) {
    const std::string source = path.string();
    const std::string text = io::read_file(path);
    const auto rows = io::lines(text);
    if (rows.empty() || rows.front().empty()) throw ParseError(source, 1, "missing header");
    if (rows.front() != "sample_id,retain_prob,retained") {
        throw ParseError(source, 1, "header must be sample_id,retain_prob,retained");
    }
    FilterDecision d;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].empty()) continue;
        const auto f = io::split_csv(rows[r]);
        if (f.size() != 3) throw ParseError(source, r + 1, "expected 3 columns");
        const std::size_t id = io::parse_index(f[0], source, r + 1);
        if (id != d.retain_prob.size()) throw ParseError(source, r + 1, "sample ids must be 0..n-1 in order");
        d.retain_prob.push_back(io::parse_double(f[1], source, r + 1));
        if (f[2] == "1") {
            d.retained.push_back(id);
        } else if (f[2] != "0") {
            throw ParseError(source, r + 1, "retained must be 0 or 1");
        }
    }
    return d;
}

}  // namespace gradmimic
