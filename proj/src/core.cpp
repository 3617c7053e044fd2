#include "gradmimic/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gradmimic/errors.hpp"

namespace gradmimic {

namespace {

IndexSet sorted_unique(IndexSet s) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
}

std::size_t intersection_size(const IndexSet& a, const IndexSet& b) {
    std::size_t count = 0;
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia < *ib) {
            ++ia;
        } else if (*ib < *ia) {
            ++ib;
        } else {
            ++count;
            ++ia;
            ++ib;
        }
    }
    return count;
}

}  // namespace

void require_finite(std::span<const double> values, const char* what) {
    for (double v : values) {
        if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite entry");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("squared_distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double mean(std::span<const double> a) {
    if (a.empty()) throw InvalidArgument("mean: empty input");
    double s = 0.0;
    for (double v : a) s += v;
    return s / static_cast<double>(a.size());
}

Vector softmax(std::span<const double> scores, double temperature) {
    if (scores.empty()) throw InvalidArgument("softmax: empty input");
    if (!(temperature > 0.0)) throw InvalidArgument("softmax: temperature must be > 0");
    require_finite(scores, "softmax");

    const double top = *std::max_element(scores.begin(), scores.end());
    Vector out(scores.size());
    double total = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp((scores[i] - top) / temperature);
        total += out[i];
    }
    for (double& w : out) w /= total;
    return out;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidArgument("pearson: length mismatch");
    if (xs.size() < 2) throw InvalidArgument("pearson: need at least two points");
    require_finite(xs, "pearson");
    require_finite(ys, "pearson");

    const double mx = mean(xs);
    const double my = mean(ys);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double dx = xs[i] - mx;
        const double dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw DegenerateError("pearson: zero variance, correlation undefined");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double f1_score(const IndexSet& predicted_bad, const IndexSet& true_bad) {
    const IndexSet p = sorted_unique(predicted_bad);
    const IndexSet t = sorted_unique(true_bad);
    const std::size_t tp = intersection_size(p, t);
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(p.size());
    const double recall = static_cast<double>(tp) / static_cast<double>(t.size());
    return 2.0 * precision * recall / (precision + recall);
}

SetOverlap jaccard_overlap(const IndexSet& a, const IndexSet& b) {
    const IndexSet sa = sorted_unique(a);
    const IndexSet sb = sorted_unique(b);
    const std::size_t inter = intersection_size(sa, sb);
    const std::size_t uni = sa.size() + sb.size() - inter;
    SetOverlap out;
    if (uni == 0) return out;
    out.jaccard = static_cast<double>(inter) / static_cast<double>(uni);
    out.overlap_fraction = sa.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(sa.size());
    return out;
}

}  // namespace gradmimic
