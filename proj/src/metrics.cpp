#include "facedyn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/chi_squared.hpp>

#include "facedyn/error.hpp"

namespace facedyn {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ContractViolation(std::string(what) + ": length mismatch");
    if (a == 0) throw ContractViolation(std::string(what) + ": empty input");
}

std::size_t position(std::span<const FaceAct> space, FaceAct a) {
    auto it = std::find(space.begin(), space.end(), a);
    if (it == space.end()) throw ContractViolation("label " + std::string(to_string(a)) + " is outside the label space");
    return static_cast<std::size_t>(it - space.begin());
}

}  // namespace

double accuracy(std::span<const FaceAct> pred, std::span<const FaceAct> gold) {
    check_lengths(pred.size(), gold.size(), "accuracy");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == gold[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const FaceAct> pred, std::span<const FaceAct> gold,
                                                       std::span<const FaceAct> space) {
    if (pred.size() != gold.size()) throw ContractViolation("confusion_matrix: length mismatch");
    std::vector<std::vector<std::size_t>> m(space.size(), std::vector<std::size_t>(space.size(), 0));
    for (std::size_t i = 0; i < pred.size(); ++i) ++m[position(space, gold[i])][position(space, pred[i])];
    return m;
}

double macro_f1(std::span<const FaceAct> pred, std::span<const FaceAct> gold, std::span<const FaceAct> space,
                AbsentClasses absent) {
    check_lengths(pred.size(), gold.size(), "macro_f1");
    const auto m = confusion_matrix(pred, gold, space);
    const std::size_t k = space.size();
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t tp = m[c][c], fp = 0, fn = 0;
        for (std::size_t o = 0; o < k; ++o) {
            if (o == c) continue;
            fp += m[o][c];
            fn += m[c][o];
        }
        if (tp + fp + fn == 0 && absent == AbsentClasses::Skip) continue;
        ++counted;
        if (tp == 0) continue;
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        sum += 2 * precision * recall / (precision + recall);
    }
    return counted ? sum / static_cast<double>(counted) : 0.0;
}

double binary_macro_f1(std::span<const int> pred, std::span<const int> gold) {
    check_lengths(pred.size(), gold.size(), "binary_macro_f1");
    std::vector<FaceAct> p, g;
    // Reuse the multi-class path with two stand-in labels.
    auto map = [](int v) {
        if (v != 0 && v != 1) throw ContractViolation("binary_macro_f1: labels must be 0 or 1");
        return v ? FaceAct::SPosPlus : FaceAct::Other;
    };
    for (int v : pred) p.push_back(map(v));
    for (int v : gold) g.push_back(map(v));
    const FaceAct space[] = {FaceAct::Other, FaceAct::SPosPlus};
    return macro_f1(p, g, space, AbsentClasses::Include);
}

ThresholdChoice threshold_select(std::span<const double> final_probs, std::span<const int> outcomes) {
    check_lengths(final_probs.size(), outcomes.size(), "threshold_select");
    bool pos = false, neg = false;
    for (int o : outcomes) {
        if (o != 0 && o != 1) throw ContractViolation("threshold_select: outcomes must be 0 or 1");
        (o ? pos : neg) = true;
    }
    if (!pos || !neg) throw ContractViolation("threshold_select: need at least one conversation of each outcome");

    std::vector<double> cuts(final_probs.begin(), final_probs.end());
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    // Interval i covers thresholds in [lo_i, hi_i): below cut i-1 .. below cut i.
    // Interval 0 is everything below the smallest probability (all positive),
    // interval m is at or above the largest (all negative).
    const std::size_t m = cuts.size();
    auto lo = [&](std::size_t i) { return i == 0 ? 0.0 : cuts[i - 1]; };
    auto hi = [&](std::size_t i) { return i == m ? 1.0 : cuts[i]; };

    std::vector<double> score(m + 1);
    std::vector<int> pred(final_probs.size());
    for (std::size_t i = 0; i <= m; ++i) {
        const double theta = i == 0 ? lo(0) - 1.0 : lo(i);
        for (std::size_t k = 0; k < final_probs.size(); ++k) pred[k] = final_probs[k] > theta ? 1 : 0;
        score[i] = binary_macro_f1(pred, outcomes);
    }
    const double best = *std::max_element(score.begin(), score.end());
    std::size_t first = 0;
    while (score[first] != best) ++first;
    std::size_t last = first;
    while (last + 1 <= m && score[last + 1] == best) ++last;

    ThresholdChoice out;
    out.macro_f1 = best;
    out.threshold = std::clamp(0.5 * (lo(first) + hi(last)), 0.001, 0.999);
    return out;
}

McNemarResult mcnemar_from_counts(std::size_t b, std::size_t c) {
    McNemarResult r;
    r.b = b;
    r.c = c;
    if (b + c == 0) return r;
    const double diff = std::fabs(static_cast<double>(b) - static_cast<double>(c)) - 1.0;
    const double d = std::max(diff, 0.0);
    r.statistic = d * d / static_cast<double>(b + c);
    boost::math::chi_squared dist(1.0);
    r.p = r.statistic == 0.0 ? 1.0 : boost::math::cdf(boost::math::complement(dist, r.statistic));
    return r;
}

McNemarResult mcnemar(std::span<const FaceAct> pred_a, std::span<const FaceAct> pred_b, std::span<const FaceAct> gold) {
    if (pred_a.size() != gold.size() || pred_b.size() != gold.size())
        throw ContractViolation("mcnemar: sequences differ in length");
    std::size_t b = 0, c = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const bool a_ok = pred_a[i] == gold[i], b_ok = pred_b[i] == gold[i];
        b += a_ok && !b_ok;
        c += !a_ok && b_ok;
    }
    return mcnemar_from_counts(b, c);
}

}  // namespace facedyn
