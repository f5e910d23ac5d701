#include "facedyn/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <map>

#include "facedyn/error.hpp"

namespace facedyn {

std::vector<AnalysedConversation> analyses_from_report(const CvReport& report) {
    std::map<std::pair<std::string, std::size_t>, FaceAct> preds;
    for (const auto& u : report.utterances) preds[{u.conv_id, u.index}] = u.pred_role;
    std::vector<AnalysedConversation> out;
    for (const auto& t : report.traces) {
        AnalysedConversation a;
        a.conv_id = t.conv_id;
        a.fold = t.fold;
        a.trace = t.trace;
        a.roles = t.roles;
        for (std::size_t i = 0; i < t.roles.size(); ++i) {
            auto it = preds.find({t.conv_id, i});
            a.acts.push_back(it == preds.end() ? std::nullopt : std::optional<FaceAct>(it->second));
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<TrendRow> trend_export(const std::vector<TraceRecord>& traces) {
    if (traces.empty()) throw ContractViolation("trend_export: no traces");
    std::size_t longest = 0;
    for (const auto& t : traces) longest = std::max(longest, t.trace.probs.size());
    if (longest == 0) throw ContractViolation("trend_export: all traces are empty");
    std::vector<TrendRow> rows(longest);
    for (std::size_t j = 0; j < longest; ++j) rows[j].step = j + 1;
    for (const auto& t : traces) {
        for (std::size_t j = 0; j < t.trace.probs.size(); ++j) {
            TrendRow& r = rows[j];
            if (t.outcome == Outcome::Donor) {
                r.donor_mean += t.trace.probs[j];
                ++r.donor_count;
            } else {
                r.non_donor_mean += t.trace.probs[j];
                ++r.non_donor_count;
            }
        }
    }
    for (auto& r : rows) {
        r.donor_mean = r.donor_count ? r.donor_mean / static_cast<double>(r.donor_count) : std::nan("");
        r.non_donor_mean = r.non_donor_count ? r.non_donor_mean / static_cast<double>(r.non_donor_count) : std::nan("");
    }
    return rows;
}

std::string trend_csv(const std::vector<TrendRow>& rows) {
    std::string out = "step,donor_mean,donor_count,non_donor_mean,non_donor_count\n";
    char buf[160];
    auto cell = [](double v) {
        if (std::isnan(v)) return std::string();
        char b[32];
        std::snprintf(b, sizeof b, "%.6f", v);
        return std::string(b);
    };
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%s,%zu\n", r.step, cell(r.donor_mean).c_str(), r.donor_count,
                      cell(r.non_donor_mean).c_str(), r.non_donor_count);
        out += buf;
    }
    return out;
}

}  // namespace facedyn
