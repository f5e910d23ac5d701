#pragma once

#include <string>
#include <vector>

#include "facedyn/regression.hpp"
#include "facedyn/training.hpp"

namespace facedyn {

// Joins a report's traces with its role-restricted predictions.
std::vector<AnalysedConversation> analyses_from_report(const CvReport& report);

struct TrendRow {
    std::size_t step = 0;  // 1-based utterance position
    double donor_mean = 0;
    std::size_t donor_count = 0;
    double non_donor_mean = 0;
    std::size_t non_donor_count = 0;
};

// Mean o'_j per step, split by outcome. Steps past the end of a conversation
// simply have fewer contributors.
std::vector<TrendRow> trend_export(const std::vector<TraceRecord>& traces);
std::string trend_csv(const std::vector<TrendRow>& rows);

}  // namespace facedyn
