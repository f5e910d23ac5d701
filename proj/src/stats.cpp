#include "facedyn/stats.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "facedyn/error.hpp"

namespace facedyn {

TTestResult independent_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        throw ContractViolation("independent_t_test: each sample needs at least 2 values (got " +
                                std::to_string(a.size()) + " and " + std::to_string(b.size()) + ")");
    auto mean = [](std::span<const double> s) {
        return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
    };
    auto ss = [](std::span<const double> s, double m) {
        double acc = 0;
        for (double v : s) acc += (v - m) * (v - m);
        return acc;
    };
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    const double ma = mean(a), mb = mean(b);
    const int df = static_cast<int>(a.size() + b.size() - 2);
    const double pooled = (ss(a, ma) + ss(b, mb)) / df;
    const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));

    TTestResult r;
    r.df = df;
    const double diff = ma - mb;
    if (se == 0.0) {
        if (diff == 0.0) return {0.0, 1.0, df};
        r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
        r.p = 0.0;
        return r;
    }
    r.t = diff / se;
    boost::math::students_t dist(df);
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    if (r.p > 1.0) r.p = 1.0;
    return r;
}

std::string significance_stars(double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("significance_stars: p outside [0, 1]");
    if (p <= 0.001) return "***";
    if (p <= 0.01) return "**";
    if (p <= 0.05) return "*";
    return "";
}

const DistributionRow& DistributionTable::row(FaceAct act) const {
    for (const auto& r : rows)
        if (r.act == act) return r;
    throw ContractViolation("distribution table has no row for " + std::string(to_string(act)));
}

namespace {

// Stars for column c, placed on the larger cell of the role pair.
std::string stars_for(const DistributionRow& r, std::size_t c) {
    const std::size_t role = c / 2;
    if (!r.tested[role]) return "";
    const double mine = r.percent[c], other = r.percent[c ^ 1];
    const bool larger = mine > other || (mine == other && (c % 2) == 0);
    return larger ? significance_stars(r.test[role].p) : "";
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

std::string DistributionTable::to_text() const {
    std::string out = "Face act        ER-D        ER-N        EE-D        EE-N\n";
    for (const auto& r : rows) {
        char buf[160];
        std::string cells[4];
        for (std::size_t c = 0; c < 4; ++c) cells[c] = fmt2(r.percent[c]) + stars_for(r, c);
        std::snprintf(buf, sizeof buf, "%-8s  %10s  %10s  %10s  %10s\n", std::string(to_string(r.act)).c_str(),
                      cells[0].c_str(), cells[1].c_str(), cells[2].c_str(), cells[3].c_str());
        out += buf;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-8s  %10zu  %10zu  %10zu  %10zu\n", "n_utt", utterances[0], utterances[1],
                  utterances[2], utterances[3]);
    out += buf;
    return out;
}

std::string DistributionTable::to_csv() const {
    std::string out = "face_act,er_donor,er_non_donor,ee_donor,ee_non_donor,er_t,er_p,er_stars,ee_t,ee_p,ee_stars\n";
    for (const auto& r : rows) {
        out += std::string(to_string(r.act));
        for (double v : r.percent) out += "," + fmt2(v);
        for (std::size_t role = 0; role < 2; ++role) {
            if (r.tested[role]) {
                char buf[64];
                std::snprintf(buf, sizeof buf, ",%.6g,%.6g,", r.test[role].t, r.test[role].p);
                out += buf + significance_stars(r.test[role].p);
            } else {
                out += ",,,";
            }
        }
        out += "\n";
    }
    return out;
}

DistributionTable face_act_distribution(const Corpus& corpus) {
    if (corpus.conversations.empty()) throw ContractViolation("face_act_distribution: empty corpus");
    const auto& space = label_space(Scope::All);
    DistributionTable table;

    // counts[column][act]
    std::array<std::array<double, kNumFaceActs>, 4> counts{};
    // per role, per outcome: per-conversation proportions for each act
    std::array<std::array<std::array<std::vector<double>, kNumFaceActs>, 2>, 2> props;

    for (const auto& conv : corpus.conversations) {
        for (std::size_t role = 0; role < 2; ++role) {
            const Role r = role == 0 ? Role::ER : Role::EE;
            std::array<double, kNumFaceActs> local{};
            double n = 0;
            for (const auto& u : conv.utterances) {
                if (u.role != r || !u.labeled()) continue;
                local[static_cast<std::size_t>(u.selected_gold)] += 1;
                n += 1;
            }
            if (n == 0) continue;
            const std::size_t col = role * 2 + (conv.donor() ? 0 : 1);
            for (std::size_t a = 0; a < kNumFaceActs; ++a) counts[col][a] += local[a];
            table.utterances[col] += static_cast<std::size_t>(n);
            for (std::size_t a = 0; a < kNumFaceActs; ++a)
                props[role][conv.donor() ? 0 : 1][a].push_back(local[a] / n);
        }
    }

    for (FaceAct act : space) {
        DistributionRow row;
        row.act = act;
        const auto a = static_cast<std::size_t>(act);
        for (std::size_t c = 0; c < 4; ++c)
            row.percent[c] = table.utterances[c] ? 100.0 * counts[c][a] / static_cast<double>(table.utterances[c]) : 0.0;
        for (std::size_t role = 0; role < 2; ++role) {
            const auto& d = props[role][0][a];
            const auto& n = props[role][1][a];
            if (d.size() >= 2 && n.size() >= 2) {
                row.test[role] = independent_t_test(d, n);
                row.tested[role] = true;
            }
        }
        table.rows.push_back(row);
    }
    return table;
}

}  // namespace facedyn
