#include "facedyn/regression.hpp"

#include <cmath>
#include <limits>
#include <cstdio>

#include <boost/math/distributions/students_t.hpp>

#include "facedyn/error.hpp"
#include "facedyn/stats.hpp"

namespace facedyn {

namespace {

void check_aligned(const AnalysedConversation& c) {
    if (c.trace.probs.size() != c.roles.size() || c.roles.size() != c.acts.size())
        throw ValidationError("conversation '" + c.conv_id + "': trace has " + std::to_string(c.trace.probs.size()) +
                              " steps, " + std::to_string(c.roles.size()) + " roles and " +
                              std::to_string(c.acts.size()) + " predicted acts");
}

}  // namespace

Design build_design(std::span<const AnalysedConversation> convs, Role role) {
    const auto& space = label_space(scope_of(role));
    std::size_t rows = 0;
    for (const auto& c : convs) {
        check_aligned(c);
        for (std::size_t i = 0; i < c.roles.size(); ++i) rows += c.roles[i] == role && c.acts[i].has_value();
    }
    Design d;
    d.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(space.size() + 1));
    d.y.resize(static_cast<Eigen::Index>(rows));
    d.columns.push_back("lag");
    for (FaceAct a : space) {
        d.columns.emplace_back(to_string(a));
        d.acts.push_back(a);
    }
    Eigen::Index row = 0;
    for (const auto& c : convs) {
        for (std::size_t i = 0; i < c.roles.size(); ++i) {
            if (c.roles[i] != role || !c.acts[i]) continue;
            auto col = label_index(scope_of(role), *c.acts[i]);
            if (!col)
                throw ValidationError("conversation '" + c.conv_id + "' utterance " + std::to_string(i) + ": act " +
                                      std::string(to_string(*c.acts[i])) + " is not valid for role " +
                                      std::string(to_string(role)));
            d.x(row, 0) = c.trace.previous(i);
            d.x(row, static_cast<Eigen::Index>(*col) + 1) = 1.0;
            d.y(row) = c.trace.probs[i];
            d.folds.push_back(c.fold);
            ++row;
        }
    }
    return d;
}

OlsResult fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const std::string> names) {
    const Eigen::Index n = x.rows(), k = x.cols();
    if (y.size() != n) throw ContractViolation("fit_ols: X has " + std::to_string(n) + " rows, y has " +
                                               std::to_string(y.size()));
    if (k == 0) throw ContractViolation("fit_ols: no columns");
    if (n < k) throw ContractViolation("fit_ols: fewer rows (" + std::to_string(n) + ") than columns (" +
                                       std::to_string(k) + ")");
    auto name = [&](Eigen::Index c) {
        return c < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                           : "x" + std::to_string(c);
    };

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) {
        std::string cols;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index c = qr.rank(); c < k; ++c) cols += (cols.empty() ? "" : ", ") + name(perm(c));
        throw ValidationError("fit_ols: design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                              std::to_string(k) + "); collinear columns: " + cols);
    }

    OlsResult r;
    r.beta = qr.solve(y);
    const Eigen::VectorXd resid = y - x * r.beta;
    r.df = static_cast<int>(n - k);
    r.residual_variance = r.df > 0 ? resid.squaredNorm() / r.df : 0.0;

    // (X'X)^-1 = P R^-1 R^-T P'
    const Eigen::MatrixXd rmat = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd rinv =
        rmat.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    const Eigen::MatrixXd cov_perm = rinv * rinv.transpose();
    const auto& perm = qr.colsPermutation().indices();
    r.std_error.resize(k);
    r.t.resize(k);
    r.p.resize(k);
    for (Eigen::Index i = 0; i < k; ++i) {
        const Eigen::Index orig = perm(i);
        r.std_error(orig) = std::sqrt(r.residual_variance * cov_perm(i, i));
    }
    for (Eigen::Index i = 0; i < k; ++i) {
        const double se = r.std_error(i);
        if (r.df == 0) {
            r.t(i) = std::numeric_limits<double>::quiet_NaN();
            r.p(i) = std::numeric_limits<double>::quiet_NaN();
        } else if (se == 0.0) {
            r.t(i) = r.beta(i) == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.beta(i));
            r.p(i) = r.beta(i) == 0.0 ? 1.0 : 0.0;
        } else {
            r.t(i) = r.beta(i) / se;
            boost::math::students_t dist(r.df);
            r.p(i) = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t(i)))));
        }
    }
    return r;
}

std::vector<FracEntry> frac_metric(std::span<const AnalysedConversation> convs, Role role) {
    const auto& space = label_space(scope_of(role));
    std::vector<FracEntry> out;
    for (FaceAct a : space) out.push_back({a, 0, 0});
    for (const auto& c : convs) {
        check_aligned(c);
        for (std::size_t i = 0; i < c.roles.size(); ++i) {
            if (c.roles[i] != role || !c.acts[i]) continue;
            auto col = label_index(scope_of(role), *c.acts[i]);
            if (!col) continue;
            FracEntry& e = out[*col];
            ++e.occurrences;
            if (c.trace.probs[i] > c.trace.previous(i)) ++e.increases;
        }
    }
    return out;
}

RoleRegression regress_role(std::span<const AnalysedConversation> convs, Role role) {
    const Design full = build_design(convs, role);
    const auto fracs = frac_metric(convs, role);

    std::vector<Eigen::Index> keep = {0};
    std::vector<std::string> names = {"lag"};
    for (std::size_t a = 0; a < full.acts.size(); ++a)
        if (fracs[a].occurrences > 0) {
            keep.push_back(static_cast<Eigen::Index>(a + 1));
            names.emplace_back(to_string(full.acts[a]));
        }
    Eigen::MatrixXd x(full.x.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) x.col(static_cast<Eigen::Index>(c)) = full.x.col(keep[c]);

    const OlsResult ols = fit_ols(x, full.y, names);
    RoleRegression out;
    out.role = role;
    out.rows = static_cast<std::size_t>(x.rows());
    out.lag_beta = ols.beta(0);
    out.lag_std_error = ols.std_error(0);
    out.lag_p = ols.p(0);
    std::size_t col = 1;
    for (std::size_t a = 0; a < full.acts.size(); ++a) {
        RegressionRow row;
        row.act = full.acts[a];
        row.frac = fracs[a];
        if (fracs[a].occurrences > 0) {
            const auto c = static_cast<Eigen::Index>(col++);
            row.beta = ols.beta(c);
            row.std_error = ols.std_error(c);
            row.p = ols.p(c);
        }
        out.acts.push_back(row);
    }
    return out;
}

std::string regression_csv(std::span<const RoleRegression> results) {
    std::string out = "role,term,coefficient,std_error,p_value,stars,frac,occurrences\n";
    char buf[256];
    for (const auto& r : results) {
        const std::string role(to_string(r.role));
        std::snprintf(buf, sizeof buf, "%s,lag,%.6f,%.6f,%.6g,%s,-,%zu\n", role.c_str(), r.lag_beta, r.lag_std_error,
                      r.lag_p, std::isnan(r.lag_p) ? "" : significance_stars(r.lag_p).c_str(), r.rows);
        out += buf;
        for (const auto& row : r.acts) {
            const std::string act(to_string(row.act));
            if (!row.beta) {
                out += role + "," + act + ",-,-,-,,-,0\n";
                continue;
            }
            const bool has_p = row.p && !std::isnan(*row.p);
            std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6g,%s,%.3f,%zu\n", role.c_str(), act.c_str(), *row.beta,
                          *row.std_error, has_p ? *row.p : std::nan(""),
                          has_p ? significance_stars(*row.p).c_str() : "", row.frac.frac(), row.frac.occurrences);
            out += buf;
        }
    }
    return out;
}

}  // namespace facedyn
