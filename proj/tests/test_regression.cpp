#include <doctest.h>

#include <cmath>

#include "facedyn/analysis.hpp"
#include "facedyn/error.hpp"
#include "facedyn/regression.hpp"
#include "facedyn/rng.hpp"
#include "support/oracles.hpp"

using namespace facedyn;

namespace {

AnalysedConversation make(const std::string& id, double initial, std::vector<double> probs, std::vector<Role> roles,
                          std::vector<std::optional<FaceAct>> acts) {
    AnalysedConversation c;
    c.conv_id = id;
    c.trace.initial = initial;
    c.trace.probs = std::move(probs);
    c.trace.deltas.assign(c.trace.probs.size(), 0.0);
    c.roles = std::move(roles);
    c.acts = std::move(acts);
    return c;
}

}  // namespace

TEST_CASE("one EE utterance predicted SNeg+") {
    std::vector<AnalysedConversation> cs{make("a", 0.0, {0.4}, {Role::EE}, {FaceAct::SNegPlus})};
    const auto d = build_design(cs, Role::EE);
    REQUIRE(d.x.rows() == 1);
    CHECK(d.x(0, 0) == 0.0);
    CHECK(d.y(0) == 0.4);
    CHECK(d.columns[0] == "lag");
    for (Eigen::Index c = 1; c < d.x.cols(); ++c)
        CHECK(d.x(0, c) == (d.acts[static_cast<std::size_t>(c - 1)] == FaceAct::SNegPlus ? 1.0 : 0.0));
    CHECK(build_design(cs, Role::ER).x.rows() == 0);
}

TEST_CASE("ER design has no SNeg+ or SPos- columns and one row per ER utterance") {
    std::vector<AnalysedConversation> cs{
        make("a", 0.0, {0.4, 0.5, 0.45}, {Role::ER, Role::EE, Role::ER}, {FaceAct::HPosPlus, FaceAct::Other, FaceAct::Other}),
        make("b", 0.0, {0.3, 0.6}, {Role::ER, Role::EE}, {FaceAct::HNegMinus, FaceAct::SNegPlus})};
    const auto d = build_design(cs, Role::ER);
    CHECK(d.x.rows() == 3);
    for (const auto& name : d.columns) {
        CHECK(name != "SNeg+");
        CHECK(name != "SPos-");
    }
    CHECK(d.y(1) == 0.45);
    CHECK(d.x(1, 0) == 0.5);  // lag is the previous step of the conversation, whatever its role
}

TEST_CASE("OLS examples") {
    Eigen::MatrixXd x(3, 2);
    x << 1, 0, 0, 1, 1, 1;
    Eigen::VectorXd y(3);
    y << 1, 2, 3.1;
    const auto r = fit_ols(x, y);
    // normal equations [[2,1],[1,2]] b = [4.1, 5.1]
    CHECK(r.beta(0) == doctest::Approx(3.1 / 3).epsilon(1e-12));
    CHECK(r.beta(1) == doctest::Approx(6.1 / 3).epsilon(1e-12));
    CHECK(r.beta(0) == doctest::Approx(1.0333).epsilon(1e-4));
    CHECK(r.beta(1) == doctest::Approx(2.0333).epsilon(1e-4));
    CHECK(r.df == 1);

    Eigen::MatrixXd x1(4, 1);
    x1 << 1, 2, 3, 4;
    Eigen::VectorXd y1 = 2 * x1.col(0);
    const auto exact = fit_ols(x1, y1);
    CHECK(exact.beta(0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(exact.p(0) < 1e-10);
}

TEST_CASE("OLS names collinear columns") {
    Eigen::MatrixXd x(4, 3);
    x << 1, 0, 1, 0, 1, 1, 1, 0, 1, 0, 1, 1;
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    std::vector<std::string> names{"lag", "HPos+", "Other"};
    try {
        fit_ols(x, y, names);
        FAIL("expected rank deficiency");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("rank") != std::string::npos);
        CHECK((msg.find("Other") != std::string::npos || msg.find("HPos+") != std::string::npos ||
               msg.find("lag") != std::string::npos));
    }
}

TEST_CASE("OLS agrees with the normal-equation oracle") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 1 + static_cast<int>(rng.below(4));
        const int n = k + 2 + static_cast<int>(rng.below(20));
        Eigen::MatrixXd x(n, k);
        Eigen::VectorXd y(n);
        std::vector<std::vector<double>> xs(n, std::vector<double>(k));
        std::vector<double> ys(n);
        for (int r = 0; r < n; ++r) {
            for (int c = 0; c < k; ++c) xs[r][c] = x(r, c) = rng.normal();
            ys[r] = y(r) = rng.normal();
        }
        const auto a = fit_ols(x, y);
        const auto o = oracle::ols(xs, ys);
        for (int c = 0; c < k; ++c) {
            CHECK(std::fabs(a.beta(c) - o.beta[c]) < 1e-10);
            CHECK(a.std_error(c) == doctest::Approx(o.se[c]).epsilon(1e-9));
            CHECK(std::fabs(a.p(c) - o.p[c]) < 1e-6);
        }
    }
}

TEST_CASE("frac counts strict increases") {
    // o'_0 = 0.5, o'_1 = 0.6, o'_2 = 0.55 with the act at both steps
    std::vector<AnalysedConversation> cs{
        make("a", 0.5, {0.6, 0.55}, {Role::EE, Role::EE}, {FaceAct::SNegPlus, FaceAct::SNegPlus})};
    for (const auto& e : frac_metric(cs, Role::EE)) {
        if (e.act == FaceAct::SNegPlus) {
            CHECK(e.occurrences == 2);
            CHECK(e.frac() == 0.5);
        } else {
            CHECK(e.occurrences == 0);
        }
    }
    // ties are not increases
    std::vector<AnalysedConversation> tie{make("b", 0.5, {0.5}, {Role::ER}, {FaceAct::Other})};
    for (const auto& e : frac_metric(tie, Role::ER))
        if (e.act == FaceAct::Other) CHECK(e.increases == 0);
}

TEST_CASE("regression table drops absent acts and prints dashes") {
    Rng rng(8);
    std::vector<AnalysedConversation> cs;
    for (int c = 0; c < 30; ++c) {
        std::vector<double> p;
        std::vector<Role> roles;
        std::vector<std::optional<FaceAct>> acts;
        double prev = 0;
        for (int i = 0; i < 6; ++i) {
            const Role role = i % 2 ? Role::EE : Role::ER;
            const auto& space = label_space(scope_of(role));
            FaceAct a = space[rng.below(space.size())];
            if (a == FaceAct::HNegPlus) a = FaceAct::Other;
            prev = 1 / (1 + std::exp(-(prev + 0.3 * rng.normal())));
            p.push_back(prev);
            roles.push_back(role);
            acts.push_back(a);
        }
        cs.push_back(make("c" + std::to_string(c), 0, p, roles, acts));
    }
    const auto er = regress_role(cs, Role::ER);
    CHECK(er.rows == 90);
    bool saw = false;
    for (const auto& row : er.acts)
        if (row.act == FaceAct::HNegPlus) {
            saw = true;
            CHECK_FALSE(row.beta);
            CHECK(row.frac.occurrences == 0);
        }
    CHECK(saw);
    std::vector<RoleRegression> both{er, regress_role(cs, Role::EE)};
    const auto csv = regression_csv(both);
    CHECK(csv.find("ER,HNeg+,-,-,-") != std::string::npos);
    CHECK(csv.find("EE,lag,") != std::string::npos);
}

TEST_CASE("trend export") {
    auto trace = [](std::vector<double> p, Outcome o) {
        TraceRecord t;
        t.outcome = o;
        t.trace.probs = std::move(p);
        return t;
    };
    std::vector<TraceRecord> one{trace({0.3, 0.5, 0.7}, Outcome::Donor)};
    auto rows = trend_export(one);
    REQUIRE(rows.size() == 3);
    CHECK(rows[2].donor_mean == 0.7);
    CHECK(rows[2].non_donor_count == 0);

    std::vector<TraceRecord> two{trace({0.3, 0.5}, Outcome::NonDonor), trace({0.5, 0.7}, Outcome::NonDonor)};
    rows = trend_export(two);
    CHECK(rows[0].non_donor_mean == doctest::Approx(0.4));
    CHECK(rows[1].non_donor_mean == doctest::Approx(0.6));
    CHECK(rows[1].non_donor_count == 2);
    CHECK_THROWS(trend_export({}));
    CHECK(trend_csv(rows).rfind("step,", 0) == 0);
}
