#include <doctest.h>

#include <cmath>

#include "facedyn/corpus.hpp"
#include "facedyn/error.hpp"
#include "facedyn/rng.hpp"
#include "facedyn/stats.hpp"
#include "support/oracles.hpp"

using namespace facedyn;

namespace {

// Closed form of the Student t CDF for 4 degrees of freedom.
double t4_cdf(double t) {
    const double s = t * t / 4;
    return 0.5 + 0.375 * t / std::sqrt(1 + s) * (1 - s / (3 * (1 + s)));
}

}  // namespace

TEST_CASE("pooled t-test on the three-point example") {
    std::vector<double> a{1, 2, 3}, b{4, 5, 6};
    const auto r = independent_t_test(a, b);
    CHECK(r.df == 4);
    CHECK(r.t == doctest::Approx(-3.674).epsilon(1e-3));
    const double p_closed = 2 * t4_cdf(-std::sqrt(13.5));
    CHECK(p_closed == doctest::Approx(0.0214).epsilon(1e-2));
    CHECK(r.p == doctest::Approx(p_closed).epsilon(1e-10));
    CHECK(oracle::t_two_sided_p(r.t, 4) == doctest::Approx(p_closed).epsilon(1e-9));
}

TEST_CASE("t-test edge cases") {
    std::vector<double> a{0.1, 0.2, 0.3};
    auto same = independent_t_test(a, a);
    CHECK(same.t == 0.0);
    CHECK(same.p == doctest::Approx(1.0));
    std::vector<double> c{1, 1, 1}, d{2, 2};
    auto sep = independent_t_test(c, d);
    CHECK(std::isinf(sep.t));
    CHECK(sep.p == 0.0);
    auto flat = independent_t_test(c, c);
    CHECK(flat.t == 0.0);
    CHECK(flat.p == 1.0);
    std::vector<double> one{1};
    CHECK_THROWS(independent_t_test(one, one));
}

TEST_CASE("t-test matches quadrature oracle on random samples") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> a, b;
        const std::size_t na = 2 + rng.below(10), nb = 2 + rng.below(10);
        const double shift = rng.normal();
        for (std::size_t k = 0; k < na; ++k) a.push_back(rng.normal());
        for (std::size_t k = 0; k < nb; ++k) b.push_back(rng.normal() + shift);
        const auto r = independent_t_test(a, b);
        const auto o = oracle::t_test(a, b);
        CHECK(r.df == o.df);
        CHECK(r.t == doctest::Approx(o.t).epsilon(1e-10));
        CHECK(std::fabs(r.p - o.p) < 1e-6);
    }
}

TEST_CASE("significance stars") {
    CHECK(significance_stars(0.0005) == "***");
    CHECK(significance_stars(0.001) == "***");
    CHECK(significance_stars(0.005) == "**");
    CHECK(significance_stars(0.03) == "*");
    CHECK(significance_stars(0.05) == "*");
    CHECK(significance_stars(0.2) == "");
    CHECK_THROWS(significance_stars(-0.1));
    CHECK_THROWS(significance_stars(std::nan("")));
}

TEST_CASE("single EE utterance labelled Other") {
    auto c = parse_corpus_text(
        R"({"conv_id":"a","turn":0,"index":0,"role":"EE","text":"ok","labels":["Other"],"outcome":1})"
        "\n");
    const auto t = face_act_distribution(c);
    CHECK(t.row(FaceAct::Other).percent[2] == 100.0);
    for (const auto& row : t.rows) {
        if (row.act != FaceAct::Other) CHECK(row.percent[2] == 0.0);
        CHECK_FALSE(row.tested[1]);
    }
}

TEST_CASE("distribution columns sum to 100 and tests use per-conversation proportions") {
    const auto c = parse_corpus(std::string(FACEDYN_TEST_DATA) + "/synthetic_corpus.jsonl");
    const auto t = face_act_distribution(c);
    for (std::size_t col = 0; col < 4; ++col) {
        double sum = 0;
        for (const auto& r : t.rows) sum += r.percent[col];
        CHECK(sum == doctest::Approx(100.0));
    }
    // recompute the EE SNeg+ test by hand
    std::vector<double> donor, non;
    for (const auto& conv : c.conversations) {
        double n = 0, k = 0;
        for (const auto& u : conv.utterances)
            if (u.role == Role::EE) {
                ++n;
                k += u.selected_gold == FaceAct::SNegPlus;
            }
        if (n > 0) (conv.donor() ? donor : non).push_back(k / n);
    }
    const auto o = oracle::t_test(donor, non);
    const auto& row = t.row(FaceAct::SNegPlus);
    CHECK(row.tested[1]);
    CHECK(row.test[1].t == doctest::Approx(o.t));
    CHECK(std::fabs(row.test[1].p - o.p) < 1e-6);
    CHECK(t.to_csv().find("face_act,") == 0);
    CHECK(t.to_text().find("SNeg+") != std::string::npos);
}
