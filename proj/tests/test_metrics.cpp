#include <doctest.h>

#include "facedyn/error.hpp"
#include "facedyn/metrics.hpp"
#include "facedyn/rng.hpp"
#include "support/oracles.hpp"

using namespace facedyn;

namespace {

std::vector<FaceAct> acts(const std::vector<int>& v) {
    std::vector<FaceAct> out;
    for (int i : v) out.push_back(static_cast<FaceAct>(i));
    return out;
}

}  // namespace

TEST_CASE("macro F1 on the two-class example") {
    const std::vector<FaceAct> space{FaceAct::SPosPlus, FaceAct::SPosMinus};
    auto gold = acts({0, 0, 1, 1});
    auto pred = acts({0, 1, 1, 1});
    // F1_A = 2/3, F1_B = 0.8
    CHECK(macro_f1(pred, gold, space) == doctest::Approx((2.0 / 3 + 0.8) / 2));
    CHECK(macro_f1(pred, gold, space) == doctest::Approx(0.7333).epsilon(1e-4));
    CHECK(accuracy(pred, gold) == 0.75);
    CHECK(macro_f1(gold, gold, space) == 1.0);
}

TEST_CASE("absent classes") {
    const auto& space = label_space(Scope::All);
    auto gold = acts({0, 0, 2});
    CHECK(macro_f1(gold, gold, space, AbsentClasses::Skip) == 1.0);
    CHECK(macro_f1(gold, gold, space, AbsentClasses::Include) == doctest::Approx(2.0 / 8));
}

TEST_CASE("confusion matrix rows are gold") {
    const std::vector<FaceAct> space{FaceAct::SPosPlus, FaceAct::SPosMinus};
    auto m = confusion_matrix(acts({0, 1, 1, 1}), acts({0, 0, 1, 1}), space);
    CHECK(m[0][0] == 1);
    CHECK(m[0][1] == 1);
    CHECK(m[1][1] == 2);
    CHECK(m[1][0] == 0);
    CHECK_THROWS(confusion_matrix(acts({0, 5}), acts({0, 0}), space));
}

TEST_CASE("threshold selection") {
    std::vector<double> p{0.3, 0.4, 0.7};
    std::vector<int> y{0, 1, 1};
    auto t = threshold_select(p, y);
    CHECK(t.macro_f1 == 1.0);
    CHECK(t.threshold > 0.3);
    CHECK(t.threshold <= 0.4);
    CHECK(t.threshold == doctest::Approx(0.35));

    std::vector<double> sep{0.1, 0.2, 0.8, 0.9};
    std::vector<int> ys{0, 0, 1, 1};
    CHECK(threshold_select(sep, ys).threshold == doctest::Approx(0.5));
    CHECK(threshold_select(sep, ys).macro_f1 == 1.0);
    std::vector<double> empty;
    std::vector<int> none;
    CHECK_THROWS(threshold_select(empty, none));
}

TEST_CASE("McNemar examples") {
    auto r = mcnemar_from_counts(15, 5);
    CHECK(r.statistic == doctest::Approx(4.05));
    CHECK(r.p == doctest::Approx(0.044).epsilon(0.02));
    CHECK(r.p == doctest::Approx(oracle::chi2_1_sf(4.05)).epsilon(1e-12));
    auto same = mcnemar(acts({0, 1, 2}), acts({0, 1, 2}), acts({0, 1, 1}));
    CHECK(same.b == 0);
    CHECK(same.c == 0);
    CHECK(same.p == 1.0);
    auto ab = mcnemar_from_counts(3, 9), ba = mcnemar_from_counts(9, 3);
    CHECK(ab.statistic == ba.statistic);
    CHECK(ab.p == ba.p);
}

TEST_CASE("metrics agree with brute-force oracles") {
    Rng rng(17);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(40);
        const int k = 2 + static_cast<int>(rng.below(6));
        std::vector<int> g, pa, pb;
        for (std::size_t i = 0; i < n; ++i) {
            g.push_back(static_cast<int>(rng.below(k)));
            pa.push_back(rng.uniform() < 0.5 ? g.back() : static_cast<int>(rng.below(k)));
            pb.push_back(rng.uniform() < 0.5 ? g.back() : static_cast<int>(rng.below(k)));
        }
        std::vector<FaceAct> space;
        for (int c = 0; c < k; ++c) space.push_back(static_cast<FaceAct>(c));
        CHECK(accuracy(acts(pa), acts(g)) == doctest::Approx(oracle::accuracy(pa, g)).epsilon(1e-12));
        CHECK(macro_f1(acts(pa), acts(g), space) ==
              doctest::Approx(oracle::macro_f1(pa, g, k, false)).epsilon(1e-12));
        CHECK(macro_f1(acts(pa), acts(g), space, AbsentClasses::Skip) ==
              doctest::Approx(oracle::macro_f1(pa, g, k, true)).epsilon(1e-12));
        const auto m = mcnemar(acts(pa), acts(pb), acts(g));
        const auto o = oracle::mcnemar(pa, pb, g);
        CHECK(m.b == o.b);
        CHECK(m.c == o.c);
        CHECK(m.statistic == doctest::Approx(o.statistic).epsilon(1e-12));
        CHECK(std::fabs(m.p - o.p) < 1e-6);
    }
}
