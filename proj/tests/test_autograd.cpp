#include <doctest.h>

#include <vector>

#include "facedyn/autograd.hpp"
#include "facedyn/error.hpp"
#include "support/test_support.hpp"

using namespace facedyn;
using namespace facedyn::nn;
using facedyn::testing::gradient_check;
using facedyn::testing::random_vec;

namespace {

// Builds a scalar from a handful of ops so every backward rule is exercised.
Var composite(Tape& t, ParameterSet& ps, const std::vector<Vec>& inputs) {
    std::vector<Var> xs;
    for (const auto& v : inputs) xs.push_back(t.constant(v));
    Parameter& w = ps.get("w");
    Parameter& b = ps.get("b");
    Parameter& q = ps.get("q");
    std::vector<Var> hs;
    for (const Var& x : xs) hs.push_back(t.tanh(t.affine(w, x, &b)));
    Var pooled = t.max_pool(hs);
    Var query = t.sigmoid(t.param(q));
    Var att = t.attend(query, hs, hs);
    Var mixed = t.gru_blend(t.sigmoid(pooled), att, t.mul(pooled, att));
    Var cat = t.concat(std::vector<Var>{mixed, t.slice(pooled, 1, 2), t.scale(att, 0.5)});
    Var lp = t.log_softmax_at(cat, 2);
    Var sm = t.softmax(cat);
    Var picked = t.slice(sm, 0, 1);
    Var sq = t.square(t.sub(picked, t.constant(Vec::Constant(1, 0.25))));
    return t.sum(std::vector<Var>{t.scale(lp, -1.0), sq, t.log(t.add(picked, t.constant(Vec::Ones(1))))});
}

}  // namespace

TEST_CASE("every tape op backpropagates consistently with finite differences") {
    Rng rng(7);
    ParameterSet ps;
    ps.add("w", 3, 4).value = Mat::Random(3, 4);
    ps.add("b", 3, 1).value = Mat::Random(3, 1);
    ps.add("q", 3, 1).value = Mat::Random(3, 1);
    std::vector<Vec> inputs = {random_vec(rng, 4), random_vec(rng, 4), random_vec(rng, 4)};

    auto loss = [&] {
        Tape t;
        return composite(t, ps, inputs).scalar();
    };
    auto analytic = [&] {
        Tape t;
        t.backward(composite(t, ps, inputs));
    };
    const auto rep = gradient_check(ps, loss, analytic);
    INFO("worst: " << rep.worst_param << " rel " << rep.worst_rel);
    CHECK(rep.worst_rel < 1e-6);
}

TEST_CASE("input gradients flow through attention keys and values") {
    Tape t;
    Vec qv(2), k0(2), k1(2);
    qv << 1, 0;
    k0 << 1, 0;
    k1 << 0, 1;
    Var q = t.constant(qv);
    std::vector<Var> ks = {t.constant(k0), t.constant(k1)};
    Var out = t.attend(q, ks, ks);
    Var s = t.slice(out, 0, 1);
    t.backward(s);
    // softmax([1/sqrt2, 0]) weights
    const double a = std::exp(1 / std::sqrt(2.0)), w0 = a / (a + 1);
    CHECK(out.value()(0) == doctest::Approx(w0));
    CHECK(out.value()(1) == doctest::Approx(1 - w0));
    CHECK(t.grad(ks[0].id)(0) != 0.0);
    CHECK(t.grad(q.id).norm() > 0.0);
}

TEST_CASE("backward rejects non-scalar roots and foreign variables") {
    Tape t, other;
    Var v = t.constant(Vec::Ones(2));
    CHECK_THROWS_AS(t.backward(v), ContractViolation);
    Var s = other.constant(Vec::Ones(1));
    CHECK_THROWS_AS(t.backward(s), ContractViolation);
}

TEST_CASE("parameter sets deep copy") {
    ParameterSet a;
    a.add("w", 2, 2).value.setOnes();
    ParameterSet b = a;
    b.get("w").value.setZero();
    CHECK(a.get("w").value.sum() == 4.0);
    CHECK(a.num_scalars() == 4);
    CHECK_THROWS_AS(a.add("w", 1, 1), ContractViolation);
}

TEST_CASE("clamp cuts values and their gradient outside the interval") {
    Tape t;
    Vec v(3);
    v << -2.0, 0.3, 5.0;
    Var x = t.constant(v);
    Var c = t.clamp(x, -1.0, 1.0);
    CHECK(c.value()(0) == -1.0);
    CHECK(c.value()(1) == 0.3);
    CHECK(c.value()(2) == 1.0);
    t.backward(t.sum(std::vector<Var>{t.slice(c, 0, 1), t.slice(c, 1, 1), t.slice(c, 2, 1)}));
    CHECK(t.grad(x.id)(0) == 0.0);
    CHECK(t.grad(x.id)(1) == 1.0);
    CHECK(t.grad(x.id)(2) == 0.0);
}
