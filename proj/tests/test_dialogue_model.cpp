#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "facedyn/dialogue_model.hpp"
#include "facedyn/error.hpp"
#include "support/test_support.hpp"

using namespace facedyn;
using namespace facedyn::nn;
namespace ft = facedyn::testing;

namespace {

double model_loss(const HierarchicalModel& m, const EmbeddedConversation& c, double alpha, DonationLossKind kind) {
    Tape t;
    auto pass = m.forward(t, c, nullptr);
    return m.loss(t, pass, c, alpha, kind).total.scalar();
}

}  // namespace

TEST_CASE("full model gradients match finite differences") {
    for (Variant v : {Variant::Base, Variant::F, Variant::SF}) {
        for (double alpha : {0.0, 0.75, 1.0}) {
            for (auto kind : {DonationLossKind::MSE, DonationLossKind::BCE}) {
                HierarchicalModel m(ft::tiny_shape(v));
                m.initialize(3);
                Rng rng(11);
                auto conv = ft::random_conversation(rng, 5, 4, Scope::All);
                auto rep = ft::gradient_check(
                    m.params(), [&] { return model_loss(m, conv, alpha, kind); },
                    [&] {
                        Tape t;
                        auto pass = m.forward(t, conv, nullptr);
                        t.backward(m.loss(t, pass, conv, alpha, kind).total);
                    });
                INFO(to_string(v) << " alpha=" << alpha << " worst " << rep.worst_param << " " << rep.worst_rel);
                CHECK(rep.worst_rel < 1e-4);
            }
        }
    }
}

TEST_CASE("model without context encoder trains the heads on utterance vectors") {
    HierarchicalModel m(ft::tiny_shape(Variant::F, false));
    m.initialize(1);
    CHECK_FALSE(m.params().contains("conv.gru.w_ih"));
    Rng rng(2);
    auto conv = ft::random_conversation(rng, 5, 3, Scope::All);
    auto pred = m.predict(conv);
    CHECK(pred.faces.size() == 3);
    CHECK(pred.trace.probs.size() == 3);
}

TEST_CASE("softmax and face loss on the two-class example") {
    Vec logits(2);
    logits << 2.0, 0.0;
    Tape t;
    Vec p = t.softmax(t.constant(logits)).value();
    CHECK(p(0) == doctest::Approx(0.8808).epsilon(1e-4));
    CHECK(p(1) == doctest::Approx(0.1192).epsilon(1e-3));
    FaceActPrediction pr{p, Scope::All};
    // position 0 of label_space(All) is SPos+
    std::vector<FaceActPrediction> preds{pr};
    std::vector<FaceAct> gold{FaceAct::SPosPlus};
    pr.probs = Vec::Zero(8);
    pr.probs(0) = p(0);
    pr.probs(1) = p(1);
    preds = {pr};
    CHECK(face_loss(preds, gold) == doctest::Approx(-std::log(1 / (1 + std::exp(-2.0)))));
    CHECK(face_loss(preds, gold) == doctest::Approx(0.1269).epsilon(1e-3));
}

TEST_CASE("face loss clamps vanishing probabilities") {
    FaceActPrediction pr{Vec::Zero(8), Scope::All};
    pr.probs(0) = 1.0;
    std::vector<FaceActPrediction> preds{pr};
    std::vector<FaceAct> gold{FaceAct::HPosPlus};
    std::size_t clamped = 0;
    const double l = face_loss(preds, gold, &clamped);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(-std::log(1e-12)));
    CHECK(clamped == 1);
}

TEST_CASE("iterated sigmoid recurrence with zero deltas") {
    // o'_0 = 0, don = 0 every step
    double o = 0;
    std::vector<double> expect = {0.5, 0.6225, 0.6508};
    for (double e : expect) {
        o = 1 / (1 + std::exp(-(o + 0.0)));
        CHECK(o == doctest::Approx(e).epsilon(1e-3));
    }
    DonationTrace tr;
    tr.probs = {0.5, 0.6225, 0.6508};
    tr.deltas = {0, 0, 0};
    CHECK(tr.final_probability() == doctest::Approx(0.6508));
    CHECK(tr.previous(0) == 0.0);
    CHECK(tr.previous(2) == doctest::Approx(0.6225));
}

TEST_CASE("donation losses") {
    DonationTrace tr;
    tr.probs = {0.5, 0.8808};
    CHECK(donation_loss(tr, Outcome::Donor, DonationLossKind::MSE) == doctest::Approx(0.01421).epsilon(1e-3));
    CHECK(donation_loss(tr, Outcome::NonDonor, DonationLossKind::MSE) ==
          doctest::Approx(0.8808 * 0.8808));
    CHECK(donation_loss(tr, Outcome::Donor, DonationLossKind::BCE) == doctest::Approx(-std::log(0.8808)));
    CHECK(total_loss(2.0, 1.0, 0.75) == doctest::Approx(1.75));
    CHECK(total_loss(2.0, 1.0, 1.0) == doctest::Approx(2.0));
    CHECK_THROWS_AS(total_loss(1, 1, 1.5), ContractViolation);
    CHECK_THROWS_AS(total_loss(1, 1, -0.1), ContractViolation);
}

TEST_CASE("donation trace matches the recurrence and stays in the open interval") {
    HierarchicalModel m(ft::tiny_shape(Variant::SF));
    m.initialize(5);
    Rng rng(4);
    auto conv = ft::random_conversation(rng, 5, 6, Scope::All);
    auto pred = m.predict(conv, 0.3);
    const auto& tr = pred.trace;
    CHECK(tr.initial == 0.3);
    for (std::size_t j = 0; j < tr.probs.size(); ++j) {
        CHECK(std::fabs(tr.deltas[j]) < 1.0);
        CHECK(tr.probs[j] == doctest::Approx(1 / (1 + std::exp(-(tr.previous(j) + tr.deltas[j])))));
        CHECK(tr.probs[j] > 0.0);
        CHECK(tr.probs[j] < 1.0);
    }
}

TEST_CASE("prefix outputs do not depend on later utterances") {
    HierarchicalModel m(ft::tiny_shape(Variant::SF));
    m.initialize(8);
    Rng rng(9);
    auto conv = ft::random_conversation(rng, 5, 6, Scope::All);
    auto full = m.predict(conv);
    auto cut = conv;
    cut.utterances.resize(3);
    auto pre = m.predict(cut);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(pre.trace.probs[j] == full.trace.probs[j]);
        CHECK((pre.faces[j].probs.array() == full.faces[j].probs.array()).all());
    }
}

TEST_CASE("role-restricted prediction picks the best valid act") {
    FaceActPrediction pr{Vec::Zero(8), Scope::All};
    // All order: SPos+, SPos-, HPos+, HPos-, SNeg+, HNeg+, HNeg-, Other
    pr.probs << 0.05, 0.40, 0.10, 0.05, 0.20, 0.10, 0.05, 0.05;
    CHECK(pr.label() == FaceAct::SPosMinus);
    CHECK(pr.label_for(Role::ER) == FaceAct::HPosPlus);
    CHECK(pr.label_for(Role::EE) == FaceAct::SPosMinus);
}

TEST_CASE("checkpoints round-trip and refuse mismatched shapes") {
    namespace fs = std::filesystem;
    ModelConfig cfg;
    cfg.embed_dim = 5;
    cfg.d_h1 = 4;
    cfg.d_h2 = 4;
    cfg.d_fc = 3;
    cfg.variant = Variant::SF;
    HierarchicalModel m(ModelShape::from(cfg));
    m.initialize(21);
    const auto path = (fs::temp_directory_path() / "facedyn_ckpt_test.bin").string();
    save_checkpoint(m, cfg, path);
    HierarchicalModel back(ModelShape::from(cfg));
    load_checkpoint(back, path);
    for (const auto& p : m.params()) CHECK((back.params().get(p->name).value.array() == p->value.array()).all());
    CHECK(read_checkpoint_config(path).digest() == cfg.digest());

    cfg.d_fc = 5;
    HierarchicalModel other(ModelShape::from(cfg));
    CHECK_THROWS_AS(load_checkpoint(other, path), ValidationError);
    fs::remove(path);
}
