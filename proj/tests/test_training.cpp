#include <doctest.h>

#include <cmath>
#include <limits>

#include "facedyn/analysis.hpp"
#include "facedyn/error.hpp"
#include "facedyn/training.hpp"
#include "support/test_support.hpp"

using namespace facedyn;
namespace ft = facedyn::testing;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.embed_dim = 5;
    c.d_h1 = 4;
    c.d_h2 = 4;
    c.d_fc = 3;
    c.epochs = 3;
    c.learning_rate = 1e-2;
    c.folds = 2;
    return c;
}

Corpus synthetic_corpus() { return parse_corpus(std::string(FACEDYN_TEST_DATA) + "/synthetic_corpus.jsonl"); }

}  // namespace

TEST_CASE("learning rate schedule") {
    ModelConfig c;
    CHECK(learning_rate_at(c, 0) == 1e-4);
    CHECK(learning_rate_at(c, 2) == doctest::Approx(1e-4 * 0.966 * 0.966));
}

TEST_CASE("zero epochs returns the initialised parameters") {
    auto cfg = small_config();
    cfg.epochs = 0;
    Rng rng(1);
    auto conv = ft::random_conversation(rng, 5, 3, Scope::All);
    std::vector<const EmbeddedConversation*> data{&conv};
    const auto trained = train_model(cfg, data);
    HierarchicalModel fresh(ModelShape::from(cfg));
    fresh.initialize(cfg.seed);
    for (const auto& p : fresh.params())
        CHECK((trained.model.params().get(p->name).value.array() == p->value.array()).all());
    CHECK(trained.curve.empty());
}

TEST_CASE("frozen parameters do not move") {
    auto cfg = small_config();
    Rng rng(2);
    auto conv = ft::random_conversation(rng, 5, 4, Scope::All);
    std::vector<const EmbeddedConversation*> data{&conv};
    TrainOptions opts;
    opts.frozen_prefixes = {"cls."};
    const auto trained = train_model(cfg, data, opts);
    HierarchicalModel fresh(ModelShape::from(cfg));
    fresh.initialize(cfg.seed);
    CHECK((trained.model.params().get("cls.out.w").value.array() == fresh.params().get("cls.out.w").value.array()).all());
    CHECK((trained.model.params().get("don.w").value.array() != fresh.params().get("don.w").value.array()).any());
}

TEST_CASE("non-finite loss aborts training") {
    auto cfg = small_config();
    Rng rng(3);
    auto conv = ft::random_conversation(rng, 5, 2, Scope::All);
    conv.utterances[0].tokens[0](0) = std::numeric_limits<double>::quiet_NaN();
    std::vector<const EmbeddedConversation*> data{&conv};
    CHECK_THROWS_AS(train_model(cfg, data), TrainingDiverged);
}

TEST_CASE("cross-validation report is deterministic and uses the stratified folds") {
    const auto corpus = synthetic_corpus();
    auto cfg = small_config();
    cfg.embed_dim = 8;
    const auto a = run_cv(cfg, corpus);
    const auto folds = stratified_folds(corpus, 2, cfg.seed);
    REQUIRE(a.folds.size() == 2);
    for (std::size_t f = 0; f < 2; ++f) CHECK(a.folds[f].val_ids == folds[f].val_ids);
    CHECK(a.traces.size() == corpus.conversations.size());
    std::size_t labelled = 0;
    for (const auto& c : corpus.conversations) labelled += c.utterances.size();
    CHECK(a.utterances.size() == labelled);
    CHECK(a.mean_accuracy >= 0.0);
    CHECK(a.donation.threshold >= 0.001);
    CHECK(a.donation.threshold <= 0.999);

    const auto text = a.to_json().dump(2);
    cfg.threads = 2;
    const auto b = run_cv(cfg, corpus);
    auto jb = b.to_json();
    // the thread count is part of the config, everything else must match
    auto ja = a.to_json();
    ja.erase("config");
    jb.erase("config");
    ja["manifest"].erase("config_digest");
    jb["manifest"].erase("config_digest");
    CHECK(ja.dump() == jb.dump());
    cfg.threads = 1;
    CHECK(run_cv(cfg, corpus).to_json().dump(2) == text);

    const auto back = CvReport::from_json(nlohmann::json::parse(text));
    CHECK(back.to_json().dump(2) == text);

    const auto analyses = analyses_from_report(back);
    CHECK(analyses.size() == corpus.conversations.size());
    CHECK(compare_reports(a, back).p == 1.0);
}

TEST_CASE("scope restricts targets and records") {
    const auto corpus = synthetic_corpus();
    auto cfg = small_config();
    cfg.embed_dim = 8;
    cfg.scope = Scope::EE;
    const auto r = run_cv(cfg, corpus);
    for (const auto& u : r.utterances) {
        CHECK(u.role == Role::EE);
        CHECK(is_valid_for(Role::EE, u.pred));
        CHECK(u.probs.size() == label_space(Scope::EE).size());
    }
    CHECK(r.confusion.size() == 7);
}

TEST_CASE("evaluation summary") {
    std::vector<UtteranceRecord> u(2);
    u[0].gold = FaceAct::Other;
    u[0].pred = FaceAct::Other;
    u[1].gold = FaceAct::SNegPlus;
    u[1].pred = FaceAct::Other;
    std::vector<TraceRecord> t(2);
    t[0].outcome = Outcome::Donor;
    t[0].trace.probs = {0.9};
    t[1].outcome = Outcome::NonDonor;
    t[1].trace.probs = {0.2};
    const auto e = evaluate_predictions(u, t, Scope::All, 0.5);
    CHECK(e.accuracy == 0.5);
    CHECK(e.donation_macro_f1 == 1.0);
    CHECK(reference_targets().dump().find("0.672") != std::string::npos);
}
