#include "facedyn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <numeric>
#include <sstream>

#include "facedyn/error.hpp"
#include "facedyn/version.hpp"

namespace facedyn {

using nlohmann::json;
using nlohmann::ordered_json;

double learning_rate_at(const ModelConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, static_cast<double>(epoch));
}

Adam::Adam(nn::ParameterSet& params, double beta1, double beta2, double eps)
    : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
        m_.push_back(nn::Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(nn::Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void Adam::step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    std::size_t i = 0;
    for (auto& p : *params_) {
        const std::size_t k = i++;
        bool frozen = false;
        for (const auto& prefix : frozen_)
            if (p->name.rfind(prefix, 0) == 0) frozen = true;
        if (frozen) continue;
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * p->grad;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
        p->value.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + eps_);
    }
}

TrainedModel train_model(const ModelConfig& cfg, const std::vector<const EmbeddedConversation*>& train,
                         const TrainOptions& opts) {
    cfg.validate();
    TrainedModel out{HierarchicalModel(ModelShape::from(cfg)), {}};
    HierarchicalModel& model = out.model;
    model.initialize(cfg.seed);
    Adam adam(model.params());
    adam.freeze(opts.frozen_prefixes);

    Rng order_rng(splitmix64(cfg.seed ^ 0x0dde4ULL));
    Rng dropout_rng(splitmix64(cfg.seed ^ 0xd409ULL));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate_at(cfg, epoch);
        order_rng.shuffle(order);
        EpochStats stats;
        stats.epoch = epoch;
        stats.learning_rate = lr;
        for (std::size_t idx : order) {
            const EmbeddedConversation& conv = *train[idx];
            nn::Tape tape;
            const auto pass = model.forward(tape, conv, &dropout_rng, cfg.initial_probability);
            const auto losses = model.loss(tape, pass, conv, cfg.alpha, cfg.donation_loss);
            const double total = losses.total.scalar();
            if (!std::isfinite(total))
                throw TrainingDiverged("non-finite loss at epoch " + std::to_string(epoch) + " on conversation '" +
                                       conv.id + "' (L_f=" + std::to_string(losses.face.scalar()) +
                                       ", L_d=" + std::to_string(losses.donation.scalar()) + ", lr=" +
                                       std::to_string(lr) + ")");
            model.params().zero_grad();
            tape.backward(losses.total);
            adam.step(lr);
            stats.loss += total;
            stats.face_loss += losses.face.scalar();
            stats.donation_loss += losses.donation.scalar();
        }
        if (!train.empty()) {
            const double n = static_cast<double>(train.size());
            stats.loss /= n;
            stats.face_loss /= n;
            stats.donation_loss /= n;
        }
        out.curve.push_back(stats);
        if (opts.on_epoch) opts.on_epoch(epoch, stats.loss);
        if (opts.on_epoch_model) opts.on_epoch_model(epoch, out.model);
    }
    return out;
}

void predict_into(const HierarchicalModel& model, const ModelConfig& cfg, const Corpus& corpus,
                  const std::vector<EmbeddedConversation>& embedded, const std::vector<std::string>& ids,
                  std::size_t fold, std::vector<UtteranceRecord>& utterances, std::vector<TraceRecord>& traces) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < corpus.conversations.size(); ++i) pos[corpus.conversations[i].id] = i;
    for (const auto& id : ids) {
        const std::size_t i = pos.at(id);
        const Conversation& conv = corpus.conversations[i];
        const auto pred = model.predict(embedded[i], cfg.initial_probability);
        TraceRecord tr;
        tr.conv_id = id;
        tr.fold = fold;
        tr.outcome = conv.outcome;
        tr.trace = pred.trace;
        for (std::size_t j = 0; j < conv.utterances.size(); ++j) {
            const Utterance& u = conv.utterances[j];
            tr.roles.push_back(u.role);
            if (!embedded[i].utterances[j].target) continue;
            UtteranceRecord r;
            r.conv_id = id;
            r.index = u.index;
            r.role = u.role;
            r.fold = fold;
            r.gold = u.selected_gold;
            r.pred = pred.faces[j].label();
            r.pred_role = pred.faces[j].label_for(u.role);
            r.probs.assign(pred.faces[j].probs.data(), pred.faces[j].probs.data() + pred.faces[j].probs.size());
            utterances.push_back(std::move(r));
        }
        traces.push_back(std::move(tr));
    }
}

namespace {

struct Scored {
    double accuracy = 0, macro_f1 = 0, macro_f1_present = 0;
};

Scored score(const std::vector<UtteranceRecord>& recs, Scope scope) {
    std::vector<FaceAct> pred, gold;
    for (const auto& r : recs) {
        pred.push_back(r.pred);
        gold.push_back(r.gold);
    }
    Scored s;
    if (pred.empty()) return s;
    s.accuracy = accuracy(pred, gold);
    s.macro_f1 = macro_f1(pred, gold, label_space(scope), AbsentClasses::Include);
    s.macro_f1_present = macro_f1(pred, gold, label_space(scope), AbsentClasses::Skip);
    return s;
}

}  // namespace

FoldResult train_fold(const ModelConfig& cfg, const FoldSplit& fold, const Corpus& corpus,
                      const std::vector<EmbeddedConversation>& embedded, const TrainOptions& opts) {
    std::map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < corpus.conversations.size(); ++i) pos[corpus.conversations[i].id] = i;
    std::vector<const EmbeddedConversation*> train;
    for (const auto& id : fold.train_ids) train.push_back(&embedded[pos.at(id)]);

    ModelConfig fold_cfg = cfg;
    fold_cfg.seed = splitmix64(cfg.seed + 0x100 * (fold.fold_index + 1));
    TrainedModel trained = train_model(fold_cfg, train, opts);

    FoldResult out{std::move(trained.model), {}, {}, {}};
    predict_into(out.model, cfg, corpus, embedded, fold.val_ids, fold.fold_index, out.utterances, out.traces);
    out.metrics.fold = fold.fold_index;
    out.metrics.train_conversations = train.size();
    out.metrics.val_ids = fold.val_ids;
    out.metrics.curve = std::move(trained.curve);
    const Scored s = score(out.utterances, cfg.scope);
    out.metrics.accuracy = s.accuracy;
    out.metrics.macro_f1 = s.macro_f1;
    out.metrics.macro_f1_present = s.macro_f1_present;
    return out;
}

CvReport run_cv(const ModelConfig& cfg, const Corpus& corpus, const TrainOptions& opts) {
    auto embedder = make_embedder(cfg);
    if (embedder->dim() != cfg.embed_dim)
        throw ValidationError("config embed_dim " + std::to_string(cfg.embed_dim) + " does not match the embedder (" +
                              std::to_string(embedder->dim()) + ")");
    return run_cv(cfg, corpus, embed_corpus(corpus, *embedder, cfg.scope), opts);
}

CvReport run_cv(const ModelConfig& cfg, const Corpus& corpus, const std::vector<EmbeddedConversation>& embedded,
                const TrainOptions& opts) {
    cfg.validate();
    const auto folds = stratified_folds(corpus, static_cast<std::size_t>(cfg.folds), cfg.seed);
    std::vector<std::optional<FoldResult>> results(folds.size());

    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), folds.size());
    if (workers <= 1) {
        for (std::size_t f = 0; f < folds.size(); ++f) results[f].emplace(train_fold(cfg, folds[f], corpus, embedded, opts));
    } else {
        for (std::size_t start = 0; start < folds.size(); start += workers) {
            std::vector<std::future<FoldResult>> batch;
            for (std::size_t f = start; f < std::min(folds.size(), start + workers); ++f)
                batch.push_back(std::async(std::launch::async, [&, f] {
                    return train_fold(cfg, folds[f], corpus, embedded, opts);
                }));
            for (std::size_t k = 0; k < batch.size(); ++k) results[start + k].emplace(batch[k].get());
        }
    }

    CvReport rep;
    rep.config = cfg;
    rep.corpus_digest = corpus.provenance;
    for (auto& r : results) {
        rep.folds.push_back(r->metrics);
        rep.utterances.insert(rep.utterances.end(), r->utterances.begin(), r->utterances.end());
        rep.traces.insert(rep.traces.end(), r->traces.begin(), r->traces.end());
    }
    const double k = static_cast<double>(rep.folds.size());
    for (const auto& f : rep.folds) {
        rep.mean_accuracy += f.accuracy / k;
        rep.mean_macro_f1 += f.macro_f1 / k;
        rep.mean_macro_f1_present += f.macro_f1_present / k;
    }

    std::vector<FaceAct> pred, gold;
    for (const auto& u : rep.utterances) {
        pred.push_back(u.pred);
        gold.push_back(u.gold);
    }
    rep.confusion = confusion_matrix(pred, gold, label_space(cfg.scope));
    for (Role role : {Role::ER, Role::EE}) {
        if (cfg.scope != Scope::All && cfg.scope != scope_of(role)) continue;
        std::vector<FaceAct> rp, rg;
        for (const auto& u : rep.utterances)
            if (u.role == role) {
                rp.push_back(u.pred_role);
                rg.push_back(u.gold);
            }
        rep.role_confusion.push_back(confusion_matrix(rp, rg, label_space(scope_of(role))));
    }

    std::vector<double> finals;
    std::vector<int> outcomes;
    for (const auto& t : rep.traces) {
        finals.push_back(t.trace.final_probability());
        outcomes.push_back(static_cast<int>(t.outcome));
    }
    rep.donation = threshold_select(finals, outcomes);
    return rep;
}

nlohmann::ordered_json reference_targets() {
    ordered_json j;
    j["note"] = "full-scale reference results (GPU, pretrained contextual encoder); not reproduced at desk scale";
    j["HiGRU-sf_static_All_macro_f1"] = 0.52;
    j["BERT-HiGRU-f_ER_macro_f1"] = 0.63;
    j["BERT-HiGRU-f_EE_macro_f1"] = 0.61;
    j["BERT-HiGRU-f_All_macro_f1"] = 0.60;
    j["donation_macro_f1_alpha_0.75"] = 0.672;
    j["donation_threshold"] = 0.813;
    return j;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

ordered_json curve_json(const std::vector<EpochStats>& curve) {
    ordered_json arr = ordered_json::array();
    for (const auto& e : curve)
        arr.push_back({{"epoch", e.epoch},
                       {"learning_rate", e.learning_rate},
                       {"loss", e.loss},
                       {"face_loss", e.face_loss},
                       {"donation_loss", e.donation_loss}});
    return arr;
}

FaceAct act_from(const json& j) {
    auto a = parse_face_act(j.get<std::string>());
    if (!a) throw ParseError("report: unknown face act " + j.dump(), 0);
    return *a;
}

Role role_from(const json& j) {
    auto r = parse_role(j.get<std::string>());
    if (!r) throw ParseError("report: unknown role " + j.dump(), 0);
    return *r;
}

}  // namespace

ordered_json CvReport::to_json() const {
    ordered_json j;
    j["manifest"] = {{"command", "cv"},
                     {"toolkit_version", kVersion},
                     {"config_digest", config.digest()},
                     {"corpus_digest", corpus_digest},
                     {"seed", config.seed}};
    j["config"] = ordered_json::object();
    {
        std::istringstream in(config.to_text());
        std::string line;
        while (std::getline(in, line)) {
            const auto eq = line.find(" = ");
            std::string v = line.substr(eq + 3);
            j["config"][line.substr(0, eq)] = v.substr(1, v.size() - 2);
        }
    }
    j["config_within_reference_search_space"] = config.within_reference_search_space();
    j["label_space"] = ordered_json::array();
    for (FaceAct a : label_space(config.scope)) j["label_space"].push_back(std::string(to_string(a)));

    j["folds"] = ordered_json::array();
    for (const auto& f : folds)
        j["folds"].push_back({{"fold", f.fold},
                              {"train_conversations", f.train_conversations},
                              {"val_ids", f.val_ids},
                              {"accuracy", f.accuracy},
                              {"macro_f1", f.macro_f1},
                              {"macro_f1_present_classes", f.macro_f1_present},
                              {"curve", curve_json(f.curve)}});
    j["mean"] = {{"accuracy", mean_accuracy},
                 {"macro_f1", mean_macro_f1},
                 {"macro_f1_present_classes", mean_macro_f1_present}};
    j["confusion"] = confusion;
    j["role_confusion"] = ordered_json::array();
    for (const auto& m : role_confusion) j["role_confusion"].push_back(m);
    j["donation"] = {{"threshold", donation.threshold}, {"macro_f1", donation.macro_f1}, {"alpha", config.alpha}};
    j["reference_targets"] = reference_targets();

    j["utterances"] = ordered_json::array();
    for (const auto& u : utterances)
        j["utterances"].push_back({{"conv_id", u.conv_id},
                                   {"index", u.index},
                                   {"role", std::string(to_string(u.role))},
                                   {"fold", u.fold},
                                   {"gold", std::string(to_string(u.gold))},
                                   {"pred", std::string(to_string(u.pred))},
                                   {"pred_role", std::string(to_string(u.pred_role))},
                                   {"probs", u.probs}});
    j["traces"] = ordered_json::array();
    for (const auto& t : traces) {
        ordered_json roles = ordered_json::array();
        for (Role r : t.roles) roles.push_back(std::string(to_string(r)));
        j["traces"].push_back({{"conv_id", t.conv_id},
                               {"fold", t.fold},
                               {"outcome", static_cast<int>(t.outcome)},
                               {"roles", roles},
                               {"initial", t.trace.initial},
                               {"deltas", t.trace.deltas},
                               {"probs", t.trace.probs}});
    }
    return j;
}

CvReport CvReport::from_json(const json& j) {
    CvReport r;
    try {
        for (const auto& [k, v] : j.at("config").items()) {
            const auto s = v.get<std::string>();
            if (!s.empty() || k == "corpus" || k == "vectors" || k == "cache") apply_config_value(r.config, k, s);
        }
        r.corpus_digest = j.at("manifest").value("corpus_digest", "");
        for (const auto& f : j.at("folds")) {
            FoldMetrics m;
            m.fold = f.at("fold").get<std::size_t>();
            m.train_conversations = f.at("train_conversations").get<std::size_t>();
            m.val_ids = f.at("val_ids").get<std::vector<std::string>>();
            m.accuracy = f.at("accuracy").get<double>();
            m.macro_f1 = f.at("macro_f1").get<double>();
            m.macro_f1_present = f.at("macro_f1_present_classes").get<double>();
            for (const auto& e : f.at("curve"))
                m.curve.push_back({e.at("epoch").get<int>(), e.at("learning_rate").get<double>(),
                                   e.at("loss").get<double>(), e.at("face_loss").get<double>(),
                                   e.at("donation_loss").get<double>()});
            r.folds.push_back(std::move(m));
        }
        r.mean_accuracy = j.at("mean").at("accuracy").get<double>();
        r.mean_macro_f1 = j.at("mean").at("macro_f1").get<double>();
        r.mean_macro_f1_present = j.at("mean").at("macro_f1_present_classes").get<double>();
        r.confusion = j.at("confusion").get<std::vector<std::vector<std::size_t>>>();
        r.role_confusion = j.at("role_confusion").get<std::vector<std::vector<std::vector<std::size_t>>>>();
        r.donation.threshold = j.at("donation").at("threshold").get<double>();
        r.donation.macro_f1 = j.at("donation").at("macro_f1").get<double>();
        for (const auto& u : j.at("utterances")) {
            UtteranceRecord rec;
            rec.conv_id = u.at("conv_id").get<std::string>();
            rec.index = u.at("index").get<std::size_t>();
            rec.role = role_from(u.at("role"));
            rec.fold = u.at("fold").get<std::size_t>();
            rec.gold = act_from(u.at("gold"));
            rec.pred = act_from(u.at("pred"));
            rec.pred_role = act_from(u.at("pred_role"));
            rec.probs = u.at("probs").get<std::vector<double>>();
            r.utterances.push_back(std::move(rec));
        }
        for (const auto& t : j.at("traces")) {
            TraceRecord rec;
            rec.conv_id = t.at("conv_id").get<std::string>();
            rec.fold = t.at("fold").get<std::size_t>();
            rec.outcome = t.at("outcome").get<int>() ? Outcome::Donor : Outcome::NonDonor;
            for (const auto& role : t.at("roles")) rec.roles.push_back(role_from(role));
            rec.trace.initial = t.at("initial").get<double>();
            rec.trace.deltas = t.at("deltas").get<std::vector<double>>();
            rec.trace.probs = t.at("probs").get<std::vector<double>>();
            r.traces.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("report: ") + e.what(), 0);
    }
    return r;
}

CvReport CvReport::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open report " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ParseError("report " + path + ": " + e.what(), 0);
    }
    return from_json(j);
}

}  // namespace facedyn

namespace facedyn {

Evaluation evaluate_predictions(const std::vector<UtteranceRecord>& utterances, const std::vector<TraceRecord>& traces,
                                Scope scope, double threshold) {
    Evaluation e;
    std::vector<FaceAct> pred, gold;
    for (const auto& u : utterances) {
        pred.push_back(u.pred);
        gold.push_back(u.gold);
    }
    const auto& space = label_space(scope);
    e.utterances = pred.size();
    if (!pred.empty()) {
        e.accuracy = accuracy(pred, gold);
        e.macro_f1 = macro_f1(pred, gold, space, AbsentClasses::Include);
        e.macro_f1_present = macro_f1(pred, gold, space, AbsentClasses::Skip);
    }
    e.confusion = confusion_matrix(pred, gold, space);
    std::vector<int> yhat, y;
    for (const auto& t : traces) {
        yhat.push_back(t.trace.final_probability() > threshold ? 1 : 0);
        y.push_back(t.outcome == Outcome::Donor ? 1 : 0);
    }
    e.conversations = traces.size();
    e.threshold = threshold;
    if (!y.empty()) e.donation_macro_f1 = binary_macro_f1(yhat, y);
    return e;
}

nlohmann::ordered_json to_json(const Evaluation& e, Scope scope) {
    nlohmann::ordered_json j;
    j["scope"] = std::string(to_string(scope));
    j["utterances"] = e.utterances;
    j["accuracy"] = e.accuracy;
    j["macro_f1"] = e.macro_f1;
    j["macro_f1_present"] = e.macro_f1_present;
    j["label_space"] = nlohmann::ordered_json::array();
    for (FaceAct a : label_space(scope)) j["label_space"].push_back(std::string(to_string(a)));
    j["confusion"] = e.confusion;
    j["conversations"] = e.conversations;
    j["threshold"] = e.threshold;
    j["donation_macro_f1"] = e.donation_macro_f1;
    return j;
}

McNemarResult compare_reports(const CvReport& a, const CvReport& b) {
    std::map<std::pair<std::string, std::size_t>, const UtteranceRecord*> other;
    for (const auto& u : b.utterances) other[{u.conv_id, u.index}] = &u;
    if (other.size() != a.utterances.size())
        throw ValidationError("reports cover different utterances (" + std::to_string(a.utterances.size()) + " vs " +
                              std::to_string(other.size()) + ")");
    std::vector<FaceAct> pa, pb, gold;
    for (const auto& u : a.utterances) {
        auto it = other.find({u.conv_id, u.index});
        if (it == other.end())
            throw ValidationError("utterance " + u.conv_id + "#" + std::to_string(u.index) + " missing from second report");
        if (it->second->gold != u.gold)
            throw ValidationError("reports disagree on the gold label of " + u.conv_id + "#" + std::to_string(u.index));
        pa.push_back(u.pred);
        pb.push_back(it->second->pred);
        gold.push_back(u.gold);
    }
    return mcnemar(pa, pb, gold);
}

}  // namespace facedyn
