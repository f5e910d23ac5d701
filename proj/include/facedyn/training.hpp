#pragma once

#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facedyn/config.hpp"
#include "facedyn/corpus.hpp"
#include "facedyn/dialogue_model.hpp"
#include "facedyn/embedding.hpp"
#include "facedyn/error.hpp"
#include "facedyn/metrics.hpp"

namespace facedyn {

class TrainingDiverged : public Error {
public:
    using Error::Error;
};

// lr(epoch) = learning_rate * lr_decay^epoch, epoch counted from 0.
double learning_rate_at(const ModelConfig& cfg, int epoch);

// Adaptive-moment optimiser with bias correction.
class Adam {
public:
    explicit Adam(nn::ParameterSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    // Parameters whose name starts with any of these prefixes are not updated.
    void freeze(const std::set<std::string>& prefixes) { frozen_ = prefixes; }
    void step(double lr);
    long steps() const { return t_; }

private:
    nn::ParameterSet* params_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<nn::Mat> m_, v_;
    std::set<std::string> frozen_;
};

struct TrainOptions {
    std::set<std::string> frozen_prefixes;  // e.g. {"cls."} freezes the face head
    // Called after every epoch with (epoch, mean training loss).
    std::function<void(int, double)> on_epoch;
    // Called after every epoch with the current weights.
    std::function<void(int, const HierarchicalModel&)> on_epoch_model;
};

struct EpochStats {
    int epoch = 0;
    double learning_rate = 0;
    double loss = 0;            // mean L_tot per conversation
    double face_loss = 0;       // mean L_f per conversation
    double donation_loss = 0;   // mean L_d per conversation
};

struct TrainedModel {
    HierarchicalModel model;
    std::vector<EpochStats> curve;
};

// One conversation per optimisation step, shuffled each epoch under the seed.
// Throws TrainingDiverged on a non-finite loss.
TrainedModel train_model(const ModelConfig& cfg, const std::vector<const EmbeddedConversation*>& train,
                         const TrainOptions& opts = {});

struct UtteranceRecord {
    std::string conv_id;
    std::size_t index = 0;
    Role role = Role::ER;
    std::size_t fold = 0;
    FaceAct gold = FaceAct::Other;
    FaceAct pred = FaceAct::Other;       // argmax over the scope's label space
    FaceAct pred_role = FaceAct::Other;  // argmax restricted to the role's acts
    std::vector<double> probs;
};

struct TraceRecord {
    std::string conv_id;
    std::size_t fold = 0;
    Outcome outcome = Outcome::NonDonor;
    std::vector<Role> roles;
    DonationTrace trace;
};

struct FoldMetrics {
    std::size_t fold = 0;
    std::size_t train_conversations = 0;
    std::vector<std::string> val_ids;
    double accuracy = 0;
    double macro_f1 = 0;          // all scope classes in the denominator
    double macro_f1_present = 0;  // classes absent from the fold skipped
    std::vector<EpochStats> curve;
};

struct CvReport {
    ModelConfig config;
    std::string corpus_digest;
    std::vector<FoldMetrics> folds;
    double mean_accuracy = 0;
    double mean_macro_f1 = 0;
    double mean_macro_f1_present = 0;
    std::vector<std::vector<std::size_t>> confusion;            // scope label space, pooled over folds
    std::vector<std::vector<std::vector<std::size_t>>> role_confusion;  // ER then EE, role label spaces
    ThresholdChoice donation;
    std::vector<UtteranceRecord> utterances;  // every in-scope labelled utterance
    std::vector<TraceRecord> traces;          // every conversation, from its validation fold

    nlohmann::ordered_json to_json() const;
    static CvReport from_json(const nlohmann::json& j);
    static CvReport load(const std::string& path);
};

// Predictions for a set of conversations under a trained model.
void predict_into(const HierarchicalModel& model, const ModelConfig& cfg, const Corpus& corpus,
                  const std::vector<EmbeddedConversation>& embedded, const std::vector<std::string>& ids,
                  std::size_t fold, std::vector<UtteranceRecord>& utterances, std::vector<TraceRecord>& traces);

struct FoldResult {
    HierarchicalModel model;
    FoldMetrics metrics;
    std::vector<UtteranceRecord> utterances;
    std::vector<TraceRecord> traces;
};

FoldResult train_fold(const ModelConfig& cfg, const FoldSplit& fold, const Corpus& corpus,
                      const std::vector<EmbeddedConversation>& embedded, const TrainOptions& opts = {});

// Stratified k-fold cross-validation under cfg.seed. Folds run on up to
// cfg.threads threads; results do not depend on the thread count.
CvReport run_cv(const ModelConfig& cfg, const Corpus& corpus, const TrainOptions& opts = {});
CvReport run_cv(const ModelConfig& cfg, const Corpus& corpus, const std::vector<EmbeddedConversation>& embedded,
                const TrainOptions& opts = {});

struct Evaluation {
    std::size_t utterances = 0;
    double accuracy = 0;
    double macro_f1 = 0;
    double macro_f1_present = 0;
    std::vector<std::vector<std::size_t>> confusion;
    std::size_t conversations = 0;
    double threshold = 0.5;
    double donation_macro_f1 = 0;
};

// Face-act metrics over `utterances` (scope label space) and donation macro F1
// of final probabilities against `threshold`.
Evaluation evaluate_predictions(const std::vector<UtteranceRecord>& utterances, const std::vector<TraceRecord>& traces,
                                Scope scope, double threshold);
nlohmann::ordered_json to_json(const Evaluation& e, Scope scope);

// McNemar over the utterances both reports predicted, matched by
// (conv_id, index). Throws ValidationError when the sets differ.
McNemarResult compare_reports(const CvReport& a, const CvReport& b);

// Reference numbers reported for the full-scale setup, carried in reports.
nlohmann::ordered_json reference_targets();

}  // namespace facedyn
