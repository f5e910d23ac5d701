#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "facedyn/autograd.hpp"
#include "facedyn/config.hpp"
#include "facedyn/corpus.hpp"
#include "facedyn/encoder.hpp"

namespace facedyn {

struct ModelShape {
    int embed_dim = 300;
    int d_h1 = 300;
    int d_h2 = 300;
    int d_fc = 100;
    Variant variant = Variant::F;
    bool context = true;
    Scope scope = Scope::All;
    double dropout = 0.3;

    static ModelShape from(const ModelConfig& cfg);
    int num_classes() const { return static_cast<int>(label_space(scope).size()); }
    // Width of the vectors fed to the classifier and donation head.
    int head_width() const { return context ? d_h2 : d_h1; }
};

// A conversation after the frozen token embedder has run.
struct EmbeddedUtterance {
    std::vector<nn::Vec> tokens;  // at least one
    Role role = Role::ER;
    // Index into label_space(scope); empty when the utterance is outside the
    // scope or unlabelled (it still feeds the context encoder).
    std::optional<Eigen::Index> target;
};

struct EmbeddedConversation {
    std::string id;
    std::vector<EmbeddedUtterance> utterances;
    Outcome outcome = Outcome::NonDonor;
};

// Conversation-level encoder: forward GRU over e(u_j), causal self-attention
// over its states, fusion tanh(W_u [parts] + b_u):
//   base: [H_j]   f: [H_j; e(u_j)]   sf: [AH_j; H_j; e(u_j)]
struct ConversationEncoder {
    Variant variant = Variant::F;
    GruCell gru;
    SelfAttention attention;  // sf only
    nn::Parameter* w_u = nullptr;
    nn::Parameter* b_u = nullptr;

    static void declare(nn::ParameterSet& ps, int input, int hidden, Variant variant);
    static ConversationEncoder bind(nn::ParameterSet& ps, Variant variant);
    static int fusion_width(int input, int hidden, Variant variant);

    std::vector<nn::Var> encode(nn::Tape& tape, std::span<const nn::Var> utterances) const;
};

std::vector<nn::Vec> encode_conversation(std::span<const nn::Vec> utterance_embeddings,
                                         const ConversationEncoder& encoder);

// FC (tanh, dropout) -> logits over the scope's label space.
struct FaceClassifier {
    nn::Parameter* w_fc = nullptr;
    nn::Parameter* b_fc = nullptr;
    nn::Parameter* w_out = nullptr;
    nn::Parameter* b_out = nullptr;
    double dropout = 0.3;

    static void declare(nn::ParameterSet& ps, int input, int hidden, int classes);
    static FaceClassifier bind(nn::ParameterSet& ps, double dropout);

    // `dropout_rng` null disables dropout (inference).
    nn::Var logits(nn::Tape& tape, nn::Var x, Rng* dropout_rng) const;
};

struct FaceActPrediction {
    nn::Vec probs;  // over label_space(scope)
    Scope scope = Scope::All;

    Eigen::Index argmax() const;
    FaceAct label() const;
    // Argmax restricted to the acts valid for `role`.
    FaceAct label_for(Role role) const;
};

std::vector<FaceActPrediction> classify_face_acts(std::span<const nn::Vec> context_embeddings,
                                                  const FaceClassifier& classifier, Scope scope);

// -sum_i log probs_i[gold_i]. Probabilities below 1e-12 are clamped;
// `clamped` (optional) receives how many were.
double face_loss(std::span<const FaceActPrediction> preds, std::span<const FaceAct> gold,
                 std::size_t* clamped = nullptr);

struct DonationTrace {
    double initial = 0.0;         // o'_0
    std::vector<double> deltas;   // don_j in (-1, 1)
    std::vector<double> probs;    // o'_j, j = 1..n

    double final_probability() const { return probs.empty() ? initial : probs.back(); }
    double previous(std::size_t j) const { return j == 0 ? initial : probs[j - 1]; }
};

inline constexpr double kDonationBound = 1.0 - 1e-12;

// Causal self-attention over e_c(u_1..j), don_j = tanh(W_d e_d(u_j) + b_d),
// o'_j = sigma(o'_{j-1} + don_j).
struct DonationHead {
    SelfAttention attention;
    nn::Parameter* w_d = nullptr;  // 1 x d
    nn::Parameter* b_d = nullptr;  // 1

    struct Output {
        std::vector<nn::Var> deltas;
        std::vector<nn::Var> probs;
    };

    static void declare(nn::ParameterSet& ps, int input);
    static DonationHead bind(nn::ParameterSet& ps);

    Output trace(nn::Tape& tape, std::span<const nn::Var> context, double initial) const;
};

DonationTrace donation_trace(std::span<const nn::Vec> context_embeddings, const DonationHead& head,
                             double initial = 0.0);

double donation_loss(const DonationTrace& trace, Outcome outcome, DonationLossKind kind);
double total_loss(double face, double donation, double alpha);

// The full hierarchical model. Copies deep-copy parameters and rebind.
class HierarchicalModel {
public:
    explicit HierarchicalModel(const ModelShape& shape);
    HierarchicalModel(const HierarchicalModel& other);
    HierarchicalModel& operator=(const HierarchicalModel& other);

    void initialize(std::uint64_t seed);

    const ModelShape& shape() const { return shape_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    const UtteranceEncoder& utterance_encoder() const { return utterance_; }
    const ConversationEncoder& conversation_encoder() const { return conversation_; }
    const FaceClassifier& classifier() const { return classifier_; }
    const DonationHead& donation_head() const { return donation_; }

    struct Pass {
        std::vector<nn::Var> utterance;  // e(u_j)
        std::vector<nn::Var> context;    // e_c(u_j), or e(u_j) without context
        std::vector<nn::Var> logits;
        DonationHead::Output donation;
    };

    Pass forward(nn::Tape& tape, const EmbeddedConversation& conv, Rng* dropout_rng, double initial = 0.0) const;

    struct Losses {
        nn::Var face;
        nn::Var donation;
        nn::Var total;
    };
    Losses loss(nn::Tape& tape, const Pass& pass, const EmbeddedConversation& conv, double alpha,
                DonationLossKind kind) const;

    struct Prediction {
        std::vector<FaceActPrediction> faces;
        DonationTrace trace;
    };
    Prediction predict(const EmbeddedConversation& conv, double initial = 0.0) const;

private:
    void bind();

    ModelShape shape_;
    nn::ParameterSet params_;
    UtteranceEncoder utterance_;
    ConversationEncoder conversation_;
    FaceClassifier classifier_;
    DonationHead donation_;
};

// Versioned binary checkpoint: magic, version, config digest, then
// (name, rows, cols, values) per parameter. Loading refuses any name or shape
// mismatch.
void save_checkpoint(const HierarchicalModel& model, const ModelConfig& config, const std::string& path);
ModelConfig read_checkpoint_config(const std::string& path);
void load_checkpoint(HierarchicalModel& model, const std::string& path);

}  // namespace facedyn
