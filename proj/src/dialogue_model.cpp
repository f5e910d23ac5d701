#include "facedyn/dialogue_model.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "facedyn/error.hpp"

namespace facedyn {

using nn::Tape;
using nn::Var;
using nn::Vec;

ModelShape ModelShape::from(const ModelConfig& cfg) {
    ModelShape s;
    s.embed_dim = cfg.embed_dim;
    s.d_h1 = cfg.d_h1;
    s.d_h2 = cfg.d_h2;
    s.d_fc = cfg.d_fc;
    s.variant = cfg.variant;
    s.context = cfg.context;
    s.scope = cfg.scope;
    s.dropout = cfg.dropout;
    return s;
}

// ---------------------------------------------------------------------------

int ConversationEncoder::fusion_width(int input, int hidden, Variant variant) {
    switch (variant) {
        case Variant::Base: return hidden;
        case Variant::F: return hidden + input;
        case Variant::SF: return 2 * hidden + input;
    }
    return 0;
}

void ConversationEncoder::declare(nn::ParameterSet& ps, int input, int hidden, Variant variant) {
    GruCell::declare(ps, "conv.gru", input, hidden);
    if (variant == Variant::SF) SelfAttention::declare(ps, "conv.att", hidden);
    ps.add("conv.fuse.w", hidden, fusion_width(input, hidden, variant));
    ps.add("conv.fuse.b", hidden, 1);
}

ConversationEncoder ConversationEncoder::bind(nn::ParameterSet& ps, Variant variant) {
    ConversationEncoder e;
    e.variant = variant;
    e.gru = GruCell::bind(ps, "conv.gru");
    if (variant == Variant::SF) e.attention = SelfAttention::bind(ps, "conv.att");
    e.w_u = &ps.get("conv.fuse.w");
    e.b_u = &ps.get("conv.fuse.b");
    return e;
}

std::vector<Var> ConversationEncoder::encode(Tape& tape, std::span<const Var> utterances) const {
    if (utterances.empty()) throw ContractViolation("encode_conversation: empty conversation");
    const std::vector<Var> h = gru.run(tape, utterances, false);
    std::vector<Var> ah;
    if (variant == Variant::SF) ah = attention.forward(tape, h, true);
    std::vector<Var> out;
    out.reserve(utterances.size());
    for (std::size_t j = 0; j < utterances.size(); ++j) {
        std::vector<Var> parts;
        switch (variant) {
            case Variant::Base: parts = {h[j]}; break;
            case Variant::F: parts = {h[j], utterances[j]}; break;
            case Variant::SF: parts = {ah[j], h[j], utterances[j]}; break;
        }
        out.push_back(tape.tanh(tape.affine(*w_u, tape.concat(parts), b_u)));
    }
    return out;
}

std::vector<Vec> encode_conversation(std::span<const Vec> utterance_embeddings, const ConversationEncoder& encoder) {
    if (utterance_embeddings.empty()) throw ContractViolation("encode_conversation: empty conversation");
    Tape tape;
    std::vector<Var> in;
    for (const Vec& e : utterance_embeddings) in.push_back(tape.constant(e));
    std::vector<Vec> out;
    for (const Var& v : encoder.encode(tape, in)) out.push_back(v.value());
    return out;
}

// ---------------------------------------------------------------------------

void FaceClassifier::declare(nn::ParameterSet& ps, int input, int hidden, int classes) {
    ps.add("cls.fc.w", hidden, input);
    ps.add("cls.fc.b", hidden, 1);
    ps.add("cls.out.w", classes, hidden);
    ps.add("cls.out.b", classes, 1);
}

FaceClassifier FaceClassifier::bind(nn::ParameterSet& ps, double dropout) {
    return FaceClassifier{&ps.get("cls.fc.w"), &ps.get("cls.fc.b"), &ps.get("cls.out.w"), &ps.get("cls.out.b"),
                          dropout};
}

Var FaceClassifier::logits(Tape& tape, Var x, Rng* dropout_rng) const {
    Var hidden = tape.tanh(tape.affine(*w_fc, x, b_fc));
    if (dropout_rng && dropout > 0.0) {
        Vec m(hidden.size());
        const double keep = 1.0 / (1.0 - dropout);
        for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = dropout_rng->uniform() < dropout ? 0.0 : keep;
        hidden = tape.mask(hidden, m);
    }
    return tape.affine(*w_out, hidden, b_out);
}

Eigen::Index FaceActPrediction::argmax() const {
    Eigen::Index best = 0;
    probs.maxCoeff(&best);
    return best;
}

FaceAct FaceActPrediction::label() const { return label_space(scope)[static_cast<std::size_t>(argmax())]; }

FaceAct FaceActPrediction::label_for(Role role) const {
    const auto& space = label_space(scope);
    double best = -1;
    FaceAct out = FaceAct::Other;
    for (std::size_t i = 0; i < space.size(); ++i) {
        if (!is_valid_for(role, space[i])) continue;
        if (probs(static_cast<Eigen::Index>(i)) > best) {
            best = probs(static_cast<Eigen::Index>(i));
            out = space[i];
        }
    }
    return out;
}

std::vector<FaceActPrediction> classify_face_acts(std::span<const Vec> context_embeddings,
                                                  const FaceClassifier& classifier, Scope scope) {
    if (classifier.w_out->value.rows() != static_cast<Eigen::Index>(label_space(scope).size()))
        throw ContractViolation("classify_face_acts: classifier width does not match the scope's label space");
    Tape tape;
    std::vector<FaceActPrediction> out;
    for (const Vec& e : context_embeddings) {
        Var p = tape.softmax(classifier.logits(tape, tape.constant(e), nullptr));
        out.push_back({p.value(), scope});
    }
    return out;
}

double face_loss(std::span<const FaceActPrediction> preds, std::span<const FaceAct> gold, std::size_t* clamped) {
    if (preds.size() != gold.size()) throw ContractViolation("face_loss: predictions and gold differ in length");
    double loss = 0;
    std::size_t nclamped = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto idx = label_index(preds[i].scope, gold[i]);
        if (!idx)
            throw ContractViolation("face_loss: gold label " + std::string(to_string(gold[i])) +
                                    " is outside the label space");
        double p = preds[i].probs(static_cast<Eigen::Index>(*idx));
        if (p < 1e-12) {
            p = 1e-12;
            ++nclamped;
        }
        loss -= std::log(p);
    }
    if (clamped) *clamped = nclamped;
    return loss;
}

// ---------------------------------------------------------------------------

void DonationHead::declare(nn::ParameterSet& ps, int input) {
    SelfAttention::declare(ps, "don.att", input);
    ps.add("don.w", 1, input);
    ps.add("don.b", 1, 1);
}

DonationHead DonationHead::bind(nn::ParameterSet& ps) {
    return DonationHead{SelfAttention::bind(ps, "don.att"), &ps.get("don.w"), &ps.get("don.b")};
}

DonationHead::Output DonationHead::trace(Tape& tape, std::span<const Var> context, double initial) const {
    if (context.empty()) throw ContractViolation("donation_trace: empty conversation");
    const std::vector<Var> attended = attention.forward(tape, context, true);
    Output out;
    Vec o0(1);
    o0(0) = initial;
    Var prev = tape.constant(o0);
    for (const Var& e : attended) {
        // tanh rounds to exactly +-1 past |x| ~ 19; keep don strictly inside (-1, 1)
        Var d = tape.clamp(tape.tanh(tape.affine(*w_d, e, b_d)), -kDonationBound, kDonationBound);
        Var o = tape.sigmoid(tape.add(prev, d));
        out.deltas.push_back(d);
        out.probs.push_back(o);
        prev = o;
    }
    return out;
}

DonationTrace donation_trace(std::span<const Vec> context_embeddings, const DonationHead& head, double initial) {
    Tape tape;
    std::vector<Var> in;
    for (const Vec& e : context_embeddings) in.push_back(tape.constant(e));
    const auto out = head.trace(tape, in, initial);
    DonationTrace t;
    t.initial = initial;
    for (std::size_t j = 0; j < out.probs.size(); ++j) {
        t.deltas.push_back(out.deltas[j].scalar());
        t.probs.push_back(out.probs[j].scalar());
    }
    return t;
}

double donation_loss(const DonationTrace& trace, Outcome outcome, DonationLossKind kind) {
    if (trace.probs.empty()) throw ContractViolation("donation_loss: empty trace");
    const double o = trace.probs.back();
    const double y = outcome == Outcome::Donor ? 1.0 : 0.0;
    if (kind == DonationLossKind::MSE) return (o - y) * (o - y);
    return -(y * std::log(o) + (1.0 - y) * std::log(1.0 - o));
}

double total_loss(double face, double donation, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("total_loss: alpha must lie in [0, 1]");
    return alpha * face + (1.0 - alpha) * donation;
}

// ---------------------------------------------------------------------------

HierarchicalModel::HierarchicalModel(const ModelShape& shape) : shape_(shape) {
    UtteranceEncoder::declare(params_, shape.embed_dim, shape.d_h1, shape.variant);
    if (shape.context) ConversationEncoder::declare(params_, shape.d_h1, shape.d_h2, shape.variant);
    FaceClassifier::declare(params_, shape.head_width(), shape.d_fc, shape.num_classes());
    DonationHead::declare(params_, shape.head_width());
    bind();
}

HierarchicalModel::HierarchicalModel(const HierarchicalModel& other) : shape_(other.shape_), params_(other.params_) {
    bind();
}

HierarchicalModel& HierarchicalModel::operator=(const HierarchicalModel& other) {
    if (this != &other) {
        shape_ = other.shape_;
        params_ = other.params_;
        bind();
    }
    return *this;
}

void HierarchicalModel::bind() {
    utterance_ = UtteranceEncoder::bind(params_, shape_.variant);
    if (shape_.context) conversation_ = ConversationEncoder::bind(params_, shape_.variant);
    classifier_ = FaceClassifier::bind(params_, shape_.dropout);
    donation_ = DonationHead::bind(params_);
}

void HierarchicalModel::initialize(std::uint64_t seed) {
    Rng rng(splitmix64(seed ^ 0x5eedULL));
    initialize_parameters(params_, rng);
}

HierarchicalModel::Pass HierarchicalModel::forward(Tape& tape, const EmbeddedConversation& conv, Rng* dropout_rng,
                                                   double initial) const {
    if (conv.utterances.empty()) throw ContractViolation("forward: conversation '" + conv.id + "' is empty");
    Pass pass;
    for (const auto& u : conv.utterances) pass.utterance.push_back(utterance_.encode(tape, u.tokens));
    pass.context = shape_.context ? conversation_.encode(tape, pass.utterance) : pass.utterance;
    for (const Var& c : pass.context) pass.logits.push_back(classifier_.logits(tape, c, dropout_rng));
    pass.donation = donation_.trace(tape, pass.context, initial);
    return pass;
}

HierarchicalModel::Losses HierarchicalModel::loss(Tape& tape, const Pass& pass, const EmbeddedConversation& conv,
                                                  double alpha, DonationLossKind kind) const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("loss: alpha must lie in [0, 1]");
    std::vector<Var> terms;
    for (std::size_t j = 0; j < conv.utterances.size(); ++j) {
        if (const auto& t = conv.utterances[j].target) terms.push_back(tape.log_softmax_at(pass.logits[j], *t));
    }
    Var face = tape.scale(tape.sum(terms), -1.0);

    const Var o = pass.donation.probs.back();
    const double y = conv.outcome == Outcome::Donor ? 1.0 : 0.0;
    Vec yv(1);
    yv(0) = y;
    Var donation;
    if (kind == DonationLossKind::MSE) {
        donation = tape.square(tape.sub(o, tape.constant(yv)));
    } else {
        Vec one(1);
        one(0) = 1.0;
        Var pos = tape.scale(tape.log(o), -y);
        Var neg = tape.scale(tape.log(tape.sub(tape.constant(one), o)), -(1.0 - y));
        donation = tape.add(pos, neg);
    }
    Var total = tape.add(tape.scale(face, alpha), tape.scale(donation, 1.0 - alpha));
    return {face, donation, total};
}

HierarchicalModel::Prediction HierarchicalModel::predict(const EmbeddedConversation& conv, double initial) const {
    Tape tape;
    const Pass pass = forward(tape, conv, nullptr, initial);
    Prediction pred;
    for (const Var& l : pass.logits) pred.faces.push_back({tape.softmax(l).value(), shape_.scope});
    pred.trace.initial = initial;
    for (std::size_t j = 0; j < pass.donation.probs.size(); ++j) {
        pred.trace.deltas.push_back(pass.donation.deltas[j].scalar());
        pred.trace.probs.push_back(pass.donation.probs[j].scalar());
    }
    return pred;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'F', 'D', 'C', 'K', 'P', 'T', '\n', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), sizeof v); }
void put_str(std::ostream& o, const std::string& s) {
    put_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError("truncated checkpoint " + path, 0);
    return v;
}

std::string get_str(std::istream& in, const std::string& path) {
    const auto n = get<std::uint32_t>(in, path);
    if (n > (1u << 26)) throw ParseError("corrupt checkpoint " + path, 0);
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw ParseError("truncated checkpoint " + path, 0);
    return s;
}

struct Header {
    std::string config_text;
    std::string shape_digest;
};

Header read_header(std::istream& in, const std::string& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw ParseError(path + " is not a facedyn checkpoint", 0);
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw ValidationError("checkpoint " + path + " has version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
    Header h;
    h.config_text = get_str(in, path);
    h.shape_digest = get_str(in, path);
    return h;
}

}  // namespace

void save_checkpoint(const HierarchicalModel& model, const ModelConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + path);
    out.write(kMagic, 8);
    put_u32(out, kCheckpointVersion);
    put_str(out, config.to_text());
    put_str(out, config.shape_digest());
    put_u32(out, static_cast<std::uint32_t>(model.params().size()));
    for (const auto& p : model.params()) {
        put_str(out, p->name);
        put_u64(out, static_cast<std::uint64_t>(p->value.rows()));
        put_u64(out, static_cast<std::uint64_t>(p->value.cols()));
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
    }
    if (!out) throw Error("failed writing checkpoint " + path);
}

ModelConfig read_checkpoint_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path);
    return parse_config_text(read_header(in, path).config_text);
}

void load_checkpoint(HierarchicalModel& model, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path);
    read_header(in, path);
    const auto n = get<std::uint32_t>(in, path);
    if (n != model.params().size())
        throw ValidationError("checkpoint " + path + " has " + std::to_string(n) + " tensors, model expects " +
                              std::to_string(model.params().size()));
    nn::ParameterSet staged = model.params();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string name = get_str(in, path);
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (!staged.contains(name)) throw ValidationError("checkpoint tensor '" + name + "' is unknown to this model");
        nn::Parameter& p = staged.get(name);
        if (static_cast<std::uint64_t>(p.value.rows()) != rows || static_cast<std::uint64_t>(p.value.cols()) != cols)
            throw ValidationError("checkpoint tensor '" + name + "' is " + std::to_string(rows) + "x" +
                                  std::to_string(cols) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                                  std::to_string(p.value.cols()));
        if (!in.read(reinterpret_cast<char*>(p.value.data()),
                     static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.value.size()))))
            throw ParseError("truncated checkpoint " + path, 0);
    }
    for (auto& p : model.params()) p->value = staged.get(p->name).value;
}

}  // namespace facedyn
