#include "facedyn/encoder.hpp"

#include <cmath>

#include "facedyn/error.hpp"

namespace facedyn {

using nn::Tape;
using nn::Var;
using nn::Vec;

void GruCell::declare(nn::ParameterSet& ps, const std::string& prefix, int input, int hidden) {
    ps.add(prefix + ".w_ih", 3 * hidden, input);
    ps.add(prefix + ".w_hh", 3 * hidden, hidden);
    ps.add(prefix + ".b_ih", 3 * hidden, 1);
    ps.add(prefix + ".b_hh", 3 * hidden, 1);
}

GruCell GruCell::bind(nn::ParameterSet& ps, const std::string& prefix) {
    return GruCell{&ps.get(prefix + ".w_ih"), &ps.get(prefix + ".w_hh"), &ps.get(prefix + ".b_ih"),
                   &ps.get(prefix + ".b_hh")};
}

Var GruCell::step(Tape& tape, Var x, Var h) const {
    const Eigen::Index H = hidden();
    Var gi = tape.affine(*w_ih, x, b_ih);
    Var gh = tape.affine(*w_hh, h, b_hh);
    Var r = tape.sigmoid(tape.add(tape.slice(gi, 0, H), tape.slice(gh, 0, H)));
    Var z = tape.sigmoid(tape.add(tape.slice(gi, H, H), tape.slice(gh, H, H)));
    Var n = tape.tanh(tape.add(tape.slice(gi, 2 * H, H), tape.mul(r, tape.slice(gh, 2 * H, H))));
    return tape.gru_blend(z, n, h);
}

std::vector<Var> GruCell::run(Tape& tape, std::span<const Var> xs, bool reverse) const {
    std::vector<Var> out(xs.size());
    Var h = tape.constant(Vec::Zero(hidden()));
    for (std::size_t s = 0; s < xs.size(); ++s) {
        const std::size_t k = reverse ? xs.size() - 1 - s : s;
        h = step(tape, xs[k], h);
        out[k] = h;
    }
    return out;
}

void SelfAttention::declare(nn::ParameterSet& ps, const std::string& prefix, int dim) {
    ps.add(prefix + ".w_q", dim, dim);
    ps.add(prefix + ".w_k", dim, dim);
    ps.add(prefix + ".w_v", dim, dim);
}

SelfAttention SelfAttention::bind(nn::ParameterSet& ps, const std::string& prefix) {
    return SelfAttention{&ps.get(prefix + ".w_q"), &ps.get(prefix + ".w_k"), &ps.get(prefix + ".w_v")};
}

std::vector<Var> SelfAttention::forward(Tape& tape, std::span<const Var> states, bool causal) const {
    if (states.empty()) throw ContractViolation("self_attention: empty sequence");
    std::vector<Var> q, k, v;
    q.reserve(states.size());
    k.reserve(states.size());
    v.reserve(states.size());
    for (const Var& s : states) {
        q.push_back(tape.affine(*w_q, s));
        k.push_back(tape.affine(*w_k, s));
        v.push_back(tape.affine(*w_v, s));
    }
    std::vector<Var> out;
    out.reserve(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        const std::size_t m = causal ? i + 1 : states.size();
        out.push_back(tape.attend(q[i], std::span(k).first(m), std::span(v).first(m)));
    }
    return out;
}

std::vector<Vec> self_attention(std::span<const Vec> states, const SelfAttention& attention, bool causal) {
    if (states.empty()) throw ContractViolation("self_attention: empty sequence");
    Tape tape;
    std::vector<Var> in;
    for (const Vec& s : states) in.push_back(tape.constant(s));
    std::vector<Vec> out;
    for (const Var& o : attention.forward(tape, in, causal)) out.push_back(o.value());
    return out;
}

int UtteranceEncoder::fusion_width(int embed_dim, int hidden, Variant variant) {
    switch (variant) {
        case Variant::Base: return 2 * hidden;
        case Variant::F: return 2 * hidden + embed_dim;
        case Variant::SF: return 4 * hidden + embed_dim;
    }
    return 0;
}

void UtteranceEncoder::declare(nn::ParameterSet& ps, int embed_dim, int hidden, Variant variant) {
    GruCell::declare(ps, "utt.gru_fwd", embed_dim, hidden);
    GruCell::declare(ps, "utt.gru_bwd", embed_dim, hidden);
    if (variant == Variant::SF) {
        SelfAttention::declare(ps, "utt.att_fwd", hidden);
        SelfAttention::declare(ps, "utt.att_bwd", hidden);
    }
    ps.add("utt.fuse.w", hidden, fusion_width(embed_dim, hidden, variant));
    ps.add("utt.fuse.b", hidden, 1);
}

UtteranceEncoder UtteranceEncoder::bind(nn::ParameterSet& ps, Variant variant) {
    UtteranceEncoder e;
    e.variant = variant;
    e.forward_gru = GruCell::bind(ps, "utt.gru_fwd");
    e.backward_gru = GruCell::bind(ps, "utt.gru_bwd");
    if (variant == Variant::SF) {
        e.forward_attention = SelfAttention::bind(ps, "utt.att_fwd");
        e.backward_attention = SelfAttention::bind(ps, "utt.att_bwd");
    }
    e.w_w = &ps.get("utt.fuse.w");
    e.b_w = &ps.get("utt.fuse.b");
    return e;
}

std::vector<Var> UtteranceEncoder::fuse_tokens(Tape& tape, std::span<const Vec> tokens) const {
    if (tokens.empty()) throw ContractViolation("encode_utterance: empty token list");
    std::vector<Var> emb;
    emb.reserve(tokens.size());
    for (const Vec& t : tokens) emb.push_back(tape.constant(t));
    const std::vector<Var> hf = forward_gru.run(tape, emb, false);
    const std::vector<Var> hb = backward_gru.run(tape, emb, true);
    std::vector<Var> af, ab;
    if (variant == Variant::SF) {
        af = forward_attention.forward(tape, hf, false);
        ab = backward_attention.forward(tape, hb, false);
    }
    std::vector<Var> fused;
    fused.reserve(tokens.size());
    for (std::size_t k = 0; k < tokens.size(); ++k) {
        std::vector<Var> parts;
        switch (variant) {
            case Variant::Base: parts = {hf[k], hb[k]}; break;
            case Variant::F: parts = {hf[k], emb[k], hb[k]}; break;
            case Variant::SF: parts = {af[k], hf[k], emb[k], hb[k], ab[k]}; break;
        }
        fused.push_back(tape.tanh(tape.affine(*w_w, tape.concat(parts), b_w)));
    }
    return fused;
}

Var UtteranceEncoder::encode(Tape& tape, std::span<const Vec> tokens) const {
    const std::vector<Var> fused = fuse_tokens(tape, tokens);
    return tape.max_pool(fused);
}

Vec encode_utterance(std::span<const Vec> tokens, const UtteranceEncoder& encoder) {
    Tape tape;
    return encoder.encode(tape, tokens).value();
}

namespace {

bool is_bias(const std::string& name) {
    const auto dot = name.rfind('.');
    return name.compare(dot == std::string::npos ? 0 : dot + 1, 1, "b") == 0;
}

}  // namespace

void initialize_parameters(nn::ParameterSet& ps, Rng& rng) {
    for (auto& p : ps) {
        nn::Mat& m = p->value;
        const bool gru = p->name.find("gru") != std::string::npos;
        if (is_bias(p->name)) {
            if (gru) {
                const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows() / 3));
                for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
            } else {
                m.setZero();
            }
            continue;
        }
        double bound;
        if (gru) {
            bound = 1.0 / std::sqrt(static_cast<double>(m.rows() / 3));
        } else {
            bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        }
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    }
}

}  // namespace facedyn
