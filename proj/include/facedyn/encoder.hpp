#pragma once

#include <span>
#include <string>
#include <vector>

#include "facedyn/autograd.hpp"
#include "facedyn/config.hpp"
#include "facedyn/rng.hpp"

namespace facedyn {

// GRU cell, gate order (reset, update, new):
//   r = sigma(W_ir x + b_ir + W_hr h + b_hr)
//   z = sigma(W_iz x + b_iz + W_hz h + b_hz)
//   n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//   h' = (1 - z) * n + z * h
// with h_0 = 0.
struct GruCell {
    nn::Parameter* w_ih = nullptr;  // 3H x D
    nn::Parameter* w_hh = nullptr;  // 3H x H
    nn::Parameter* b_ih = nullptr;  // 3H
    nn::Parameter* b_hh = nullptr;  // 3H

    static void declare(nn::ParameterSet& ps, const std::string& prefix, int input, int hidden);
    static GruCell bind(nn::ParameterSet& ps, const std::string& prefix);

    Eigen::Index hidden() const { return w_hh->value.cols(); }
    nn::Var step(nn::Tape& tape, nn::Var x, nn::Var h) const;
    // Hidden states aligned with `xs`; `reverse` runs right to left.
    std::vector<nn::Var> run(nn::Tape& tape, std::span<const nn::Var> xs, bool reverse = false) const;
};

// Single-head scaled dot-product self-attention with learned query/key/value
// projections (no bias). With `causal`, position i attends to positions <= i.
struct SelfAttention {
    nn::Parameter* w_q = nullptr;
    nn::Parameter* w_k = nullptr;
    nn::Parameter* w_v = nullptr;

    static void declare(nn::ParameterSet& ps, const std::string& prefix, int dim);
    static SelfAttention bind(nn::ParameterSet& ps, const std::string& prefix);

    std::vector<nn::Var> forward(nn::Tape& tape, std::span<const nn::Var> states, bool causal) const;
};

std::vector<nn::Vec> self_attention(std::span<const nn::Vec> states, const SelfAttention& attention,
                                    bool causal = false);

// Token sequence -> utterance embedding e(u_j):
//   BiGRU over tokens, optional self-attention per direction, per-token
//   fusion tanh(W_w [parts] + b_w), elementwise max over tokens.
// Fusion parts by variant:
//   base: [h_fwd; h_bwd]
//   f:    [h_fwd; e(w); h_bwd]
//   sf:   [ah_fwd; h_fwd; e(w); h_bwd; ah_bwd]
struct UtteranceEncoder {
    Variant variant = Variant::SF;
    GruCell forward_gru;
    GruCell backward_gru;
    SelfAttention forward_attention;   // sf only
    SelfAttention backward_attention;  // sf only
    nn::Parameter* w_w = nullptr;
    nn::Parameter* b_w = nullptr;

    static void declare(nn::ParameterSet& ps, int embed_dim, int hidden, Variant variant);
    static UtteranceEncoder bind(nn::ParameterSet& ps, Variant variant);
    static int fusion_width(int embed_dim, int hidden, Variant variant);

    nn::Var encode(nn::Tape& tape, std::span<const nn::Vec> tokens) const;
    // Per-token fused vectors before pooling.
    std::vector<nn::Var> fuse_tokens(nn::Tape& tape, std::span<const nn::Vec> tokens) const;
};

nn::Vec encode_utterance(std::span<const nn::Vec> tokens, const UtteranceEncoder& encoder);

// Weight initialisation: GRU tensors U(-1/sqrt(H), 1/sqrt(H)), projections
// Xavier-uniform, biases zero. Matches parameters by name suffix.
void initialize_parameters(nn::ParameterSet& ps, Rng& rng);

}  // namespace facedyn
