#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "facedyn/autograd.hpp"
#include "facedyn/corpus.hpp"
#include "facedyn/dialogue_model.hpp"
#include "facedyn/rng.hpp"

namespace facedyn::testing {

// Entrywise relative error |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
    return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), floor});
}

struct GradCheckReport {
    std::string worst_param;
    double worst_rel = 0;
    std::size_t checked = 0;
};

// Central differences on every scalar of every parameter against the
// analytic gradient left in Parameter::grad by `analytic`.
inline GradCheckReport gradient_check(nn::ParameterSet& params, const std::function<double()>& loss,
                                      const std::function<void()>& analytic, double h = 1e-4) {
    params.zero_grad();
    analytic();
    GradCheckReport rep;
    for (auto& p : params) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            double& w = p->value.data()[i];
            const double saved = w;
            w = saved + h;
            const double up = loss();
            w = saved - h;
            const double down = loss();
            w = saved;
            const double numeric = (up - down) / (2 * h);
            const double e = rel_error(p->grad.data()[i], numeric);
            ++rep.checked;
            if (e > rep.worst_rel) {
                rep.worst_rel = e;
                rep.worst_param = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return rep;
}

inline nn::Vec random_vec(Rng& rng, Eigen::Index n, double scale = 1.0) {
    nn::Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.normal() * scale;
    return v;
}

// Random conversation of already-embedded tokens, labels drawn per role.
inline EmbeddedConversation random_conversation(Rng& rng, int embed_dim, std::size_t utterances, Scope scope,
                                                std::size_t max_tokens = 4) {
    EmbeddedConversation c;
    c.id = "rand" + std::to_string(rng.next() % 100000);
    c.outcome = rng.uniform() < 0.5 ? Outcome::Donor : Outcome::NonDonor;
    for (std::size_t j = 0; j < utterances; ++j) {
        EmbeddedUtterance u;
        u.role = j % 2 == 0 ? Role::ER : Role::EE;
        const std::size_t k = 1 + static_cast<std::size_t>(rng.below(max_tokens));
        for (std::size_t t = 0; t < k; ++t) u.tokens.push_back(random_vec(rng, embed_dim));
        if (scope == Scope::All || scope == scope_of(u.role)) {
            const auto& space = label_space(scope_of(u.role));
            const FaceAct act = space[static_cast<std::size_t>(rng.below(space.size()))];
            u.target = static_cast<Eigen::Index>(*label_index(scope, act));
        }
        c.utterances.push_back(std::move(u));
    }
    return c;
}

inline ModelShape tiny_shape(Variant v, bool context = true, Scope scope = Scope::All) {
    ModelShape s;
    s.embed_dim = 5;
    s.d_h1 = 4;
    s.d_h2 = 4;
    s.d_fc = 3;
    s.variant = v;
    s.context = context;
    s.scope = scope;
    s.dropout = 0.3;
    return s;
}

}  // namespace facedyn::testing
