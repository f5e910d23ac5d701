#include "facedyn/autograd.hpp"

#include <cmath>

#include "facedyn/error.hpp"

namespace facedyn::nn {

ParameterSet::ParameterSet(const ParameterSet& other) { *this = other; }

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
    if (this == &other) return *this;
    params_.clear();
    index_ = other.index_;
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
    return *this;
}

Parameter& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (index_.count(name)) throw ContractViolation("duplicate parameter '" + name + "'");
    index_[name] = params_.size();
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Mat::Zero(rows, cols);
    p->grad = Mat::Zero(rows, cols);
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParameterSet::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown parameter '" + name + "'");
    return *params_[it->second];
}

const Parameter& ParameterSet::get(const std::string& name) const {
    return const_cast<ParameterSet*>(this)->get(name);
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->grad.setZero();
}

std::size_t ParameterSet::num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->size());
    return n;
}

// ---------------------------------------------------------------------------

const Vec& Var::value() const { return tape->value(id); }

Var Tape::push(Vec value, std::function<void(Tape&, const Node&)> backward) {
    Node n;
    n.grad = Vec::Zero(value.size());
    n.value = std::move(value);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Vec v) { return push(std::move(v)); }

Var Tape::param(Parameter& p) {
    if (p.value.cols() != 1) throw ContractViolation("param(): '" + p.name + "' is not a column vector");
    Parameter* pp = &p;
    return push(p.value.col(0), [pp](Tape&, const Node& self) { pp->grad.col(0) += self.grad; });
}

Var Tape::affine(Parameter& w, Var x, Parameter* b) {
    if (w.value.cols() != x.size())
        throw ContractViolation("affine: '" + w.name + "' has " + std::to_string(w.value.cols()) +
                                " columns, input has " + std::to_string(x.size()));
    Vec y = w.value * val(x);
    if (b) y += b->value.col(0);
    Parameter* wp = &w;
    return push(std::move(y), [wp, b, x](Tape& t, const Node& self) {
        const Vec& xv = t.val(x);
        wp->grad.noalias() += self.grad * xv.transpose();
        if (b) b->grad.col(0) += self.grad;
        t.g(x).noalias() += wp->value.transpose() * self.grad;
    });
}

Var Tape::add(Var a, Var b) {
    return push(val(a) + val(b), [a, b](Tape& t, const Node& self) {
        t.g(a) += self.grad;
        t.g(b) += self.grad;
    });
}

Var Tape::sub(Var a, Var b) {
    return push(val(a) - val(b), [a, b](Tape& t, const Node& self) {
        t.g(a) += self.grad;
        t.g(b) -= self.grad;
    });
}

Var Tape::mul(Var a, Var b) {
    return push(val(a).cwiseProduct(val(b)), [a, b](Tape& t, const Node& self) {
        t.g(a) += self.grad.cwiseProduct(t.val(b));
        t.g(b) += self.grad.cwiseProduct(t.val(a));
    });
}

Var Tape::scale(Var a, double s) {
    return push(val(a) * s, [a, s](Tape& t, const Node& self) { t.g(a) += self.grad * s; });
}

Var Tape::tanh(Var a) {
    Vec y = val(a).array().tanh().matrix();
    return push(std::move(y), [a](Tape& t, const Node& self) {
        t.g(a).array() += self.grad.array() * (1.0 - self.value.array().square());
    });
}

Var Tape::sigmoid(Var a) {
    Vec y = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    return push(std::move(y), [a](Tape& t, const Node& self) {
        t.g(a).array() += self.grad.array() * self.value.array() * (1.0 - self.value.array());
    });
}

Var Tape::clamp(Var a, double lo, double hi) {
    Vec y = val(a).cwiseMax(lo).cwiseMin(hi);
    return push(std::move(y), [a, lo, hi](Tape& t, const Node& self) {
        const auto& x = t.val(a).array();
        t.g(a).array() += ((x >= lo) && (x <= hi)).cast<double>() * self.grad.array();
    });
}

Var Tape::gru_blend(Var z, Var n, Var h) {
    Vec y = ((1.0 - val(z).array()) * val(n).array() + val(z).array() * val(h).array()).matrix();
    return push(std::move(y), [z, n, h](Tape& t, const Node& self) {
        const auto& zv = t.val(z).array();
        t.g(z).array() += self.grad.array() * (t.val(h).array() - t.val(n).array());
        t.g(n).array() += self.grad.array() * (1.0 - zv);
        t.g(h).array() += self.grad.array() * zv;
    });
}

Var Tape::concat(std::span<const Var> parts) {
    Eigen::Index total = 0;
    for (const Var& p : parts) total += p.size();
    Vec y(total);
    Eigen::Index off = 0;
    for (const Var& p : parts) {
        y.segment(off, p.size()) = val(p);
        off += p.size();
    }
    std::vector<Var> ins(parts.begin(), parts.end());
    return push(std::move(y), [ins = std::move(ins)](Tape& t, const Node& self) {
        Eigen::Index o = 0;
        for (const Var& p : ins) {
            const Eigen::Index n = t.val(p).size();
            t.g(p) += self.grad.segment(o, n);
            o += n;
        }
    });
}

Var Tape::slice(Var a, Eigen::Index start, Eigen::Index len) {
    if (start < 0 || len < 0 || start + len > a.size()) throw ContractViolation("slice out of range");
    return push(val(a).segment(start, len),
                [a, start, len](Tape& t, const Node& self) { t.g(a).segment(start, len) += self.grad; });
}

Var Tape::max_pool(std::span<const Var> xs) {
    if (xs.empty()) throw ContractViolation("max_pool over an empty list");
    const Eigen::Index d = xs.front().size();
    Vec y = val(xs.front());
    std::vector<std::size_t> arg(static_cast<std::size_t>(d), 0);
    for (std::size_t k = 1; k < xs.size(); ++k) {
        if (xs[k].size() != d) throw ContractViolation("max_pool: ragged inputs");
        const Vec& v = val(xs[k]);
        for (Eigen::Index i = 0; i < d; ++i)
            if (v(i) > y(i)) {
                y(i) = v(i);
                arg[static_cast<std::size_t>(i)] = k;
            }
    }
    std::vector<Var> ins(xs.begin(), xs.end());
    return push(std::move(y), [ins = std::move(ins), arg = std::move(arg)](Tape& t, const Node& self) {
        for (std::size_t i = 0; i < arg.size(); ++i)
            t.g(ins[arg[i]])(static_cast<Eigen::Index>(i)) += self.grad(static_cast<Eigen::Index>(i));
    });
}

Var Tape::mask(Var a, const Vec& m) {
    return push(val(a).cwiseProduct(m), [a, m](Tape& t, const Node& self) { t.g(a) += self.grad.cwiseProduct(m); });
}

Var Tape::attend(Var query, std::span<const Var> keys, std::span<const Var> values) {
    if (keys.empty() || keys.size() != values.size()) throw ContractViolation("attend: need matching non-empty keys/values");
    const std::size_t m = keys.size();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.size()));
    Vec w(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < m; ++k) w(static_cast<Eigen::Index>(k)) = val(query).dot(val(keys[k])) * inv_sqrt_d;
    w = (w.array() - w.maxCoeff()).exp().matrix();
    w /= w.sum();
    Vec y = Vec::Zero(values.front().size());
    for (std::size_t k = 0; k < m; ++k) y += w(static_cast<Eigen::Index>(k)) * val(values[k]);

    std::vector<Var> ks(keys.begin(), keys.end()), vs(values.begin(), values.end());
    return push(std::move(y), [query, ks = std::move(ks), vs = std::move(vs), w, inv_sqrt_d](Tape& t, const Node& self) {
        const std::size_t m = ks.size();
        // dL/dw_k = <g, v_k>; softmax backward to scores; scores = <q, k_k>/sqrt(d)
        Vec dw(static_cast<Eigen::Index>(m));
        for (std::size_t k = 0; k < m; ++k) {
            const auto ki = static_cast<Eigen::Index>(k);
            dw(ki) = self.grad.dot(t.val(vs[k]));
            t.g(vs[k]) += w(ki) * self.grad;
        }
        const double mean = w.dot(dw);
        const Vec ds = (w.array() * (dw.array() - mean)).matrix() * inv_sqrt_d;
        const Vec qv = t.val(query);
        Vec gq = Vec::Zero(qv.size());
        for (std::size_t k = 0; k < m; ++k) {
            const auto ki = static_cast<Eigen::Index>(k);
            gq += ds(ki) * t.val(ks[k]);
            t.g(ks[k]) += ds(ki) * qv;
        }
        t.g(query) += gq;
    });
}

Var Tape::softmax(Var logits) {
    Vec e = (val(logits).array() - val(logits).maxCoeff()).exp().matrix();
    e /= e.sum();
    return push(std::move(e), [logits](Tape& t, const Node& self) {
        const double dot = self.grad.dot(self.value);
        t.g(logits).array() += self.value.array() * (self.grad.array() - dot);
    });
}

Var Tape::log_softmax_at(Var logits, Eigen::Index index) {
    const Vec& z = val(logits);
    if (index < 0 || index >= z.size()) throw ContractViolation("log_softmax_at: index out of range");
    const double mx = z.maxCoeff();
    const double lse = mx + std::log((z.array() - mx).exp().sum());
    Vec y(1);
    y(0) = z(index) - lse;
    return push(std::move(y), [logits, index, lse](Tape& t, const Node& self) {
        const Vec& zz = t.val(logits);
        Vec p = (zz.array() - lse).exp().matrix();
        p(index) -= 1.0;
        t.g(logits) -= self.grad(0) * p;
    });
}

Var Tape::square(Var a) {
    return push(val(a).array().square().matrix(),
                [a](Tape& t, const Node& self) { t.g(a).array() += 2.0 * self.grad.array() * t.val(a).array(); });
}

Var Tape::log(Var a) {
    return push(val(a).array().log().matrix(),
                [a](Tape& t, const Node& self) { t.g(a).array() += self.grad.array() / t.val(a).array(); });
}

Var Tape::sum(std::span<const Var> xs) {
    if (xs.empty()) return constant(Vec::Zero(1));
    Vec y = val(xs.front());
    for (std::size_t i = 1; i < xs.size(); ++i) y += val(xs[i]);
    std::vector<Var> ins(xs.begin(), xs.end());
    return push(std::move(y), [ins = std::move(ins)](Tape& t, const Node& self) {
        for (const Var& v : ins) t.g(v) += self.grad;
    });
}

void Tape::backward(Var root) {
    if (root.tape != this) throw ContractViolation("backward: variable from another tape");
    if (root.size() != 1) throw ContractViolation("backward: root must be a scalar");
    nodes_[root.id].grad(0) += 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.backward && !n.grad.isZero(0.0)) n.backward(*this, n);
    }
}

}  // namespace facedyn::nn
