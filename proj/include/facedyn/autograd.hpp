#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace facedyn::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    Eigen::Index size() const { return value.size(); }
};

// Owns every learnable tensor of a model. Addresses are stable for the
// lifetime of the set; iteration is in insertion order.
class ParameterSet {
public:
    ParameterSet() = default;
    ParameterSet(const ParameterSet& other);
    ParameterSet& operator=(const ParameterSet& other);
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    void zero_grad();
    std::size_t num_scalars() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.cbegin(); }
    auto end() const { return params_.cend(); }
    std::size_t size() const { return params_.size(); }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a vector-valued node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Vec& value() const;
    Eigen::Index size() const { return value().size(); }
    double scalar() const { return value()(0); }
};

// Reverse-mode recorder. Every op appends a node; backward() walks the nodes
// in reverse and accumulates into node gradients and Parameter::grad.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Vec v);
    // A parameter used as a vector (e.g. a bias); must have one column.
    Var param(Parameter& p);

    Var affine(Parameter& w, Var x, Parameter* b = nullptr);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var tanh(Var a);
    Var sigmoid(Var a);
    // Elementwise clamp to [lo, hi]; gradient passes only where not clamped.
    Var clamp(Var a, double lo, double hi);
    // (1 - z) * n + z * h
    Var gru_blend(Var z, Var n, Var h);
    Var concat(std::span<const Var> parts);
    Var slice(Var a, Eigen::Index start, Eigen::Index len);
    // Elementwise max over equally sized vectors; gradient routed to the argmax.
    Var max_pool(std::span<const Var> xs);
    // Multiplies by a fixed mask (inverted dropout passes keep/(1-p)).
    Var mask(Var a, const Vec& m);
    // Scaled dot-product attention of one query over keys/values:
    //   out = sum_k softmax_k(<q, k_k> / sqrt(d)) v_k
    Var attend(Var query, std::span<const Var> keys, std::span<const Var> values);
    Var softmax(Var logits);
    // log softmax(logits)[index], size 1.
    Var log_softmax_at(Var logits, Eigen::Index index);
    // Scalar ops on size-1 nodes.
    Var square(Var a);
    Var log(Var a);
    Var sum(std::span<const Var> xs);

    void backward(Var root);
    std::size_t num_nodes() const { return nodes_.size(); }
    const Vec& value(std::size_t id) const { return nodes_[id].value; }
    const Vec& grad(std::size_t id) const { return nodes_[id].grad; }

private:
    struct Node {
        Vec value;
        Vec grad;
        std::function<void(Tape&, const Node&)> backward;
    };

    Var push(Vec value, std::function<void(Tape&, const Node&)> backward = {});
    Vec& g(Var v) { return nodes_[v.id].grad; }
    const Vec& val(Var v) const { return nodes_[v.id].value; }

    std::vector<Node> nodes_;
};

}  // namespace facedyn::nn
