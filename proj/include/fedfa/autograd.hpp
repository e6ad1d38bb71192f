#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfa/tensor.hpp"

namespace fedfa {

// Handle to a node recorded on a Tape.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
    bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Reverse-mode computation record. Nodes are appended in topological order by
// construction, so backward is a single reverse sweep.
class Tape {
public:
    // Receives the node's output gradient and one gradient buffer per input
    // (nullptr for inputs that do not require a gradient).
    using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<std::vector<double>*> grad_in)>;

    explicit Tape(bool check_finite = false) : check_finite_(check_finite) {}
    // Backward closures hold references to the tape.
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward, std::string_view op = {});

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;

    // Valid after backward(); all-zero for nodes the loss does not depend on.
    std::span<const double> grad(Var v) const;

    void backward(Var loss);
    bool backward_done() const { return backward_done_; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        std::vector<double> grad;
    };
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool check_finite_ = false;
    bool backward_done_ = false;
};

namespace ops {

Var conv2d(Tape& tape, Var x, Var weight, Var bias, std::size_t stride, std::size_t padding,
           std::string_view label = "conv2d");
Var linear(Tape& tape, Var x, Var weight, Var bias, std::string_view label = "linear");
Var relu(Tape& tape, Var x);
// 2x2 window, stride 2; trailing odd rows/columns are dropped.
Var max_pool2x2(Tape& tape, Var x);
Var global_avg_pool(Tape& tape, Var x);
Var flatten(Tape& tape, Var x);

Var add(Tape& tape, Var a, Var b);
Var add_constant(Tape& tape, Var x, const Tensor& c);
Var scale(Tape& tape, Var x, double s);
Var sum(Tape& tape, Var x);
Var half_squared_norm(Tape& tape, Var x);
// sum(x * c) for a constant c of the same shape.
Var dot_constant(Tape& tape, Var x, const Tensor& c);

// Mean over the batch of -sum_j t[b,j] log softmax(z[b])_j for row-stochastic
// targets t. Hard labels are one-hot rows.
Var softmax_cross_entropy(Tape& tape, Var logits, const Tensor& targets);
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const int> labels);

Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

}  // namespace ops

}  // namespace fedfa
