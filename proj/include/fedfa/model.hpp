#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedfa/autograd.hpp"
#include "fedfa/tensor.hpp"

namespace fedfa {

// Ordered list of named tensors. Used for model parameters and, with the
// same encoding, for any named-tensor bundle written to disk.
class ModelParams {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
    };

    void add(std::string name, Tensor tensor);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    const Tensor* find(const std::string& name) const;
    Tensor* find(const std::string& name);
    const Tensor& get(const std::string& name) const;

    // Same names and shapes, in the same order.
    bool same_layout(const ModelParams& other) const;
    void require_same_layout(const ModelParams& other, const std::string& where) const;

    // Bitwise equality of all values.
    bool same_values(const ModelParams& other) const;

    std::size_t num_values() const;
    void zero_grad();

private:
    std::vector<Entry> entries_;
};

struct StageSpec {
    std::size_t out_channels = 8;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool relu = true;
    bool pool = true;  // 2x2 max pool
};

enum class HeadInput { flatten, global_average };

// Feature extractor h = h^K o ... o h^1 of convolutional stages, followed by a
// linear classifier g. Hooks run after each stage.
struct ModelSpec {
    std::size_t in_channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    std::size_t num_classes = 4;
    std::vector<StageSpec> stages;
    HeadInput head = HeadInput::flatten;

    // conv(in->8)-ReLU-pool, conv(8->16)-ReLU-pool, linear.
    static ModelSpec reference(std::size_t in_channels, std::size_t height, std::size_t width,
                               std::size_t num_classes);

    std::vector<std::size_t> stage_channels() const;
    // [C,H,W] of stage k's output.
    Shape stage_output_shape(std::size_t k) const;
    std::size_t head_features() const;
    void validate() const;
};

// Kaiming-uniform fan-in weights; biases uniform in +-1/sqrt(fan_in).
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

// Receives the stage index and the stage output; returns the (possibly
// augmented) features passed to the next stage.
using StageHook = std::function<Var(Tape& tape, Var features, std::size_t stage)>;

struct ForwardPass {
    std::unique_ptr<Tape> tape;
    Var input;
    Var logits;
    std::vector<Var> params;         // one per ModelParams entry
    std::vector<Var> stage_outputs;  // X^k before the hook
    std::vector<Var> hooked_outputs; // after the hook (== stage_outputs when no hook)

    const Tensor& logits_value() const { return tape->value(logits); }
};

ForwardPass forward(const ModelSpec& spec, const ModelParams& params, const Tensor& input,
                    const std::vector<StageHook>& hooks = {}, bool check_finite = false);

// Runs reverse accumulation from `loss` and writes each parameter gradient
// into params[i].tensor.grad().
void backward(ForwardPass& pass, Var loss, ModelParams& params);

// Logits without recording a tape.
Tensor predict(const ModelSpec& spec, const ModelParams& params, const Tensor& input);

}  // namespace fedfa
