#include "fedfa/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fedfa/rng.hpp"

namespace fedfa {

void ModelParams::add(std::string name, Tensor tensor) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    entries_.push_back(Entry{std::move(name), std::move(tensor)});
}

const Tensor* ModelParams::find(const std::string& name) const {
    for (const auto& e : entries_) {
        if (e.name == name) return &e.tensor;
    }
    return nullptr;
}

Tensor* ModelParams::find(const std::string& name) {
    for (auto& e : entries_) {
        if (e.name == name) return &e.tensor;
    }
    return nullptr;
}

const Tensor& ModelParams::get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::out_of_range("no parameter named '" + name + "'");
    return *t;
}

bool ModelParams::same_layout(const ModelParams& other) const {
    if (entries_.size() != other.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].name != other.entries_[i].name ||
            entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) {
            return false;
        }
    }
    return true;
}

void ModelParams::require_same_layout(const ModelParams& other, const std::string& where) const {
    if (entries_.size() != other.entries_.size()) {
        throw std::invalid_argument(where + ": parameter count " + std::to_string(other.entries_.size()) +
                                    " != " + std::to_string(entries_.size()));
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& a = entries_[i];
        const auto& b = other.entries_[i];
        if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) {
            throw std::invalid_argument(where + ": parameter '" + b.name + "' " + shape_str(b.tensor.shape()) +
                                        " does not match '" + a.name + "' " + shape_str(a.tensor.shape()));
        }
    }
}

bool ModelParams::same_values(const ModelParams& other) const {
    if (!same_layout(other)) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!entries_[i].tensor.same_values(other.entries_[i].tensor)) return false;
    }
    return true;
}

std::size_t ModelParams::num_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
}

void ModelParams::zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
}

ModelSpec ModelSpec::reference(std::size_t in_channels, std::size_t height, std::size_t width,
                               std::size_t num_classes) {
    ModelSpec s;
    s.in_channels = in_channels;
    s.height = height;
    s.width = width;
    s.num_classes = num_classes;
    s.stages = {StageSpec{8, 3, 1, 1, true, true}, StageSpec{16, 3, 1, 1, true, true}};
    s.head = HeadInput::flatten;
    return s;
}

std::vector<std::size_t> ModelSpec::stage_channels() const {
    std::vector<std::size_t> out;
    for (const auto& st : stages) out.push_back(st.out_channels);
    return out;
}

Shape ModelSpec::stage_output_shape(std::size_t k) const {
    std::size_t c = in_channels, h = height, w = width;
    for (std::size_t i = 0; i <= k; ++i) {
        const auto& st = stages.at(i);
        if (h + 2 * st.padding < st.kernel || w + 2 * st.padding < st.kernel) {
            throw std::invalid_argument("stage " + std::to_string(i) + ": kernel larger than padded input");
        }
        h = (h + 2 * st.padding - st.kernel) / st.stride + 1;
        w = (w + 2 * st.padding - st.kernel) / st.stride + 1;
        if (st.pool) {
            if (h < 2 || w < 2) throw std::invalid_argument("stage " + std::to_string(i) + ": too small to pool");
            h /= 2;
            w /= 2;
        }
        c = st.out_channels;
    }
    return Shape{c, h, w};
}

std::size_t ModelSpec::head_features() const {
    if (stages.empty()) return head == HeadInput::flatten ? in_channels * height * width : in_channels;
    const Shape s = stage_output_shape(stages.size() - 1);
    return head == HeadInput::flatten ? shape_numel(s) : s[0];
}

void ModelSpec::validate() const {
    if (in_channels == 0 || height == 0 || width == 0 || num_classes == 0) {
        throw std::invalid_argument("model spec: dimensions must be positive");
    }
    for (const auto& st : stages) {
        if (st.out_channels == 0 || st.kernel == 0 || st.stride == 0) {
            throw std::invalid_argument("model spec: stage dimensions must be positive");
        }
    }
    (void)head_features();
}

namespace {

Tensor kaiming_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

Tensor bias_uniform(std::size_t n, std::size_t fan_in, Rng& rng) {
    Tensor t(Shape{n});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed, Stream::init, {});
    ModelParams p;
    std::size_t cin = spec.in_channels;
    for (std::size_t k = 0; k < spec.stages.size(); ++k) {
        const auto& st = spec.stages[k];
        const std::size_t fan_in = cin * st.kernel * st.kernel;
        const std::string prefix = "stage" + std::to_string(k);
        p.add(prefix + ".weight", kaiming_uniform(Shape{st.out_channels, cin, st.kernel, st.kernel}, fan_in, rng));
        p.add(prefix + ".bias", bias_uniform(st.out_channels, fan_in, rng));
        cin = st.out_channels;
    }
    const std::size_t F = spec.head_features();
    p.add("head.weight", kaiming_uniform(Shape{spec.num_classes, F}, F, rng));
    p.add("head.bias", bias_uniform(spec.num_classes, F, rng));
    return p;
}

ForwardPass forward(const ModelSpec& spec, const ModelParams& params, const Tensor& input,
                    const std::vector<StageHook>& hooks, bool check_finite) {
    if (hooks.size() > spec.stages.size()) {
        throw std::invalid_argument("forward: " + std::to_string(hooks.size()) + " hooks for " +
                                    std::to_string(spec.stages.size()) + " stages");
    }
    if (input.rank() != 4 || input.dim(1) != spec.in_channels || input.dim(2) != spec.height ||
        input.dim(3) != spec.width) {
        throw std::invalid_argument("forward: expected input [B," + std::to_string(spec.in_channels) + "," +
                                    std::to_string(spec.height) + "," + std::to_string(spec.width) + "], got " +
                                    shape_str(input.shape()));
    }
    if (params.size() != 2 * spec.stages.size() + 2) {
        throw std::invalid_argument("forward: parameter count does not match model spec");
    }

    ForwardPass pass;
    pass.tape = std::make_unique<Tape>(check_finite);
    Tape& tape = *pass.tape;
    pass.input = tape.leaf(input, false);
    for (const auto& e : params) pass.params.push_back(tape.leaf(e.tensor, true));

    Var x = pass.input;
    for (std::size_t k = 0; k < spec.stages.size(); ++k) {
        const auto& st = spec.stages[k];
        const std::string label = "stage" + std::to_string(k) + " conv2d";
        x = ops::conv2d(tape, x, pass.params[2 * k], pass.params[2 * k + 1], st.stride, st.padding, label);
        if (st.relu) x = ops::relu(tape, x);
        if (st.pool) x = ops::max_pool2x2(tape, x);
        pass.stage_outputs.push_back(x);
        if (k < hooks.size() && hooks[k]) x = hooks[k](tape, x, k);
        pass.hooked_outputs.push_back(x);
    }
    x = spec.head == HeadInput::flatten ? ops::flatten(tape, x) : ops::global_avg_pool(tape, x);
    const std::size_t n = spec.stages.size();
    pass.logits = ops::linear(tape, x, pass.params[2 * n], pass.params[2 * n + 1], "head linear");
    return pass;
}

void backward(ForwardPass& pass, Var loss, ModelParams& params) {
    if (!pass.tape) throw std::logic_error("backward: no forward pass recorded");
    if (params.size() != pass.params.size()) throw std::invalid_argument("backward: parameter count mismatch");
    pass.tape->backward(loss);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto g = pass.tape->grad(pass.params[i]);
        params[i].tensor.set_grad(std::vector<double>(g.begin(), g.end()));
    }
}

Tensor predict(const ModelSpec& spec, const ModelParams& params, const Tensor& input) {
    return forward(spec, params, input).logits_value();
}

}  // namespace fedfa
