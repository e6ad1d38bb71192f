#include "fedfa/harness/theory.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fedfa/data_synth.hpp"
#include "fedfa/feature_stats.hpp"
#include "fedfa/rng.hpp"

namespace fedfa::harness {

namespace {

Var loss_of(const TheoryProblem& p, ForwardPass& pass) {
    Tape& tape = *pass.tape;
    if (p.loss == TheoryLoss::cross_entropy) return ops::softmax_cross_entropy(tape, pass.logits, p.labels);
    return ops::dot_constant(tape, pass.logits, p.readout);
}

std::vector<StageHook> injection_hooks(const StageNoise& noise, double s) {
    std::vector<StageHook> hooks;
    for (std::size_t k = 0; k < noise.size(); ++k) {
        if (!noise[k]) {
            hooks.push_back([](Tape&, Var x, std::size_t) { return x; });
            continue;
        }
        Tensor scaled = *noise[k];
        for (auto& v : scaled.data()) v *= s;
        hooks.push_back([scaled = std::move(scaled)](Tape& tape, Var x, std::size_t) {
            return ops::add_constant(tape, x, scaled);
        });
    }
    return hooks;
}

}  // namespace

StageNoise ffa_noise(const TheoryProblem& problem, FfaVariant variant,
                     const std::vector<ModulationCoefficients>* gamma, double lambda, Rng& rng) {
    ForwardPass pass = forward(problem.spec, problem.params, problem.inputs);
    StageNoise out;
    for (std::size_t k = 0; k < pass.stage_outputs.size(); ++k) {
        const Tensor& x = pass.tape->value(pass.stage_outputs[k]);
        const BatchStatVariance v = batch_variances(channel_stats(x));
        const ModulationCoefficients* g = gamma && k < gamma->size() ? &(*gamma)[k] : nullptr;
        const FusedVariance fused = variant_variances(variant, v, g, lambda);
        const NoiseDraw eps = draw_noise(x.dim(0), x.dim(1), rng);
        out.push_back(noise_view(x, fused, eps));
    }
    return out;
}

TheoryCheckReport theory_check(const TheoryProblem& problem, const StageNoise& noise, std::span<const double> scales) {
    if (scales.empty()) throw std::invalid_argument("theory_check: no scales");
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (!(scales[i] > 0.0) || !std::isfinite(scales[i])) throw std::invalid_argument("theory_check: scales must be positive");
        if (i && !(scales[i] < scales[i - 1])) throw std::invalid_argument("theory_check: scales must be strictly descending");
    }
    if (noise.size() > problem.spec.stages.size()) throw std::invalid_argument("theory_check: more noise maps than stages");
    if (problem.loss == TheoryLoss::linear_readout) {
        require_shape(problem.readout, Shape{problem.inputs.dim(0), problem.spec.num_classes}, "theory_check readout");
    }

    TheoryCheckReport rep;
    rep.scales.assign(scales.begin(), scales.end());

    ForwardPass clean = forward(problem.spec, problem.params, problem.inputs);
    Var clean_loss = loss_of(problem, clean);
    rep.clean_loss = clean.tape->value(clean_loss)[0];
    if (!std::isfinite(rep.clean_loss)) throw std::runtime_error("theory_check: non-finite clean loss");
    clean.tape->backward(clean_loss);

    double directional = 0.0;  // sum_z <dL/dX^z, e^z>
    for (std::size_t k = 0; k < noise.size(); ++k) {
        if (!noise[k]) continue;
        require_shape(*noise[k], clean.tape->value(clean.stage_outputs[k]).shape(),
                      "theory_check noise at stage " + std::to_string(k));
        const auto gd = clean.tape->grad(clean.stage_outputs[k]);
        const auto ed = noise[k]->data();
        for (std::size_t i = 0; i < gd.size(); ++i) directional += gd[i] * ed[i];
    }

    for (double s : rep.scales) {
        ForwardPass noised = forward(problem.spec, problem.params, problem.inputs, injection_hooks(noise, s));
        const double ln = noised.tape->value(loss_of(problem, noised))[0];
        if (!std::isfinite(ln)) {
            std::ostringstream os;
            os << "theory_check: non-finite noised loss at scale " << s;
            throw std::runtime_error(os.str());
        }
        const double pred = rep.clean_loss + s * directional;
        rep.noised_losses.push_back(ln);
        rep.predicted_losses.push_back(pred);
        rep.residuals.push_back(std::abs(ln - pred));
        rep.max_residual = std::max(rep.max_residual, rep.residuals.back());
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rep.scales.size(); ++i) {
        if (!(rep.residuals[i] > 0.0)) continue;
        const double x = std::log(rep.scales[i]), y = std::log(rep.residuals[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    if (n >= 2) {
        const double dn = static_cast<double>(n);
        rep.slope = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
    } else {
        rep.slope = std::numeric_limits<double>::quiet_NaN();
    }
    rep.passed = rep.slope >= 1.8 && rep.slope <= 2.2;
    return rep;
}

std::vector<double> default_theory_scales() { return {1e-1, 5e-2, 2e-2, 1e-2, 5e-3, 2e-3, 1e-3, 5e-4, 2e-4, 1e-4}; }

TheoryProblem reference_theory_problem(std::uint64_t seed, std::size_t batch) {
    TaskConfig task;
    task.seed = seed;
    BlobTextureTask base(task);
    LabeledSet set = base.make_set(0, batch);
    TheoryProblem p;
    p.spec = ModelSpec::reference(task.channels, task.height, task.width, task.num_classes);
    p.params = init_params(p.spec, seed);
    p.inputs = set.inputs;
    p.labels = set.labels;
    return p;
}

}  // namespace fedfa::harness
