#include "fedfa/harness/checks.hpp"

#include <cmath>
#include <sstream>

#include "fedfa/federation.hpp"
#include "fedfa/feature_stats.hpp"
#include "fedfa/harness/experiment.hpp"
#include "fedfa/rng.hpp"

namespace fedfa::harness {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape, 0.0);
    for (auto& v : t.data()) v = scale * rng.normal();
    return t;
}

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// Builds a scalar loss from leaf inputs; returns the loss var.
using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

double max_rel_error(const std::vector<Tensor>& inputs, const Graph& graph) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var loss = graph(tape, leaves);
    tape.backward(loss);
    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape t2;
        std::vector<Var> l2;
        for (const auto& x : xs) l2.push_back(t2.leaf(x, false));
        return t2.value(graph(t2, l2))[0];
    };
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t a = 0; a < inputs.size(); ++a) {
        const auto g = tape.grad(leaves[a]);
        for (std::size_t i = 0; i < inputs[a].size(); ++i) {
            auto plus = inputs, minus = inputs;
            plus[a].data()[i] += h;
            minus[a].data()[i] -= h;
            const double fd = (eval(plus) - eval(minus)) / (2 * h);
            const double an = g[i];
            const double err = std::abs(fd - an) / std::max(1.0, std::max(std::abs(fd), std::abs(an)));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

ExperimentConfig tiny_config() {
    ExperimentConfig c;
    c.name = "tiny";
    c.rounds = 2;
    c.clients = 3;
    c.batch_size = 8;
    c.lr = 0.05;
    c.dataset.sizes = SplitSizes{16, 0, 8};
    c.dataset.task.height = 8;
    c.dataset.task.width = 8;
    c.stage_channels = {4, 4};
    return c;
}

}  // namespace

CheckResult check_noise_identity(std::size_t cases) {
    CheckResult r{"noise identity", true, ""};
    Rng rng(0, Stream::theory, {1});
    double worst = 0.0;
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t b = 1 + rng.index(4), c = 1 + rng.index(5), h = 1 + rng.index(4), w = 1 + rng.index(4);
        Tensor x = random_tensor({b, c, h, w}, rng, rng.uniform(0.1, 5.0));
        FusedVariance fused;
        for (std::size_t k = 0; k < c; ++k) {
            fused.var_mu_hat.push_back(rng.uniform(0.0, 2.0));
            fused.var_sigma_hat.push_back(rng.uniform(0.0, 2.0));
        }
        const NoiseDraw eps = draw_noise(b, c, rng);
        const Tensor aug = apply_augmentation(x, fused, eps);
        const Tensor e = noise_view(x, fused, eps);
        for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(aug[i] - (x[i] + e[i])));
    }
    r.passed = worst < 1e-9;
    r.detail = "max deviation " + num(worst) + " over " + std::to_string(cases) + " cases";
    return r;
}

CheckResult check_gamma_normalization(std::size_t cases) {
    CheckResult r{"gamma normalization", true, ""};
    Rng rng(0, Stream::theory, {2});
    double worst = 0.0;
    for (std::size_t n = 0; n < cases; ++n) {
        const std::size_t c = 1 + rng.index(512);
        std::vector<double> v(c);
        for (auto& x : v) x = rng.bernoulli(0.1) ? 0.0 : rng.uniform(0.0, 10.0);
        double s = 0.0;
        for (double g : modulate(v)) s += g;
        worst = std::max(worst, std::abs(s - static_cast<double>(c)));
    }
    double equal_dev = 0.0;
    for (double g : modulate(std::vector<double>(7, 0.3))) equal_dev = std::max(equal_dev, std::abs(g - 1.0));
    r.passed = worst < 1e-9 && equal_dev < 1e-12;
    r.detail = "max |sum - C| " + num(worst) + ", equal-input deviation " + num(equal_dev);
    return r;
}

CheckResult check_gradients() {
    CheckResult r{"gradient oracle", true, ""};
    Rng rng(0, Stream::theory, {3});
    std::ostringstream os;
    auto run = [&](const std::string& name, std::vector<Tensor> inputs, Shape out_shape, const Graph& g) {
        const Tensor readout = random_tensor(out_shape, rng);
        const double e = max_rel_error(inputs, [&](Tape& t, const std::vector<Var>& v) {
            return ops::dot_constant(t, g(t, v), readout);
        });
        if (!(e < 1e-4)) r.passed = false;
        os << name << '=' << num(e) << ' ';
    };
    run("conv2d", {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
        {2, 3, 3, 3}, [](Tape& t, const std::vector<Var>& v) { return ops::conv2d(t, v[0], v[1], v[2], 2, 1); });
    run("linear", {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2}, rng)}, {3, 2},
        [](Tape& t, const std::vector<Var>& v) { return ops::linear(t, v[0], v[1], v[2]); });
    run("relu", {random_tensor({2, 3, 2, 2}, rng)}, {2, 3, 2, 2},
        [](Tape& t, const std::vector<Var>& v) { return ops::relu(t, v[0]); });
    run("max_pool2x2", {random_tensor({2, 2, 4, 5}, rng)}, {2, 2, 2, 2},
        [](Tape& t, const std::vector<Var>& v) { return ops::max_pool2x2(t, v[0]); });
    run("global_avg_pool", {random_tensor({2, 3, 3, 2}, rng)}, {2, 3},
        [](Tape& t, const std::vector<Var>& v) { return ops::global_avg_pool(t, v[0]); });
    run("flatten", {random_tensor({2, 3, 2, 2}, rng)}, {2, 12},
        [](Tape& t, const std::vector<Var>& v) { return ops::flatten(t, v[0]); });
    run("add", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, {3, 4},
        [](Tape& t, const std::vector<Var>& v) { return ops::add(t, v[0], v[1]); });
    run("scale", {random_tensor({3, 4}, rng)}, {3, 4},
        [](Tape& t, const std::vector<Var>& v) { return ops::scale(t, v[0], -1.7); });
    {
        const Tensor targets = random_tensor({3, 4}, rng);
        Tensor soft(targets.shape(), 0.0);
        for (std::size_t i = 0; i < 3; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 4; ++j) s += soft.data()[i * 4 + j] = std::exp(targets[i * 4 + j]);
            for (std::size_t j = 0; j < 4; ++j) soft.data()[i * 4 + j] /= s;
        }
        const double e = max_rel_error({random_tensor({3, 4}, rng)}, [&](Tape& t, const std::vector<Var>& v) {
            return ops::softmax_cross_entropy(t, v[0], soft);
        });
        if (!(e < 1e-4)) r.passed = false;
        os << "softmax_cross_entropy=" << num(e) << ' ';
    }
    {
        const std::size_t b = 3, c = 2;
        FusedVariance fused{{0.4, 0.9}, {0.3, 0.7}};
        const NoiseDraw eps = draw_noise(b, c, rng);
        run("ffa_transform", {random_tensor({b, c, 3, 3}, rng)}, {b, c, 3, 3},
            [&](Tape& t, const std::vector<Var>& v) { return ffa_transform(t, v[0], fused, eps); });
    }
    r.detail = os.str();
    return r;
}

CheckResult check_comm_cost() {
    const std::vector<std::size_t> a{64, 192, 384, 256, 256}, b{32, 64, 128, 256, 512};
    const std::size_t ca = comm_cost(a, 4), cb = comm_cost(b, 4);
    return CheckResult{"comm cost", ca == 18432 && cb == 15872,
                       std::to_string(ca) + " B and " + std::to_string(cb) + " B"};
}

CheckResult check_reductions() {
    CheckResult r{"reduction identities", true, ""};
    ExperimentConfig base = tiny_config();
    auto with = [&](Algorithm a) {
        ExperimentConfig c = base;
        c.algorithm = a;
        return c;
    };
    const ExperimentResult avg = run_experiment(with(Algorithm::fedavg));

    ExperimentConfig fa0 = with(Algorithm::fedfa);
    fa0.ffa.p = 0.0;
    const bool p0 = same_trajectory(run_experiment(fa0), avg);

    ExperimentConfig prox = with(Algorithm::fedprox);
    prox.prox_mu = 0.0;
    const bool mu0 = same_trajectory(run_experiment(prox), avg);

    ExperimentConfig fz = with(Algorithm::fedfa);
    fz.force_zero_gamma = true;
    const bool g0 = same_trajectory(run_experiment(fz), run_experiment(with(Algorithm::fedfa_c)));

    r.passed = p0 && mu0 && g0;
    r.detail = std::string("fedfa(p=0)==fedavg: ") + (p0 ? "yes" : "no") + ", fedprox(0)==fedavg: " + (mu0 ? "yes" : "no") +
               ", fedfa(gamma=0)==fedfa-c: " + (g0 ? "yes" : "no");
    return r;
}

CheckResult check_determinism() {
    ExperimentConfig c = tiny_config();
    auto dump = [&] {
        const ExperimentResult res = run_experiment(c);
        std::string s;
        for (const auto& m : res.rounds) s += metrics_to_json(m, c).dump() + "\n";
        return s;
    };
    const bool same = dump() == dump();
    return CheckResult{"determinism", same, same ? "metric streams identical" : "metric streams differ"};
}

CheckResult check_theory(std::uint64_t seed) {
    const TheoryProblem p = reference_theory_problem(seed);
    Rng rng(seed, Stream::theory, {4});
    const StageNoise noise = ffa_noise(p, FfaVariant::client_only, nullptr, 0.5, rng);
    const auto scales = default_theory_scales();
    const TheoryCheckReport rep = theory_check(p, noise, scales);
    return CheckResult{"theory slope", rep.passed, "slope " + num(rep.slope) + " over scales 1e-1..1e-4"};
}

std::vector<CheckResult> run_invariant_checks() {
    return {check_noise_identity(1000), check_gamma_normalization(1000), check_gradients(), check_comm_cost(),
            check_reductions(),          check_determinism()};
}

}  // namespace fedfa::harness
