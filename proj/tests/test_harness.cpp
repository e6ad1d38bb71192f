#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedfa/harness/checks.hpp"
#include "fedfa/harness/config.hpp"
#include "fedfa/harness/experiment.hpp"
#include "fedfa/harness/mixup.hpp"
#include "fedfa/harness/report.hpp"
#include "fedfa/harness/theory.hpp"

using namespace fedfa;
using namespace fedfa::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(Algorithm a = Algorithm::fedavg) {
    ExperimentConfig c;
    c.name = "tiny";
    c.algorithm = a;
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

fs::path fresh_dir(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("mixup") {
    Rng rng(1);
    SUBCASE("two rows, lambda one half") {
        Tensor x(Shape{2, 1}, {0.0, 2.0});
        Tensor y(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
        const MixupResult r = mixup_batch(x, y, 0.2, rng, 0.5);
        CHECK(r.partner == std::vector<std::size_t>{1, 0});
        CHECK(x.values() == std::vector<double>{1.0, 1.0});
        CHECK(y.values() == std::vector<double>{0.5, 0.5, 0.5, 0.5});
    }
    SUBCASE("lambda one is the identity") {
        Tensor x(Shape{4, 3}, 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<double>(i);
        Tensor y(Shape{4, 2}, 0.25);
        const Tensor x0 = x;
        mixup_batch(x, y, 0.2, rng, 1.0);
        CHECK(x.same_values(x0));
    }
    SUBCASE("partners form a derangement and targets stay distributions") {
        for (int t = 0; t < 50; ++t) {
            const std::size_t b = 2 + rng.index(7);
            Tensor x(Shape{b, 2}, 1.0);
            Tensor y(Shape{b, 3}, 0.0);
            for (std::size_t i = 0; i < b; ++i) y.data()[i * 3 + rng.index(3)] = 1.0;
            const MixupResult r = mixup_batch(x, y, 0.4, rng);
            CHECK(r.lambda >= 0.0);
            CHECK(r.lambda <= 1.0);
            for (std::size_t i = 0; i < b; ++i) {
                CHECK(r.partner[i] != i);
                CHECK(y[i * 3] + y[i * 3 + 1] + y[i * 3 + 2] == doctest::Approx(1.0));
            }
        }
    }
    SUBCASE("single row is untouched") {
        Tensor x(Shape{1, 2}, {3.0, 4.0});
        Tensor y(Shape{1, 2}, {1.0, 0.0});
        mixup_batch(x, y, 0.2, rng);
        CHECK(x.values() == std::vector<double>{3.0, 4.0});
    }
    Tensor x(Shape{2, 1}, 0.0), y(Shape{3, 1}, 0.0);
    CHECK_THROWS_AS(mixup_batch(x, y, 0.2, rng), std::invalid_argument);
    Tensor y2(Shape{2, 1}, 0.0);
    CHECK_THROWS_AS(mixup_batch(x, y2, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(mixup_batch(x, y2, 0.2, rng, 1.5), std::invalid_argument);
}

TEST_CASE("config parsing") {
    const nlohmann::json j = config_to_json(tiny(Algorithm::fedfa_r));
    const ExperimentConfig back = config_from_json(j);
    CHECK(config_to_json(back) == j);
    CHECK(back.algorithm == Algorithm::fedfa_r);

    for (auto a : {Algorithm::fedavg, Algorithm::fedprox, Algorithm::fedavgm, Algorithm::mixup, Algorithm::fedfa,
                   Algorithm::fedfa_c, Algorithm::fedfa_r})
        CHECK(parse_algorithm(to_string(a)) == a);
    CHECK_THROWS(parse_algorithm("fedbn"));

    nlohmann::json unknown = j;
    unknown["learning_rate"] = 0.1;
    CHECK_THROWS(config_from_json(unknown));
    nlohmann::json nested = j;
    nested["ffa"]["beta"] = 0.1;
    CHECK_THROWS(config_from_json(nested));

    auto invalid = [](auto mutate) {
        ExperimentConfig c = tiny();
        mutate(c);
        CHECK_THROWS(c.validate());
    };
    invalid([](ExperimentConfig& c) { c.ffa.p = 1.5; });
    invalid([](ExperimentConfig& c) { c.ffa.alpha = -0.1; });
    invalid([](ExperimentConfig& c) { c.lr = -0.1; });
    invalid([](ExperimentConfig& c) { c.participation = 0.0; });
    invalid([](ExperimentConfig& c) { c.batch_size = 0; });
    invalid([](ExperimentConfig& c) { c.held_out = 3; });
    invalid([](ExperimentConfig& c) { c.stage_channels.clear(); });

    ExperimentConfig sweep = tiny();
    sweep.sweep_algorithms = {Algorithm::fedavg, Algorithm::fedfa};
    sweep.sweep_seeds = {0, 1, 2};
    const auto runs = expand_sweep(sweep);
    CHECK(runs.size() == 6);
    CHECK(runs[5].algorithm == Algorithm::fedfa);
    CHECK(runs[5].seed == 2);
    CHECK(expand_sweep(tiny()).size() == 1);

    const fs::path dir = fresh_dir("fedfa_config_test");
    {
        std::ofstream out(dir / "named.json");
        out << "// comment\n{\"rounds\": 3, \"algorithm\": \"fedfa-c\"}\n";
    }
    const ExperimentConfig loaded = load_config(dir / "named.json");
    CHECK(loaded.name == "named");
    CHECK(loaded.rounds == 3);
    CHECK(loaded.algorithm == Algorithm::fedfa_c);
    CHECK_THROWS(load_config(dir / "missing.json"));
    fs::remove_all(dir);
}

TEST_CASE("experiment runs") {
    SUBCASE("zero rounds returns the initial model") {
        ExperimentConfig c = tiny();
        c.rounds = 0;
        const ExperimentResult r = run_experiment(c);
        REQUIRE(r.rounds.size() == 1);
        CHECK(r.rounds[0].uplink_bytes == 0);
        CHECK(r.final_model.same_values(init_params(c.model_spec(), c.seed)));
    }
    SUBCASE("reductions to FedAvg and FedFA-C") {
        const ExperimentResult avg = run_experiment(tiny());
        ExperimentConfig fa0 = tiny(Algorithm::fedfa);
        fa0.ffa.p = 0.0;
        const ExperimentResult fa = run_experiment(fa0);
        CHECK(same_trajectory(fa, avg));
        CHECK(fa.last().uplink_bytes > avg.last().uplink_bytes);

        ExperimentConfig prox = tiny(Algorithm::fedprox);
        prox.prox_mu = 0.0;
        CHECK(same_trajectory(run_experiment(prox), avg));

        ExperimentConfig zg = tiny(Algorithm::fedfa);
        zg.force_zero_gamma = true;
        CHECK(same_trajectory(run_experiment(zg), run_experiment(tiny(Algorithm::fedfa_c))));
    }
    SUBCASE("every algorithm completes with finite metrics") {
        for (auto a : {Algorithm::fedavg, Algorithm::fedprox, Algorithm::fedavgm, Algorithm::mixup, Algorithm::fedfa,
                       Algorithm::fedfa_c, Algorithm::fedfa_r}) {
            const ExperimentResult r = run_experiment(tiny(a));
            CHECK(r.rounds.size() == 3);
            CHECK(std::isfinite(r.last().average_accuracy));
            CHECK(r.last().accuracy.size() == 3);
        }
    }
    SUBCASE("run directory contents are reproducible") {
        const fs::path root = fresh_dir("fedfa_run_test");
        const ExperimentConfig c = tiny(Algorithm::fedfa);
        const fs::path d = run_dir_for(root, c);
        CHECK(d == root / "tiny" / "fedfa-seed0");
        run_experiment(c, d);
        for (auto f : {"config.json", "metrics.jsonl", "metrics.csv", "timing.jsonl", "final_model.bin"})
            CHECK(fs::exists(d / f));
        const std::string first = slurp(d / "metrics.jsonl");
        const std::string csv = slurp(d / "metrics.csv");
        run_experiment(c, d);
        CHECK(slurp(d / "metrics.jsonl") == first);
        CHECK(slurp(d / "metrics.csv") == csv);

        const auto rounds = read_metrics_jsonl(d / "metrics.jsonl");
        REQUIRE(rounds.size() == 3);
        const auto parsed = parse_metrics_csv(csv);
        REQUIRE(parsed.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(parsed[i].average_accuracy == rounds[i].average_accuracy);
            CHECK(parsed[i].uplink_bytes == rounds[i].uplink_bytes);
            CHECK(parsed[i].accuracy == rounds[i].accuracy);
            CHECK(parsed[i].train_loss == rounds[i].train_loss);
        }
        fs::remove_all(root);
    }
}

TEST_CASE("metrics serialization round trip") {
    RoundMetrics m;
    m.round = 4;
    m.clients = {0, 2};
    m.accuracy = {0.1, 1.0 / 3.0};
    m.test_loss = {1.25, 0.7};
    m.average_accuracy = (0.1 + 1.0 / 3.0) / 2.0;
    m.held_out_accuracy = 0.625;
    m.selected = {2};
    m.train_loss = {0.3};
    m.failed = {0};
    m.uplink_bytes = 1234;
    m.downlink_bytes = 99;
    CHECK(metrics_from_json(metrics_to_json(m, tiny())) == m);
    const auto parsed = parse_metrics_csv(metrics_csv({m}));
    REQUIRE(parsed.size() == 1);
    CHECK(parsed[0].held_out_accuracy == m.held_out_accuracy);
    CHECK(parsed[0].accuracy == m.accuracy);
    CHECK(parsed[0].failed == m.failed);
}

TEST_CASE("leave one client out") {
    SUBCASE("two clients, hold out one") {
        ExperimentConfig c = tiny();
        c.clients = 2;
        const LeaveOneOutResult r = leave_one_out(c, 1);
        CHECK(r.training_clients == std::vector<std::size_t>{0});
        CHECK(r.experiment.last().clients == std::vector<std::size_t>{0});
        CHECK(r.participation_gap == doctest::Approx(r.in_federation_accuracy - r.held_out_accuracy));
        CHECK(r.experiment.last().held_out_accuracy.has_value());
    }
    SUBCASE("without shift the gap is small") {
        ExperimentConfig c = tiny();
        c.clients = 4;
        c.rounds = 8;
        c.dataset.shift_strength = 0.0;
        c.dataset.sizes = SplitSizes{48, 0, 48};
        const LeaveOneOutResult r = leave_one_out(c, 0);
        CHECK(std::abs(r.participation_gap) < 0.1);
    }
    ExperimentConfig c = tiny();
    CHECK_THROWS(leave_one_out(c, 3));
    c.clients = 1;
    CHECK_THROWS(leave_one_out(c, 0));
}

TEST_CASE("first-order theory check") {
    const TheoryProblem ref = reference_theory_problem(0);
    const auto scales = default_theory_scales();
    SUBCASE("zero noise has zero residual") {
        StageNoise zero;
        ForwardPass pass = forward(ref.spec, ref.params, ref.inputs);
        for (const auto& v : pass.stage_outputs) zero.push_back(Tensor(pass.tape->value(v).shape(), 0.0));
        const TheoryCheckReport r = theory_check(ref, zero, scales);
        CHECK(r.max_residual == 0.0);
    }
    SUBCASE("affine network is exact to rounding") {
        TheoryProblem lin = ref;
        for (auto& s : lin.spec.stages) {
            s.relu = false;
            s.pool = false;
        }
        lin.params = init_params(lin.spec, 3);
        lin.loss = TheoryLoss::linear_readout;
        lin.readout = Tensor(Shape{lin.inputs.dim(0), lin.spec.num_classes});
        Rng rng(5);
        for (auto& v : lin.readout.data()) v = rng.normal();
        const StageNoise noise = ffa_noise(lin, FfaVariant::client_only, nullptr, 0.5, rng);
        const TheoryCheckReport r = theory_check(lin, noise, scales);
        CHECK(r.max_residual < 1e-9 * std::max(1.0, std::abs(r.clean_loss)));
    }
    SUBCASE("reference net shows second-order residuals") {
        Rng rng(derive_seed(0, {1}));
        const TheoryCheckReport r = theory_check(ref, ffa_noise(ref, FfaVariant::client_only, nullptr, 0.5, rng), scales);
        CHECK(r.slope >= 1.8);
        CHECK(r.slope <= 2.2);
        CHECK(r.passed);
    }
    StageNoise none;
    const std::vector<double> ascending{1e-3, 1e-2};
    CHECK_THROWS(theory_check(ref, none, ascending));
    const std::vector<double> negative{-1.0};
    CHECK_THROWS(theory_check(ref, none, negative));
}

TEST_CASE("report") {
    SUBCASE("empty directory gives a header-only summary") {
        const fs::path d = fresh_dir("fedfa_report_empty");
        const ReportSummary s = emit_report(d);
        CHECK(s.rows.empty());
        CHECK(slurp(s.csv_path) == "algorithm,seed,round,average_accuracy\n");
        CHECK(fs::exists(s.svg_path));
        fs::remove_all(d);
    }
    SUBCASE("two algorithms give two curves") {
        const fs::path root = fresh_dir("fedfa_report_two");
        for (auto a : {Algorithm::fedavg, Algorithm::fedfa}) {
            const ExperimentConfig c = tiny(a);
            run_experiment(c, run_dir_for(root, c));
        }
        fs::create_directories(root / "tiny" / "broken");
        { std::ofstream(root / "tiny" / "broken" / "config.json") << "{}"; }
        const ReportSummary s = emit_report(root / "tiny");
        CHECK(s.rows.size() == 6);
        CHECK(s.warnings.size() == 1);
        const std::string svg = slurp(s.svg_path);
        std::size_t lines = 0;
        for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
        CHECK(lines == 2);
        CHECK(svg.find("data-algorithm=\"fedfa\"") != std::string::npos);
        CHECK(parse_summary_csv(slurp(s.csv_path)) == s.rows);
        fs::remove_all(root);
    }
    const std::vector<ReportRow> rows{{"fedavg", 0, 0, 0.25}, {"fedavg", 0, 1, 1.0 / 3.0}};
    CHECK(parse_summary_csv(summary_csv(rows)) == rows);
    CHECK_THROWS(emit_report("/nonexistent/fedfa_dir"));
}

TEST_CASE("invariant checks pass") {
    for (const auto& r : {check_noise_identity(50), check_gamma_normalization(50), check_comm_cost()}) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.passed);
    }
}
