#include <glob.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "fedfa/federation.hpp"
#include "fedfa/harness/checks.hpp"
#include "fedfa/harness/config.hpp"
#include "fedfa/harness/experiment.hpp"
#include "fedfa/harness/report.hpp"

namespace fs = std::filesystem;
using namespace fedfa::harness;

namespace {

fs::path run_root(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("FEDFA_RUN_ROOT"); env && *env) return env;
    return "runs";
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    glob_t g{};
    std::vector<std::string> out;
    const int rc = glob(pattern.c_str(), 0, nullptr, &g);
    if (rc == 0) {
        for (std::size_t i = 0; i < g.gl_pathc; ++i) out.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw std::runtime_error("glob failed for '" + pattern + "'");
    return out;
}

void print_summary(const ExperimentResult& r) {
    const auto& last = r.last();
    std::printf("%-10s seed %-4llu rounds %-3zu avg acc %.4f", to_string(r.config.algorithm).c_str(),
                static_cast<unsigned long long>(r.config.seed), last.round, last.average_accuracy);
    if (last.held_out_accuracy) std::printf("  held-out %.4f", *last.held_out_accuracy);
    if (!r.run_dir.empty()) std::printf("  -> %s", r.run_dir.string().c_str());
    std::printf("\n");
}

int run_all(const std::vector<ExperimentConfig>& configs, const fs::path& root, std::size_t workers) {
    std::atomic<std::size_t> next{0};
    std::atomic<int> failures{0};
    std::mutex io;
    auto worker = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            const auto& cfg = configs[i];
            try {
                const ExperimentResult r = run_experiment(cfg, run_dir_for(root, cfg));
                std::lock_guard lock(io);
                print_summary(r);
            } catch (const std::exception& e) {
                ++failures;
                std::lock_guard lock(io);
                std::cerr << "run " << cfg.name << " " << to_string(cfg.algorithm) << " seed " << cfg.seed
                          << " failed: " << e.what() << '\n';
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::max<std::size_t>(1, workers); ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return failures == 0 ? 0 : 1;
}

int print_checks(const std::vector<CheckResult>& results) {
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%s %s: %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated feature augmentation simulator"};
    app.require_subcommand(1);
    std::string root_flag;
    app.add_option("--run-root", root_flag, "Run root directory (default $FEDFA_RUN_ROOT or ./runs)");

    auto* run = app.add_subcommand("run", "Run one experiment config");
    std::string run_config;
    std::vector<std::uint64_t> run_seeds;
    std::string run_alg;
    std::optional<std::size_t> held_out;
    run->add_option("config", run_config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", run_seeds, "Override seed(s)");
    run->add_option("--algorithm", run_alg, "Override algorithm");
    run->add_option("--held-out", held_out, "Leave this client out of training");

    auto* sweep = app.add_subcommand("sweep", "Run every config matching the glob(s)");
    std::vector<std::string> patterns;
    std::size_t workers = 1;
    sweep->add_option("configs", patterns, "Config glob(s)")->required();
    sweep->add_option("--workers,-j", workers, "Parallel runs")->check(CLI::PositiveNumber);

    auto* check = app.add_subcommand("check", "Numerical self-checks");
    std::string what;
    check->add_option("suite", what, "theory | invariants")->required()->check(CLI::IsMember({"theory", "invariants"}));
    std::uint64_t theory_seed = 0;
    check->add_option("--seed", theory_seed, "Seed for the theory check");

    auto* report = app.add_subcommand("report", "Summarise a run directory");
    std::string report_dir;
    report->add_option("run-dir", report_dir, "Run directory")->required();

    auto* cc = app.add_subcommand("commcost", "Per-round statistics exchange bytes per client");
    std::vector<std::size_t> channels;
    std::size_t bytes = 4;
    cc->add_option("channels", channels, "Channels per FFA layer")->required();
    cc->add_option("--bytes", bytes, "Bytes per value")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path root = run_root(root_flag);
        if (*run) {
            ExperimentConfig cfg = load_config(run_config);
            if (!run_alg.empty()) {
                cfg.algorithm = parse_algorithm(run_alg);
                cfg.sweep_algorithms.clear();
            }
            if (!run_seeds.empty()) cfg.sweep_seeds = run_seeds;
            if (held_out) cfg.held_out = *held_out;
            cfg.validate();
            return run_all(expand_sweep(cfg), root, 1);
        }
        if (*sweep) {
            std::vector<ExperimentConfig> configs;
            std::set<std::string> names;
            for (const auto& p : patterns) {
                const auto files = expand_glob(p);
                if (files.empty()) std::cerr << "warning: no config matches '" << p << "'\n";
                for (const auto& f : files) {
                    for (auto& c : expand_sweep(load_config(f))) {
                        names.insert(c.name);
                        configs.push_back(std::move(c));
                    }
                }
            }
            if (configs.empty()) throw std::invalid_argument("sweep: no configs");
            const int rc = run_all(configs, root, workers);
            for (const auto& n : names) {
                const auto s = emit_report(root / n);
                for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
                std::printf("report: %s\n", s.csv_path.string().c_str());
            }
            return rc;
        }
        if (*check) {
            if (what == "theory") return print_checks({check_theory(theory_seed)});
            return print_checks(run_invariant_checks());
        }
        if (*report) {
            const auto s = emit_report(report_dir);
            for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
            std::printf("%zu rows -> %s, %s\n", s.rows.size(), s.csv_path.string().c_str(), s.svg_path.string().c_str());
            return 0;
        }
        if (*cc) {
            std::printf("%zu\n", fedfa::comm_cost(channels, bytes));
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
