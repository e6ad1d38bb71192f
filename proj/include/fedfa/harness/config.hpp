#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfa/data_synth.hpp"
#include "fedfa/federation.hpp"
#include "fedfa/ffa.hpp"

namespace fedfa::harness {

enum class Algorithm { fedavg, fedprox, fedavgm, mixup, fedfa, fedfa_c, fedfa_r };

std::string to_string(Algorithm a);
Algorithm parse_algorithm(const std::string& s);

struct DatasetSpec {
    std::string kind = "feature_shift";  // feature_shift | dirichlet | size_skew
    double shift_strength = 1.0;         // applied on top of dirichlet/size_skew when > 0
    double concentration = 0.5;
    double size_ratio = 4.0;
    std::size_t total = 800;             // pool size for dirichlet / size_skew
    SplitSizes sizes{64, 0, 64};         // per client, feature_shift
    SplitFractions fractions{0.0, 0.25};
    TaskConfig task;
    bool seed_from_experiment = true;    // data and task seeds follow the experiment seed
};

struct ExperimentConfig {
    std::string name = "experiment";
    Algorithm algorithm = Algorithm::fedfa;
    double prox_mu = 0.01;          // fedprox
    double server_momentum = 0.9;   // fedavgm
    double mixup_alpha = 0.2;       // mixup: lambda ~ Beta(alpha, alpha)
    FfaConfig ffa;                  // p, alpha, lambda
    bool force_zero_gamma = false;
    std::size_t rounds = 30;
    std::size_t local_epochs = 1;
    double lr = 0.01;
    std::size_t batch_size = 32;
    std::size_t clients = 4;
    double participation = 1.0;
    AggregationWeighting weighting = AggregationWeighting::samples;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    DatasetSpec dataset;
    std::vector<std::size_t> stage_channels{8, 16};
    std::optional<std::size_t> held_out;  // leave-one-client-out evaluation

    // Sweep expansion; empty means {algorithm} / {seed}.
    std::vector<Algorithm> sweep_algorithms;
    std::vector<std::uint64_t> sweep_seeds;

    void validate() const;
    bool uses_ffa() const;
    ModelSpec model_spec() const;
    RoundConfig round_config() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

// Expands sweep_algorithms x sweep_seeds into concrete configs.
std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& cfg);

}  // namespace fedfa::harness
