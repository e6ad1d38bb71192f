#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedfa/data_synth.hpp"
#include "fedfa/harness/config.hpp"
#include "fedfa/model.hpp"

namespace fedfa::harness {

struct RoundMetrics {
    std::size_t round = 0;
    std::vector<std::size_t> clients;      // evaluated (training) client ids
    std::vector<double> accuracy;          // global model, per client test split
    std::vector<double> test_loss;
    double average_accuracy = 0.0;         // unweighted over clients
    std::optional<double> held_out_accuracy;
    std::vector<std::size_t> selected;
    std::vector<double> train_loss;        // per reporting client, in selection order
    std::vector<std::size_t> failed;
    std::size_t uplink_bytes = 0;
    std::size_t downlink_bytes = 0;
    double wall_seconds = 0.0;             // kept out of the metric files
};

bool operator==(const RoundMetrics& a, const RoundMetrics& b);
// Equality of the learning trajectory, ignoring byte counters.
bool same_learning(const RoundMetrics& a, const RoundMetrics& b);

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<RoundMetrics> rounds;  // rounds[0] is the initial model
    ModelParams final_model;
    std::filesystem::path run_dir;     // empty when nothing was written

    const RoundMetrics& last() const { return rounds.back(); }
};

// Per-round metrics (ignoring byte counters) and final model bit-identical.
bool same_trajectory(const ExperimentResult& a, const ExperimentResult& b);

FederatedDataset build_dataset(const ExperimentConfig& cfg);

// <root>/<name>/<algorithm>-seed<seed>[-holdout<m>]
std::filesystem::path run_dir_for(const std::filesystem::path& root, const ExperimentConfig& cfg);

// Runs the configured federation. When run_dir is given it receives
// config.json, metrics.jsonl, metrics.csv, timing.jsonl and final_model.bin.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& run_dir = std::nullopt);

struct LeaveOneOutResult {
    std::size_t held_out = 0;
    std::vector<std::size_t> training_clients;
    double held_out_accuracy = 0.0;
    double in_federation_accuracy = 0.0;
    double participation_gap = 0.0;  // in-federation minus held-out
    ExperimentResult experiment;
};

// Trains on every client except held_out and evaluates on all of the
// held-out client's samples.
LeaveOneOutResult leave_one_out(const ExperimentConfig& cfg, std::size_t held_out,
                                const std::optional<std::filesystem::path>& run_dir = std::nullopt);

nlohmann::json metrics_to_json(const RoundMetrics& m, const ExperimentConfig& cfg);
RoundMetrics metrics_from_json(const nlohmann::json& j);

std::string metrics_csv(const std::vector<RoundMetrics>& rounds);
std::vector<RoundMetrics> parse_metrics_csv(const std::string& text);

std::vector<RoundMetrics> read_metrics_jsonl(const std::filesystem::path& path);

}  // namespace fedfa::harness
