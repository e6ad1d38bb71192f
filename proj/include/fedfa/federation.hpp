#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedfa/checkpoint.hpp"
#include "fedfa/dataset.hpp"
#include "fedfa/feature_stats.hpp"
#include "fedfa/ffa.hpp"
#include "fedfa/model.hpp"

namespace fedfa {

// ---------------------------------------------------------------------------
// Server-side statistics and aggregation

struct SharingVariance {
    std::vector<double> var_mu;
    std::vector<double> var_sigma;
};

// Biased (1/M) variance of the clients' momentum statistics, per channel.
SharingVariance sharing_variances(std::span<const MomentumStats> stats_by_client);

struct WeightedModel {
    const ModelParams* params = nullptr;
    double weight = 1.0;
};

// Weighted mean with weights normalised internally. Computed as
// first + sum_i (w_i / W) * (x_i - first), so identical inputs come back
// bit-identical.
ModelParams aggregate(std::span<const WeightedModel> models);

// Extra per-round bytes of the statistics exchange for one client:
// mu_bar and sigma_bar up, gamma_mu and gamma_sigma down, i.e. 4 * sum_k C_k values.
std::size_t comm_cost(std::span<const std::size_t> channels_per_ffa_layer, std::size_t bytes_per_value);

// ---------------------------------------------------------------------------
// Wire messages: checkpoint-encoded parameters followed by raw f64 vectors in
// layer order (uplink: mu_bar, sigma_bar; downlink: gamma_mu, gamma_sigma).

struct UplinkMessage {
    ModelParams params;
    std::vector<MomentumStats> stats;  // empty when FFA is off
};

struct DownlinkMessage {
    ModelParams params;
    std::vector<ModulationCoefficients> gamma;  // empty when FFA is off
};

Bytes encode_uplink(const UplinkMessage& msg);
UplinkMessage decode_uplink(std::span<const std::uint8_t> bytes, std::size_t num_params,
                            std::span<const std::size_t> channels, double alpha);
Bytes encode_downlink(const DownlinkMessage& msg);
DownlinkMessage decode_downlink(std::span<const std::uint8_t> bytes, std::size_t num_params,
                                std::span<const std::size_t> channels);

// ---------------------------------------------------------------------------
// Round protocol

enum class AggregationWeighting { samples, uniform };

// Optional per-batch transform of (inputs, soft targets), e.g. mixup.
using BatchAugmenter = std::function<void(Tensor& inputs, Tensor& targets, Rng& rng)>;

struct LocalTrainingConfig {
    double lr = 0.01;
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    double prox_mu = 0.0;
    std::optional<FfaConfig> ffa;  // FFA hooks after every stage when set
    BatchAugmenter augmenter;
};

struct ServerConfig {
    double server_momentum = 0.0;  // FedAvgM beta; 0 = plain averaging
    AggregationWeighting weighting = AggregationWeighting::samples;
    bool zero_gamma = false;       // broadcast gamma = 0 every round
};

struct RoundConfig {
    LocalTrainingConfig local;
    ServerConfig server;
    double participation = 1.0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    std::set<std::size_t> inject_failures;  // client ids that fail this round
    bool evaluate = true;
};

struct ClientState {
    std::size_t id = 0;
    const LabeledSet* train = nullptr;
    const LabeledSet* test = nullptr;
    ModelParams model;
    std::vector<FfaSite> sites;
};

struct ServerState {
    ModelSpec spec;
    ModelParams global;
    std::map<std::size_t, std::vector<MomentumStats>> stats_by_client;  // latest report per client
    std::vector<ModulationCoefficients> gamma;                          // per FFA layer
    std::vector<std::vector<double>> momentum_buffer;                   // FedAvgM
    std::size_t round = 0;

    static ServerState create(ModelSpec spec, ModelParams global);
    // Recomputes gamma from all stored statistics.
    void refresh_gamma(bool zero_gamma);
};

struct EvalResult {
    std::size_t client_id = 0;
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t samples = 0;
};

struct ClientRoundResult {
    std::size_t client_id = 0;
    double train_loss = 0.0;
    std::size_t samples = 0;
    std::size_t uplink_bytes = 0;
    std::size_t downlink_bytes = 0;
};

struct RoundReport {
    std::size_t round = 0;
    std::vector<std::size_t> selected;
    std::vector<ClientRoundResult> clients;
    std::vector<std::pair<std::size_t, std::string>> failures;
    std::vector<EvalResult> eval;  // global model on every client's test split
    double average_accuracy = 0.0;
    std::size_t uplink_bytes = 0;
    std::size_t downlink_bytes = 0;
    double wall_seconds = 0.0;
};

struct LocalResult {
    ModelParams params;
    std::vector<MomentumStats> stats;
    double mean_loss = 0.0;
    std::size_t steps = 0;
};

// E local epochs of minibatch SGD starting from `global`. Momentum statistics
// are re-initialised at the start of the call.
LocalResult local_train(const ModelSpec& spec, const ModelParams& global, const LabeledSet& train,
                        const std::vector<ModulationCoefficients>& gamma, const LocalTrainingConfig& cfg,
                        std::uint64_t seed, std::size_t round, std::size_t client_id);

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const LabeledSet& data,
                    std::size_t batch_size = 256);

// Seeded choice of max(1, round(participation * M)) clients, sorted by id.
std::vector<std::size_t> select_clients(std::size_t num_clients, double participation, std::uint64_t seed,
                                        std::size_t round);

// One broadcast / local-training / uplink / aggregation cycle.
RoundReport run_round(ServerState& server, std::vector<ClientState>& clients, const RoundConfig& cfg);

// Evaluates the current global model on every client's test split.
std::vector<EvalResult> evaluate_clients(const ServerState& server, const std::vector<ClientState>& clients);

}  // namespace fedfa
