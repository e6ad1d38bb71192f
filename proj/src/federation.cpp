#include "fedfa/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <iostream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedfa/optim.hpp"

namespace fedfa {

SharingVariance sharing_variances(std::span<const MomentumStats> stats_by_client) {
    if (stats_by_client.empty()) throw std::invalid_argument("sharing_variances: no client statistics");
    const std::size_t C = stats_by_client.front().channels();
    for (const auto& s : stats_by_client) {
        if (s.channels() != C || s.sigma_bar.size() != C) {
            throw std::invalid_argument("sharing_variances: clients report different channel counts");
        }
    }
    const double M = static_cast<double>(stats_by_client.size());
    SharingVariance out{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
    for (std::size_t c = 0; c < C; ++c) {
        double mean_mu = 0.0, mean_sigma = 0.0;
        for (const auto& s : stats_by_client) {
            mean_mu += s.mu_bar[c];
            mean_sigma += s.sigma_bar[c];
        }
        mean_mu /= M;
        mean_sigma /= M;
        double v_mu = 0.0, v_sigma = 0.0;
        for (const auto& s : stats_by_client) {
            v_mu += (s.mu_bar[c] - mean_mu) * (s.mu_bar[c] - mean_mu);
            v_sigma += (s.sigma_bar[c] - mean_sigma) * (s.sigma_bar[c] - mean_sigma);
        }
        out.var_mu[c] = v_mu / M;
        out.var_sigma[c] = v_sigma / M;
    }
    return out;
}

ModelParams aggregate(std::span<const WeightedModel> models) {
    if (models.empty()) throw std::invalid_argument("aggregate: no models");
    double total = 0.0;
    for (const auto& m : models) {
        if (!m.params) throw std::invalid_argument("aggregate: null model");
        if (!(m.weight > 0.0)) throw std::invalid_argument("aggregate: weights must be positive");
        models.front().params->require_same_layout(*m.params, "aggregate");
        total += m.weight;
    }
    ModelParams out = *models.front().params;
    for (auto& e : out) e.tensor.clear_grad();
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto dst = out[i].tensor.data();
        const auto base = (*models.front().params)[i].tensor.data();
        for (std::size_t j = 0; j < dst.size(); ++j) {
            double acc = 0.0;
            for (std::size_t m = 1; m < models.size(); ++m) {
                acc += (models[m].weight / total) * ((*models[m].params)[i].tensor[j] - base[j]);
            }
            dst[j] = base[j] + acc;
        }
    }
    return out;
}

std::size_t comm_cost(std::span<const std::size_t> channels_per_ffa_layer, std::size_t bytes_per_value) {
    std::size_t total = 0;
    for (auto c : channels_per_ffa_layer) {
        if (c == 0) throw std::invalid_argument("comm_cost: channel counts must be positive");
        total += c;
    }
    return 4 * total * bytes_per_value;
}

namespace {

std::vector<double> read_f64(std::span<const std::uint8_t> bytes, std::size_t& pos, std::size_t n) {
    if (bytes.size() - pos < n * sizeof(double)) throw std::runtime_error("message: truncated statistics block");
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    return v;
}

}  // namespace

Bytes encode_uplink(const UplinkMessage& msg) {
    Bytes out = encode_params(msg.params);
    for (const auto& s : msg.stats) {
        append_f64(out, s.mu_bar);
        append_f64(out, s.sigma_bar);
    }
    return out;
}

UplinkMessage decode_uplink(std::span<const std::uint8_t> bytes, std::size_t num_params,
                            std::span<const std::size_t> channels, double alpha) {
    UplinkMessage msg;
    std::size_t pos = 0;
    msg.params = decode_params_prefix(bytes, num_params, pos);
    for (auto C : channels) {
        MomentumStats s;
        s.alpha = alpha;
        s.mu_bar = read_f64(bytes, pos, C);
        s.sigma_bar = read_f64(bytes, pos, C);
        msg.stats.push_back(std::move(s));
    }
    if (pos != bytes.size()) throw std::runtime_error("uplink: trailing bytes");
    return msg;
}

Bytes encode_downlink(const DownlinkMessage& msg) {
    Bytes out = encode_params(msg.params);
    for (const auto& g : msg.gamma) {
        append_f64(out, g.gamma_mu);
        append_f64(out, g.gamma_sigma);
    }
    return out;
}

DownlinkMessage decode_downlink(std::span<const std::uint8_t> bytes, std::size_t num_params,
                                std::span<const std::size_t> channels) {
    DownlinkMessage msg;
    std::size_t pos = 0;
    msg.params = decode_params_prefix(bytes, num_params, pos);
    for (auto C : channels) {
        ModulationCoefficients g;
        g.gamma_mu = read_f64(bytes, pos, C);
        g.gamma_sigma = read_f64(bytes, pos, C);
        msg.gamma.push_back(std::move(g));
    }
    if (pos != bytes.size()) throw std::runtime_error("downlink: trailing bytes");
    return msg;
}

ServerState ServerState::create(ModelSpec spec, ModelParams global) {
    ServerState s;
    for (auto C : spec.stage_channels()) s.gamma.push_back(ModulationCoefficients::zeros(C));
    s.spec = std::move(spec);
    s.global = std::move(global);
    return s;
}

void ServerState::refresh_gamma(bool zero_gamma) {
    const auto channels = spec.stage_channels();
    gamma.clear();
    for (std::size_t k = 0; k < channels.size(); ++k) {
        if (zero_gamma || stats_by_client.empty()) {
            gamma.push_back(ModulationCoefficients::zeros(channels[k]));
            continue;
        }
        std::vector<MomentumStats> layer;
        for (const auto& [id, per_layer] : stats_by_client) layer.push_back(per_layer.at(k));
        const SharingVariance sv = sharing_variances(layer);
        gamma.push_back(modulate(sv.var_mu, sv.var_sigma));
    }
}

LocalResult local_train(const ModelSpec& spec, const ModelParams& global, const LabeledSet& train,
                        const std::vector<ModulationCoefficients>& gamma, const LocalTrainingConfig& cfg,
                        std::uint64_t seed, std::size_t round, std::size_t client_id) {
    if (train.empty()) throw std::invalid_argument("client " + std::to_string(client_id) + " has no training data");
    if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be positive");
    LocalResult res;
    res.params = global;

    std::vector<FfaSite> sites;
    std::vector<Rng> ffa_rngs;
    std::vector<StageHook> hooks;
    if (cfg.ffa) {
        const auto channels = spec.stage_channels();
        for (std::size_t k = 0; k < channels.size(); ++k) {
            FfaSite site{MomentumStats::initial(channels[k], cfg.ffa->alpha), std::nullopt, 0};
            if (k < gamma.size()) site.gamma = gamma[k];
            sites.push_back(std::move(site));
            ffa_rngs.emplace_back(cfg.ffa->seed ^ seed, Stream::ffa, std::initializer_list<std::uint64_t>{round, client_id, k});
        }
        hooks = make_ffa_hooks(*cfg.ffa, sites, ffa_rngs, true);
    }

    SgdOptions opts;
    opts.lr = cfg.lr;
    opts.prox_mu = cfg.prox_mu;
    opts.anchor = cfg.prox_mu > 0.0 ? &global : nullptr;

    Rng mix_rng(seed, Stream::mixup, {round, client_id});
    double loss_sum = 0.0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(seed, Stream::shuffle, {round, client_id, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::span<const std::size_t> rows(order.data() + start, end - start);
            Tensor inputs = train.gather(rows);
            Tensor targets = ops::one_hot(train.gather_labels(rows), spec.num_classes);
            if (cfg.augmenter) cfg.augmenter(inputs, targets, mix_rng);

            ForwardPass pass = forward(spec, res.params, inputs, hooks);
            Var loss = ops::softmax_cross_entropy(*pass.tape, pass.logits, targets);
            const double loss_value = pass.tape->value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("non-finite training loss on client " + std::to_string(client_id));
            }
            backward(pass, loss, res.params);
            sgd_step(res.params, opts);
            loss_sum += loss_value;
            ++res.steps;
        }
    }
    for (auto& e : res.params) e.tensor.clear_grad();
    res.mean_loss = res.steps ? loss_sum / static_cast<double>(res.steps) : 0.0;
    for (const auto& s : sites) res.stats.push_back(s.momentum);
    return res;
}

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const LabeledSet& data, std::size_t batch_size) {
    EvalResult r;
    r.samples = data.size();
    if (data.empty()) return r;
    std::size_t correct = 0;
    double loss = 0.0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < data.size(); start += batch_size) {
        const std::size_t end = std::min(data.size(), start + batch_size);
        rows.resize(end - start);
        std::iota(rows.begin(), rows.end(), start);
        const Tensor logits = predict(spec, params, data.gather(rows));
        const std::size_t n = logits.dim(1);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double* z = logits.data().data() + i * n;
            const std::size_t arg = static_cast<std::size_t>(std::max_element(z, z + n) - z);
            const int label = data.labels[rows[i]];
            if (arg == static_cast<std::size_t>(label)) ++correct;
            const double zmax = z[arg];
            double denom = 0.0;
            for (std::size_t j = 0; j < n; ++j) denom += std::exp(z[j] - zmax);
            loss += -(z[label] - zmax - std::log(denom));
        }
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    r.loss = loss / static_cast<double>(data.size());
    return r;
}

std::vector<std::size_t> select_clients(std::size_t num_clients, double participation, std::uint64_t seed,
                                        std::size_t round) {
    if (!(participation > 0.0 && participation <= 1.0)) {
        throw std::invalid_argument("participation must lie in (0,1]");
    }
    std::vector<std::size_t> ids(num_clients);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (participation >= 1.0) return ids;
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(participation * num_clients)));
    Rng rng(seed, Stream::selection, {round});
    std::shuffle(ids.begin(), ids.end(), rng.engine());
    ids.resize(std::min(n, num_clients));
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace

std::vector<EvalResult> evaluate_clients(const ServerState& server, const std::vector<ClientState>& clients) {
    std::vector<EvalResult> out;
    for (const auto& c : clients) {
        EvalResult r;
        if (c.test) r = evaluate(server.spec, server.global, *c.test);
        r.client_id = c.id;
        out.push_back(r);
    }
    return out;
}

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients, const RoundConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    if (clients.empty()) throw std::invalid_argument("run_round: no clients");
    for (const auto& c : clients) server.global.require_same_layout(c.model, "client " + std::to_string(c.id) + " replica");
    if (cfg.local.ffa) cfg.local.ffa->validate();

    RoundReport report;
    report.round = ++server.round;
    const std::vector<std::size_t> selected = select_clients(clients.size(), cfg.participation, cfg.seed, report.round);
    report.selected.reserve(selected.size());
    for (auto i : selected) report.selected.push_back(clients[i].id);

    const bool ffa = cfg.local.ffa.has_value();
    const auto channels = server.spec.stage_channels();
    const std::size_t num_params = server.global.size();

    // Broadcast.
    DownlinkMessage down{server.global, ffa ? server.gamma : std::vector<ModulationCoefficients>{}};
    const Bytes down_bytes = encode_downlink(down);

    struct Outcome {
        std::optional<LocalResult> result;
        std::string error;
        std::size_t uplink_bytes = 0;
        std::optional<UplinkMessage> received;
    };
    std::vector<Outcome> outcomes(selected.size());
    parallel_for(selected.size(), cfg.workers, [&](std::size_t s) {
        ClientState& client = clients[selected[s]];
        Outcome& out = outcomes[s];
        try {
            if (cfg.inject_failures.count(client.id)) throw std::runtime_error("injected failure");
            if (!client.train) throw std::runtime_error("no training data attached");
            DownlinkMessage got = decode_downlink(down_bytes, num_params, ffa ? channels : std::vector<std::size_t>{});
            client.model = std::move(got.params);
            LocalResult res = local_train(server.spec, client.model, *client.train, got.gamma, cfg.local, cfg.seed,
                                          report.round, client.id);
            client.model = res.params;
            client.sites.clear();
            for (std::size_t k = 0; k < res.stats.size(); ++k) {
                client.sites.push_back(FfaSite{res.stats[k], got.gamma.at(k), 0});
            }
            const Bytes up = encode_uplink(UplinkMessage{res.params, res.stats});
            out.uplink_bytes = up.size();
            out.received = decode_uplink(up, num_params, ffa ? channels : std::vector<std::size_t>{},
                                         ffa ? cfg.local.ffa->alpha : 0.0);
            out.result = std::move(res);
        } catch (const std::exception& e) {
            out.error = e.what();
        }
    });

    // Barrier: aggregate in client-id order.
    std::vector<WeightedModel> models;
    for (std::size_t s = 0; s < selected.size(); ++s) {
        const ClientState& client = clients[selected[s]];
        Outcome& out = outcomes[s];
        if (!out.result) {
            report.failures.emplace_back(client.id, out.error);
            std::cerr << "round " << report.round << ": client " << client.id << " excluded: " << out.error << '\n';
            continue;
        }
        ClientRoundResult cr;
        cr.client_id = client.id;
        cr.train_loss = out.result->mean_loss;
        cr.samples = client.train->size();
        cr.uplink_bytes = out.uplink_bytes;
        cr.downlink_bytes = down_bytes.size();
        report.uplink_bytes += cr.uplink_bytes;
        report.downlink_bytes += cr.downlink_bytes;
        report.clients.push_back(cr);
        const double w = cfg.server.weighting == AggregationWeighting::samples ? static_cast<double>(cr.samples) : 1.0;
        models.push_back(WeightedModel{&out.received->params, w});
        if (ffa) server.stats_by_client[client.id] = out.received->stats;
    }

    if (!models.empty()) {
        ModelParams averaged = aggregate(models);
        if (cfg.server.server_momentum > 0.0) {
            if (server.momentum_buffer.empty()) {
                for (const auto& e : server.global) server.momentum_buffer.emplace_back(e.tensor.size(), 0.0);
            }
            const double beta = cfg.server.server_momentum;
            for (std::size_t i = 0; i < averaged.size(); ++i) {
                auto g = server.global[i].tensor.data();
                const auto a = averaged[i].tensor.data();
                auto& v = server.momentum_buffer[i];
                for (std::size_t j = 0; j < g.size(); ++j) {
                    v[j] = beta * v[j] + (g[j] - a[j]);
                    g[j] -= v[j];
                }
            }
        } else {
            server.global = std::move(averaged);
        }
    }
    if (ffa) server.refresh_gamma(cfg.server.zero_gamma);

    if (cfg.evaluate) {
        report.eval = evaluate_clients(server, clients);
        double acc = 0.0;
        for (const auto& e : report.eval) acc += e.accuracy;
        report.average_accuracy = report.eval.empty() ? 0.0 : acc / static_cast<double>(report.eval.size());
    }
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace fedfa
