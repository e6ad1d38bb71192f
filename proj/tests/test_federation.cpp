#include <doctest.h>

#include <cmath>
#include <random>

#include "fedfa/checkpoint.hpp"
#include "fedfa/data_synth.hpp"
#include "fedfa/federation.hpp"
#include "oracles.hpp"

using namespace fedfa;

namespace {

ModelParams single(std::vector<double> v) {
    ModelParams p;
    const Shape shape{v.size()};
    p.add("w", Tensor(shape, std::move(v)));
    return p;
}

MomentumStats stats(std::vector<double> mu, std::vector<double> sigma) { return MomentumStats{mu, sigma, 0.99}; }

struct Fixture {
    TaskConfig task;
    FederatedDataset ds;
    ModelSpec spec;
    ServerState server;
    std::vector<ClientState> clients;

    explicit Fixture(std::size_t M = 4, std::size_t train = 24) {
        task.height = task.width = 8;
        ds = make_feature_shift(BlobTextureTask(task), M, 1.0, 3, SplitSizes{train, 0, 16});
        spec = ModelSpec::reference(3, 8, 8, task.num_classes);
        spec.stages = {StageSpec{4, 3, 1, 1, true, true}, StageSpec{6, 3, 1, 1, true, true}};
        server = ServerState::create(spec, init_params(spec, 1));
        for (std::size_t m = 0; m < M; ++m) {
            clients.push_back(ClientState{m, &ds.clients[m].train, &ds.clients[m].test, server.global, {}});
        }
    }
};

RoundConfig ffa_round() {
    RoundConfig rc;
    rc.local.lr = 0.05;
    rc.local.batch_size = 8;
    rc.local.ffa = FfaConfig{};
    rc.local.ffa->p = 1.0;
    return rc;
}

}  // namespace

TEST_CASE("sharing variances") {
    const MomentumStats a = stats({0.0, 1.0}, {1.0, 2.0});
    SUBCASE("single client") {
        const SharingVariance v = sharing_variances(std::vector<MomentumStats>{a});
        CHECK(v.var_mu == std::vector<double>{0, 0});
        CHECK(v.var_sigma == std::vector<double>{0, 0});
    }
    SUBCASE("identical clients") {
        const SharingVariance v = sharing_variances(std::vector<MomentumStats>{a, a, a});
        CHECK(v.var_mu == std::vector<double>{0, 0});
    }
    SUBCASE("{0, 2} gives 1") {
        const SharingVariance v = sharing_variances(std::vector<MomentumStats>{stats({0.0}, {1.0}), stats({2.0}, {1.0})});
        CHECK(v.var_mu[0] == 1.0);
        CHECK(v.var_sigma[0] == 0.0);
    }
    SUBCASE("brute-force oracle") {
        std::mt19937_64 g(4);
        std::vector<MomentumStats> all;
        for (int m = 0; m < 7; ++m) all.push_back(stats(oracle::random_vec(5, g), oracle::random_vec(5, g)));
        const SharingVariance v = sharing_variances(all);
        for (std::size_t c = 0; c < 5; ++c) {
            oracle::Vec mu, sg;
            for (const auto& s : all) {
                mu.push_back(s.mu_bar[c]);
                sg.push_back(s.sigma_bar[c]);
            }
            CHECK(std::abs(v.var_mu[c] - oracle::variance(mu)) < 1e-12);
            CHECK(std::abs(v.var_sigma[c] - oracle::variance(sg)) < 1e-12);
        }
    }
    CHECK_THROWS(sharing_variances(std::vector<MomentumStats>{}));
    CHECK_THROWS(sharing_variances(std::vector<MomentumStats>{a, stats({1.0}, {1.0})}));
}

TEST_CASE("aggregation") {
    const ModelParams a = single({0.0}), b = single({2.0}), c = single({4.0});
    CHECK(aggregate(std::vector<WeightedModel>{{&a, 5.0}}).same_values(a));
    CHECK(aggregate(std::vector<WeightedModel>{{&a, 1.0}, {&b, 1.0}})[0].tensor[0] == 1.0);
    CHECK(aggregate(std::vector<WeightedModel>{{&a, 1.0}, {&c, 3.0}})[0].tensor[0] == 3.0);

    std::mt19937_64 g(1);
    ModelParams r = single(oracle::random_vec(50, g));
    std::vector<WeightedModel> copies;
    for (double w : {0.3, 1.0, 7.0, 2.5}) copies.push_back({&r, w});
    CHECK(aggregate(copies).same_values(r));

    const ModelParams wide = single({1.0, 2.0});
    CHECK_THROWS(aggregate(std::vector<WeightedModel>{{&a, 1.0}, {&wide, 1.0}}));
    CHECK_THROWS(aggregate(std::vector<WeightedModel>{{&a, 0.0}}));
    CHECK_THROWS(aggregate(std::vector<WeightedModel>{}));
}

TEST_CASE("communication cost") {
    CHECK(comm_cost(std::vector<std::size_t>{64, 192, 384, 256, 256}, 4) == 18432);
    CHECK(comm_cost(std::vector<std::size_t>{32, 64, 128, 256, 512}, 4) == 15872);
    CHECK(comm_cost(std::vector<std::size_t>{}, 4) == 0);
}

TEST_CASE("wire messages round trip") {
    const ModelParams p = single({1.0, -2.0, 3.5});
    const std::vector<std::size_t> channels{2, 3};
    UplinkMessage up{p, {stats({0.1, 0.2}, {1.1, 1.2}), stats({1, 2, 3}, {4, 5, 6})}};
    const Bytes ub = encode_uplink(up);
    CHECK(ub.size() == encoded_size(p) + 2 * (2 + 3) * 8);
    const UplinkMessage ud = decode_uplink(ub, 1, channels, 0.99);
    CHECK(ud.params.same_values(p));
    CHECK(ud.stats[1].sigma_bar == std::vector<double>{4, 5, 6});
    CHECK(ud.stats[0].mu_bar == std::vector<double>{0.1, 0.2});

    DownlinkMessage down{p, {ModulationCoefficients{{0.5, 1.5}, {1, 1}}, ModulationCoefficients::zeros(3)}};
    const Bytes db = encode_downlink(down);
    CHECK(db.size() == ub.size());
    const DownlinkMessage dd = decode_downlink(db, 1, channels);
    CHECK(dd.gamma[0].gamma_mu == std::vector<double>{0.5, 1.5});
    CHECK(dd.gamma[1].gamma_sigma == std::vector<double>{0, 0, 0});

    Bytes cut(ub.begin(), ub.end() - 8);
    CHECK_THROWS(decode_uplink(cut, 1, channels, 0.99));
}

TEST_CASE("client selection") {
    CHECK(select_clients(5, 1.0, 0, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    const auto s = select_clients(10, 0.3, 9, 4);
    CHECK(s.size() == 3);
    CHECK(std::is_sorted(s.begin(), s.end()));
    CHECK(s == select_clients(10, 0.3, 9, 4));
    CHECK(select_clients(10, 0.01, 0, 1).size() == 1);
    CHECK_THROWS(select_clients(4, 0.0, 0, 1));
}

TEST_CASE("full participation round bookkeeping") {
    Fixture f;
    RoundConfig rc = ffa_round();
    const RoundReport r = run_round(f.server, f.clients, rc);
    CHECK(r.round == 1);
    CHECK(r.clients.size() == 4);
    CHECK(r.eval.size() == 4);
    CHECK(r.failures.empty());
    const std::size_t payload = encoded_size(f.server.global);
    const std::size_t stat_bytes = 2 * (4 + 6) * 8;
    for (const auto& c : r.clients) {
        CHECK(c.uplink_bytes == payload + stat_bytes);
        CHECK(c.downlink_bytes == payload + stat_bytes);
        CHECK(std::isfinite(c.train_loss));
    }
    CHECK(r.uplink_bytes == 4 * (payload + stat_bytes));
    CHECK(f.server.stats_by_client.size() == 4);
    for (const auto& g : f.server.gamma) {
        double s = 0;
        for (double v : g.gamma_mu) s += v;
        CHECK(s == doctest::Approx(static_cast<double>(g.channels())).epsilon(1e-9));
    }
}

TEST_CASE("zero learning rate leaves the global model bit-identical") {
    Fixture f;
    const ModelParams before = f.server.global;
    RoundConfig rc = ffa_round();
    rc.local.lr = 0.0;
    run_round(f.server, f.clients, rc);
    CHECK(f.server.global.same_values(before));
}

TEST_CASE("training loss decreases over five rounds") {
    Fixture f(4, 32);
    RoundConfig rc;
    rc.local.lr = 0.05;
    rc.local.batch_size = 8;
    rc.seed = 2;
    std::vector<double> losses;
    for (int t = 0; t < 5; ++t) {
        const RoundReport r = run_round(f.server, f.clients, rc);
        double s = 0;
        for (const auto& c : r.clients) s += c.train_loss;
        losses.push_back(s / r.clients.size());
    }
    CHECK(losses.back() < losses.front());
}

TEST_CASE("partial participation keeps stale statistics") {
    Fixture f(5);
    RoundConfig rc = ffa_round();
    rc.participation = 0.4;
    run_round(f.server, f.clients, rc);
    const auto first = f.server.stats_by_client;
    CHECK(first.size() == 2);
    const RoundReport r2 = run_round(f.server, f.clients, rc);
    for (const auto& [id, s] : first) {
        if (std::find(r2.selected.begin(), r2.selected.end(), id) == r2.selected.end()) {
            CHECK(f.server.stats_by_client.at(id)[0].mu_bar == s[0].mu_bar);
        }
    }
    CHECK(f.server.stats_by_client.size() >= 2);
}

TEST_CASE("failed clients are excluded and reported") {
    Fixture f;
    RoundConfig rc = ffa_round();
    rc.inject_failures = {2};
    const RoundReport r = run_round(f.server, f.clients, rc);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].first == 2);
    CHECK(r.clients.size() == 3);
    CHECK(f.server.stats_by_client.count(2) == 0);
}

TEST_CASE("rounds are deterministic and parallel-safe") {
    Fixture a, b;
    RoundConfig rc = ffa_round();
    rc.seed = 5;
    RoundConfig par = rc;
    par.workers = 3;
    for (int t = 0; t < 2; ++t) {
        run_round(a.server, a.clients, rc);
        run_round(b.server, b.clients, par);
    }
    CHECK(a.server.global.same_values(b.server.global));
    CHECK(a.server.gamma[1].gamma_sigma == b.server.gamma[1].gamma_sigma);
}

TEST_CASE("server momentum") {
    Fixture a, b;
    RoundConfig avg;
    avg.local.lr = 0.05;
    avg.local.batch_size = 8;
    RoundConfig mom = avg;
    mom.server.server_momentum = 0.9;
    run_round(a.server, a.clients, avg);
    run_round(b.server, b.clients, mom);
    // v starts at zero, so the first step lands on the plain average.
    for (std::size_t i = 0; i < a.server.global.size(); ++i) {
        for (std::size_t j = 0; j < a.server.global[i].tensor.size(); ++j) {
            CHECK(b.server.global[i].tensor[j] == doctest::Approx(a.server.global[i].tensor[j]).epsilon(1e-12));
        }
    }
    run_round(a.server, a.clients, avg);
    run_round(b.server, b.clients, mom);
    CHECK_FALSE(b.server.global.same_values(a.server.global));
}

TEST_CASE("forced zero gamma equals the client-only variant") {
    Fixture a, b;
    RoundConfig full = ffa_round();
    full.server.zero_gamma = true;
    RoundConfig client = ffa_round();
    client.local.ffa->variant = FfaVariant::client_only;
    for (int t = 0; t < 3; ++t) {
        run_round(a.server, a.clients, full);
        run_round(b.server, b.clients, client);
    }
    CHECK(a.server.global.same_values(b.server.global));
}

TEST_CASE("local training rejects bad input") {
    Fixture f;
    LocalTrainingConfig cfg;
    LabeledSet empty;
    CHECK_THROWS(local_train(f.spec, f.server.global, empty, {}, cfg, 0, 1, 0));
    cfg.batch_size = 0;
    CHECK_THROWS(local_train(f.spec, f.server.global, f.ds.clients[0].train, {}, cfg, 0, 1, 0));
    std::vector<ClientState> none;
    CHECK_THROWS(run_round(f.server, none, RoundConfig{}));
}
