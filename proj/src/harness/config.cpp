#include "fedfa/harness/config.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace fedfa::harness {

std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::fedavg: return "fedavg";
        case Algorithm::fedprox: return "fedprox";
        case Algorithm::fedavgm: return "fedavgm";
        case Algorithm::mixup: return "mixup";
        case Algorithm::fedfa: return "fedfa";
        case Algorithm::fedfa_c: return "fedfa-c";
        case Algorithm::fedfa_r: return "fedfa-r";
    }
    return "?";
}

Algorithm parse_algorithm(const std::string& s) {
    for (auto a : {Algorithm::fedavg, Algorithm::fedprox, Algorithm::fedavgm, Algorithm::mixup, Algorithm::fedfa,
                   Algorithm::fedfa_c, Algorithm::fedfa_r}) {
        if (to_string(a) == s) return a;
    }
    throw std::invalid_argument("unknown algorithm '" + s + "'");
}

void ExperimentConfig::validate() const {
    if (clients < 1) throw std::invalid_argument("clients must be >= 1");
    if (!(participation > 0.0 && participation <= 1.0)) throw std::invalid_argument("participation must lie in (0,1]");
    if (!(lr >= 0.0)) throw std::invalid_argument("lr must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(prox_mu >= 0.0)) throw std::invalid_argument("prox_mu must be >= 0");
    if (!(server_momentum >= 0.0 && server_momentum < 1.0)) throw std::invalid_argument("server_momentum must lie in [0,1)");
    if (!(mixup_alpha > 0.0)) throw std::invalid_argument("mixup_alpha must be > 0");
    if (stage_channels.empty()) throw std::invalid_argument("model needs at least one stage");
    ffa.validate();
    dataset.task.validate();
    if (dataset.kind == "feature_shift") {
        if (clients < 2) throw std::invalid_argument("feature_shift needs at least 2 clients");
        if (dataset.sizes.train == 0) throw std::invalid_argument("dataset.sizes.train must be positive");
    } else if (dataset.kind == "dirichlet") {
        if (!(dataset.concentration > 0.0)) throw std::invalid_argument("dataset.concentration must be > 0");
    } else if (dataset.kind == "size_skew") {
        if (!(dataset.size_ratio >= 1.0)) throw std::invalid_argument("dataset.size_ratio must be >= 1");
    } else {
        throw std::invalid_argument("unknown dataset kind '" + dataset.kind + "'");
    }
    if (!(dataset.shift_strength >= 0.0)) throw std::invalid_argument("dataset.shift_strength must be >= 0");
    if (held_out && *held_out >= clients) {
        throw std::invalid_argument("held_out client " + std::to_string(*held_out) + " out of range for " +
                                    std::to_string(clients) + " clients");
    }
    if (held_out && clients < 2) throw std::invalid_argument("leave-one-out needs at least 2 clients");
    (void)model_spec().head_features();
}

bool ExperimentConfig::uses_ffa() const {
    return algorithm == Algorithm::fedfa || algorithm == Algorithm::fedfa_c || algorithm == Algorithm::fedfa_r;
}

ModelSpec ExperimentConfig::model_spec() const {
    ModelSpec s = ModelSpec::reference(dataset.task.channels, dataset.task.height, dataset.task.width,
                                       dataset.task.num_classes);
    s.stages.clear();
    for (auto c : stage_channels) s.stages.push_back(StageSpec{c, 3, 1, 1, true, true});
    return s;
}

RoundConfig ExperimentConfig::round_config() const {
    RoundConfig rc;
    rc.local.lr = lr;
    rc.local.epochs = local_epochs;
    rc.local.batch_size = batch_size;
    rc.participation = participation;
    rc.seed = seed;
    rc.workers = workers;
    rc.server.weighting = weighting;
    switch (algorithm) {
        case Algorithm::fedavg: break;
        case Algorithm::fedprox: rc.local.prox_mu = prox_mu; break;
        case Algorithm::fedavgm: rc.server.server_momentum = server_momentum; break;
        case Algorithm::mixup: break;  // augmenter attached by the runner
        case Algorithm::fedfa:
        case Algorithm::fedfa_c:
        case Algorithm::fedfa_r: {
            FfaConfig f = ffa;
            f.variant = algorithm == Algorithm::fedfa     ? FfaVariant::full
                        : algorithm == Algorithm::fedfa_c ? FfaVariant::client_only
                                                          : FfaVariant::random;
            rc.local.ffa = f;
            rc.server.zero_gamma = force_zero_gamma;
            break;
        }
    }
    return rc;
}

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

const std::vector<std::string> kTopKeys = {
    "name", "algorithm", "prox_mu", "server_momentum", "mixup_alpha", "ffa", "force_zero_gamma", "rounds",
    "local_epochs", "lr", "batch_size", "clients", "participation", "weighting", "seed", "workers", "dataset",
    "model", "held_out", "algorithms", "seeds"};

void reject_unknown(const nlohmann::json& j, const std::vector<std::string>& known, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw std::invalid_argument("config: unknown key '" + where + k + "'");
        }
    }
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: expected an object");
    reject_unknown(j, kTopKeys, "");
    ExperimentConfig c;
    read(j, "name", c.name);
    if (j.contains("algorithm")) c.algorithm = parse_algorithm(j.at("algorithm").get<std::string>());
    read(j, "prox_mu", c.prox_mu);
    read(j, "server_momentum", c.server_momentum);
    read(j, "mixup_alpha", c.mixup_alpha);
    read(j, "force_zero_gamma", c.force_zero_gamma);
    read(j, "rounds", c.rounds);
    read(j, "local_epochs", c.local_epochs);
    read(j, "lr", c.lr);
    read(j, "batch_size", c.batch_size);
    read(j, "clients", c.clients);
    read(j, "participation", c.participation);
    read(j, "seed", c.seed);
    read(j, "workers", c.workers);
    if (j.contains("weighting")) {
        const auto w = j.at("weighting").get<std::string>();
        if (w == "samples") c.weighting = AggregationWeighting::samples;
        else if (w == "uniform") c.weighting = AggregationWeighting::uniform;
        else throw std::invalid_argument("config: weighting must be 'samples' or 'uniform'");
    }
    if (j.contains("ffa")) {
        const auto& f = j.at("ffa");
        reject_unknown(f, {"p", "alpha", "lambda", "eps_var", "share_eps_across_channels", "seed"}, "ffa.");
        read(f, "p", c.ffa.p);
        read(f, "alpha", c.ffa.alpha);
        read(f, "lambda", c.ffa.lambda);
        read(f, "eps_var", c.ffa.eps_var);
        read(f, "share_eps_across_channels", c.ffa.share_eps_across_channels);
        read(f, "seed", c.ffa.seed);
    }
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        reject_unknown(d, {"kind", "shift_strength", "concentration", "size_ratio", "total", "sizes", "fractions", "task",
                           "seed_from_experiment"}, "dataset.");
        read(d, "kind", c.dataset.kind);
        read(d, "shift_strength", c.dataset.shift_strength);
        read(d, "concentration", c.dataset.concentration);
        read(d, "size_ratio", c.dataset.size_ratio);
        read(d, "total", c.dataset.total);
        read(d, "seed_from_experiment", c.dataset.seed_from_experiment);
        if (d.contains("sizes")) {
            read(d.at("sizes"), "train", c.dataset.sizes.train);
            read(d.at("sizes"), "val", c.dataset.sizes.val);
            read(d.at("sizes"), "test", c.dataset.sizes.test);
        }
        if (d.contains("fractions")) {
            read(d.at("fractions"), "val", c.dataset.fractions.val);
            read(d.at("fractions"), "test", c.dataset.fractions.test);
        }
        if (d.contains("task")) {
            const auto& t = d.at("task");
            reject_unknown(t, {"num_classes", "channels", "height", "width", "noise", "jitter", "class_colors", "seed"}, "dataset.task.");
            read(t, "num_classes", c.dataset.task.num_classes);
            read(t, "channels", c.dataset.task.channels);
            read(t, "height", c.dataset.task.height);
            read(t, "width", c.dataset.task.width);
            read(t, "noise", c.dataset.task.noise);
            read(t, "jitter", c.dataset.task.jitter);
            read(t, "class_colors", c.dataset.task.class_colors);
            read(t, "seed", c.dataset.task.seed);
        }
    }
    if (j.contains("model")) {
        reject_unknown(j.at("model"), {"stage_channels"}, "model.");
        read(j.at("model"), "stage_channels", c.stage_channels);
    }
    if (j.contains("held_out") && !j.at("held_out").is_null()) c.held_out = j.at("held_out").get<std::size_t>();
    if (j.contains("algorithms")) {
        for (const auto& a : j.at("algorithms")) c.sweep_algorithms.push_back(parse_algorithm(a.get<std::string>()));
    }
    read(j, "seeds", c.sweep_seeds);
    c.validate();
    return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
    const auto& d = c.dataset;
    nlohmann::json j = {
        {"name", c.name},
        {"algorithm", to_string(c.algorithm)},
        {"prox_mu", c.prox_mu},
        {"server_momentum", c.server_momentum},
        {"mixup_alpha", c.mixup_alpha},
        {"ffa",
         {{"p", c.ffa.p}, {"alpha", c.ffa.alpha}, {"lambda", c.ffa.lambda}, {"eps_var", c.ffa.eps_var},
          {"share_eps_across_channels", c.ffa.share_eps_across_channels}, {"seed", c.ffa.seed}}},
        {"force_zero_gamma", c.force_zero_gamma},
        {"rounds", c.rounds},
        {"local_epochs", c.local_epochs},
        {"lr", c.lr},
        {"batch_size", c.batch_size},
        {"clients", c.clients},
        {"participation", c.participation},
        {"weighting", c.weighting == AggregationWeighting::samples ? "samples" : "uniform"},
        {"seed", c.seed},
        {"workers", c.workers},
        {"dataset",
         {{"kind", d.kind},
          {"shift_strength", d.shift_strength},
          {"concentration", d.concentration},
          {"size_ratio", d.size_ratio},
          {"total", d.total},
          {"sizes", {{"train", d.sizes.train}, {"val", d.sizes.val}, {"test", d.sizes.test}}},
          {"fractions", {{"val", d.fractions.val}, {"test", d.fractions.test}}},
          {"seed_from_experiment", d.seed_from_experiment},
          {"task",
           {{"num_classes", d.task.num_classes}, {"channels", d.task.channels}, {"height", d.task.height},
            {"width", d.task.width}, {"noise", d.task.noise}, {"jitter", d.task.jitter},
            {"class_colors", d.task.class_colors}, {"seed", d.task.seed}}}}},
        {"model", {{"stage_channels", c.stage_channels}}},
        {"held_out", nullptr},
    };
    if (c.held_out) j["held_out"] = *c.held_out;
    return j;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    if (!j.contains("name")) c.name = path.stem().string();
    return c;
}

std::vector<ExperimentConfig> expand_sweep(const ExperimentConfig& cfg) {
    std::vector<Algorithm> algs = cfg.sweep_algorithms.empty() ? std::vector<Algorithm>{cfg.algorithm} : cfg.sweep_algorithms;
    std::vector<std::uint64_t> seeds = cfg.sweep_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : cfg.sweep_seeds;
    std::vector<ExperimentConfig> out;
    for (auto a : algs) {
        for (auto s : seeds) {
            ExperimentConfig c = cfg;
            c.algorithm = a;
            c.seed = s;
            c.sweep_algorithms.clear();
            c.sweep_seeds.clear();
            out.push_back(std::move(c));
        }
    }
    return out;
}

}  // namespace fedfa::harness
