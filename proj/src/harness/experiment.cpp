#include "fedfa/harness/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedfa/checkpoint.hpp"
#include "fedfa/federation.hpp"
#include "fedfa/harness/mixup.hpp"

namespace fedfa::harness {

namespace fs = std::filesystem;

bool operator==(const RoundMetrics& a, const RoundMetrics& b) {
    return same_learning(a, b) && a.uplink_bytes == b.uplink_bytes && a.downlink_bytes == b.downlink_bytes;
}

bool same_learning(const RoundMetrics& a, const RoundMetrics& b) {
    return a.round == b.round && a.clients == b.clients && a.accuracy == b.accuracy && a.test_loss == b.test_loss &&
           a.average_accuracy == b.average_accuracy && a.held_out_accuracy == b.held_out_accuracy &&
           a.selected == b.selected && a.train_loss == b.train_loss && a.failed == b.failed;
}

bool same_trajectory(const ExperimentResult& a, const ExperimentResult& b) {
    if (a.rounds.size() != b.rounds.size()) return false;
    for (std::size_t i = 0; i < a.rounds.size(); ++i) {
        if (!same_learning(a.rounds[i], b.rounds[i])) return false;
    }
    return a.final_model.same_values(b.final_model);
}

namespace {

std::uint64_t data_seed(const ExperimentConfig& cfg) {
    return cfg.dataset.seed_from_experiment ? cfg.dataset.task.seed + cfg.seed : cfg.dataset.task.seed;
}

RoundMetrics metrics_from_eval(std::size_t round, const std::vector<EvalResult>& eval) {
    RoundMetrics m;
    m.round = round;
    double sum = 0.0;
    for (const auto& e : eval) {
        m.clients.push_back(e.client_id);
        m.accuracy.push_back(e.accuracy);
        m.test_loss.push_back(e.loss);
        sum += e.accuracy;
    }
    m.average_accuracy = eval.empty() ? 0.0 : sum / static_cast<double>(eval.size());
    return m;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F f) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ';';
        s += f(xs[i]);
    }
    return s;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (s.empty()) return out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::vector<double> parse_doubles(const std::string& s) {
    std::vector<double> v;
    for (const auto& t : split(s, ';')) v.push_back(std::stod(t));
    return v;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
    std::vector<std::size_t> v;
    for (const auto& t : split(s, ';')) v.push_back(static_cast<std::size_t>(std::stoull(t)));
    return v;
}

const char* kCsvHeader =
    "round,average_accuracy,held_out_accuracy,uplink_bytes,downlink_bytes,clients,accuracy,test_loss,selected,"
    "train_loss,failed";

}  // namespace

FederatedDataset build_dataset(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& d = cfg.dataset;
    TaskConfig task = d.task;
    const std::uint64_t seed = data_seed(cfg);
    task.seed = seed;
    BlobTextureTask base(task);
    if (d.kind == "feature_shift") return make_feature_shift(base, cfg.clients, d.shift_strength, seed, d.sizes);
    LabeledSet pool = base.make_set(0, d.total);
    FederatedDataset ds = d.kind == "dirichlet"
                              ? dirichlet_partition(pool, task.num_classes, cfg.clients, d.concentration, seed, d.fractions)
                              : size_skew(pool, task.num_classes, cfg.clients, d.size_ratio, seed, d.fractions);
    if (d.shift_strength > 0.0) apply_feature_shift(ds, d.shift_strength, seed);
    return ds;
}

fs::path run_dir_for(const fs::path& root, const ExperimentConfig& cfg) {
    std::string leaf = to_string(cfg.algorithm) + "-seed" + std::to_string(cfg.seed);
    if (cfg.held_out) leaf += "-holdout" + std::to_string(*cfg.held_out);
    return root / cfg.name / leaf;
}

nlohmann::json metrics_to_json(const RoundMetrics& m, const ExperimentConfig& cfg) {
    nlohmann::json j = {
        {"algorithm", to_string(cfg.algorithm)},
        {"seed", cfg.seed},
        {"round", m.round},
        {"average_accuracy", m.average_accuracy},
        {"clients", m.clients},
        {"accuracy", m.accuracy},
        {"test_loss", m.test_loss},
        {"selected", m.selected},
        {"train_loss", m.train_loss},
        {"failed", m.failed},
        {"uplink_bytes", m.uplink_bytes},
        {"downlink_bytes", m.downlink_bytes},
    };
    if (m.held_out_accuracy) j["held_out_accuracy"] = *m.held_out_accuracy;
    return j;
}

RoundMetrics metrics_from_json(const nlohmann::json& j) {
    RoundMetrics m;
    m.round = j.at("round").get<std::size_t>();
    m.average_accuracy = j.at("average_accuracy").get<double>();
    m.clients = j.at("clients").get<std::vector<std::size_t>>();
    m.accuracy = j.at("accuracy").get<std::vector<double>>();
    m.test_loss = j.at("test_loss").get<std::vector<double>>();
    m.selected = j.value("selected", std::vector<std::size_t>{});
    m.train_loss = j.value("train_loss", std::vector<double>{});
    m.failed = j.value("failed", std::vector<std::size_t>{});
    m.uplink_bytes = j.value("uplink_bytes", std::size_t{0});
    m.downlink_bytes = j.value("downlink_bytes", std::size_t{0});
    if (j.contains("held_out_accuracy")) m.held_out_accuracy = j.at("held_out_accuracy").get<double>();
    return m;
}

std::string metrics_csv(const std::vector<RoundMetrics>& rounds) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    auto u = [](std::size_t v) { return std::to_string(v); };
    for (const auto& m : rounds) {
        os << m.round << ',' << fmt(m.average_accuracy) << ',' << (m.held_out_accuracy ? fmt(*m.held_out_accuracy) : "")
           << ',' << m.uplink_bytes << ',' << m.downlink_bytes << ',' << join(m.clients, u) << ','
           << join(m.accuracy, fmt) << ',' << join(m.test_loss, fmt) << ',' << join(m.selected, u) << ','
           << join(m.train_loss, fmt) << ',' << join(m.failed, u) << '\n';
    }
    return os.str();
}

std::vector<RoundMetrics> parse_metrics_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) throw std::runtime_error("metrics csv: unexpected header");
    std::vector<RoundMetrics> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto f = split(line, ',');
        f.resize(11);
        try {
            RoundMetrics m;
            m.round = static_cast<std::size_t>(std::stoull(f[0]));
            m.average_accuracy = std::stod(f[1]);
            if (!f[2].empty()) m.held_out_accuracy = std::stod(f[2]);
            m.uplink_bytes = static_cast<std::size_t>(std::stoull(f[3]));
            m.downlink_bytes = static_cast<std::size_t>(std::stoull(f[4]));
            m.clients = parse_sizes(f[5]);
            m.accuracy = parse_doubles(f[6]);
            m.test_loss = parse_doubles(f[7]);
            m.selected = parse_sizes(f[8]);
            m.train_loss = parse_doubles(f[9]);
            m.failed = parse_sizes(f[10]);
            out.push_back(std::move(m));
        } catch (const std::logic_error& e) {
            throw std::runtime_error("metrics csv line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<RoundMetrics> read_metrics_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<RoundMetrics> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(metrics_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& run_dir) {
    cfg.validate();
    ExperimentResult result;
    result.config = cfg;

    const FederatedDataset ds = build_dataset(cfg);
    const ModelSpec spec = cfg.model_spec();
    ServerState server = ServerState::create(spec, init_params(spec, cfg.seed));

    std::vector<ClientState> clients;
    for (std::size_t m = 0; m < ds.num_clients(); ++m) {
        if (cfg.held_out && *cfg.held_out == m) continue;
        clients.push_back(ClientState{m, &ds.clients[m].train, &ds.clients[m].test, server.global, {}});
    }
    std::optional<LabeledSet> held_out_data;
    if (cfg.held_out) {
        const auto& c = ds.clients[*cfg.held_out];
        std::vector<LabeledSet> parts;
        for (const LabeledSet* s : {&c.train, &c.val, &c.test}) {
            if (!s->empty()) parts.push_back(*s);
        }
        held_out_data = LabeledSet::concat(parts);
    }

    RoundConfig rc = cfg.round_config();
    if (cfg.algorithm == Algorithm::mixup) rc.local.augmenter = make_mixup_augmenter(cfg.mixup_alpha);

    auto finish = [&](RoundMetrics m) {
        if (held_out_data) m.held_out_accuracy = evaluate(spec, server.global, *held_out_data).accuracy;
        result.rounds.push_back(std::move(m));
    };

    const auto t0 = std::chrono::steady_clock::now();
    {
        RoundMetrics m = metrics_from_eval(0, evaluate_clients(server, clients));
        m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        finish(std::move(m));
    }
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        RoundReport rep = run_round(server, clients, rc);
        RoundMetrics m = metrics_from_eval(rep.round, rep.eval);
        m.selected = rep.selected;
        for (const auto& c : rep.clients) m.train_loss.push_back(c.train_loss);
        for (const auto& f : rep.failures) m.failed.push_back(f.first);
        m.uplink_bytes = rep.uplink_bytes;
        m.downlink_bytes = rep.downlink_bytes;
        m.wall_seconds = rep.wall_seconds;
        finish(std::move(m));
    }
    result.final_model = server.global;

    if (run_dir) {
        fs::create_directories(*run_dir);
        result.run_dir = *run_dir;
        write_text(*run_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
        std::string jsonl, timing;
        for (const auto& m : result.rounds) {
            jsonl += metrics_to_json(m, cfg).dump() + "\n";
            timing += nlohmann::json{{"round", m.round}, {"wall_seconds", m.wall_seconds}}.dump() + "\n";
        }
        write_text(*run_dir / "metrics.jsonl", jsonl);
        write_text(*run_dir / "metrics.csv", metrics_csv(result.rounds));
        write_text(*run_dir / "timing.jsonl", timing);
        save_params(*run_dir / "final_model.bin", result.final_model);
    }
    return result;
}

LeaveOneOutResult leave_one_out(const ExperimentConfig& cfg, std::size_t held_out,
                                const std::optional<fs::path>& run_dir) {
    if (cfg.clients < 2) throw std::invalid_argument("leave_one_out: needs at least 2 clients");
    if (held_out >= cfg.clients) {
        throw std::invalid_argument("leave_one_out: client " + std::to_string(held_out) + " out of range for " +
                                    std::to_string(cfg.clients) + " clients");
    }
    ExperimentConfig c = cfg;
    c.held_out = held_out;
    LeaveOneOutResult r;
    r.held_out = held_out;
    r.experiment = run_experiment(c, run_dir);
    const RoundMetrics& last = r.experiment.last();
    r.training_clients = last.clients;
    r.held_out_accuracy = *last.held_out_accuracy;
    r.in_federation_accuracy = last.average_accuracy;
    r.participation_gap = r.in_federation_accuracy - r.held_out_accuracy;
    return r;
}

}  // namespace fedfa::harness
