#include "fedfa/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "fedfa/checkpoint.hpp"
#include "fedfa/rng.hpp"

namespace fedfa {

void TaskConfig::validate() const {
    if (num_classes < 2) throw std::invalid_argument("task: need at least 2 classes");
    if (channels == 0 || height < 4 || width < 4) throw std::invalid_argument("task: image too small");
    if (!(noise >= 0.0) || !(jitter >= 0.0)) throw std::invalid_argument("task: noise and jitter must be >= 0");
}

BlobTextureTask::BlobTextureTask(TaskConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(cfg_.seed, Stream::data, {0xB10B});
    const double H = static_cast<double>(cfg_.height), W = static_cast<double>(cfg_.width);
    const double unit = std::min(H, W) / 16.0;
    for (std::size_t k = 0; k < cfg_.num_classes; ++k) {
        Prototype p;
        p.cx = rng.uniform(0.25 * W, 0.75 * W);
        p.cy = rng.uniform(0.25 * H, 0.75 * H);
        p.radius = rng.uniform(1.5, 3.0) * unit;
        for (std::size_t c = 0; c < cfg_.channels; ++c) p.color.push_back(rng.uniform(-1.0, 1.0));
        p.angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg_.num_classes) + rng.uniform(-0.1, 0.1);
        p.freq = rng.uniform(0.6, 1.4) / unit;
        p.texture_amp = rng.uniform(0.3, 0.6);
        if (!cfg_.class_colors && k > 0) p.color = protos_.front().color;
        protos_.push_back(std::move(p));
    }
}

void BlobTextureTask::render(std::size_t index, int label, std::span<double> out) const {
    if (label < 0 || static_cast<std::size_t>(label) >= cfg_.num_classes) throw std::out_of_range("task: bad label");
    const std::size_t C = cfg_.channels, H = cfg_.height, W = cfg_.width;
    if (out.size() != C * H * W) throw std::invalid_argument("task: output buffer has wrong size");
    const Prototype& p = protos_[static_cast<std::size_t>(label)];
    Rng rng(cfg_.seed, Stream::data, {1, index});
    const double cx = p.cx + rng.uniform(-cfg_.jitter, cfg_.jitter);
    const double cy = p.cy + rng.uniform(-cfg_.jitter, cfg_.jitter);
    const double amp = rng.uniform(1.2, 1.8);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    const double inv_2r2 = 1.0 / (2.0 * p.radius * p.radius);
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            const double di = static_cast<double>(i) - cy, dj = static_cast<double>(j) - cx;
            const double blob = amp * std::exp(-(di * di + dj * dj) * inv_2r2);
            const double tex = p.texture_amp * std::cos(p.freq * (static_cast<double>(i) * ca + static_cast<double>(j) * sa) + phase);
            for (std::size_t c = 0; c < C; ++c) out[(c * H + i) * W + j] = p.color[c] * blob + tex;
        }
    }
    for (auto& v : out) v += cfg_.noise * rng.normal();
}

LabeledSet BlobTextureTask::make_set(std::size_t first, std::size_t n) const {
    LabeledSet set;
    if (n == 0) return set;
    const Shape s = sample_shape();
    const std::size_t per = shape_numel(s);
    set.inputs = Tensor(Shape{n, s[0], s[1], s[2]});
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % cfg_.num_classes);
        render(first + i, label, set.inputs.data().subspan(i * per, per));
        set.labels.push_back(label);
        set.ids.push_back(first + i);
    }
    return set;
}

std::vector<ClientShift> draw_client_shifts(std::size_t num_clients, std::size_t channels, double strength,
                                            std::uint64_t seed) {
    if (!(strength >= 0.0)) throw std::invalid_argument("shift strength must be >= 0");
    std::vector<ClientShift> out;
    for (std::size_t m = 0; m < num_clients; ++m) {
        Rng rng(seed, Stream::data, {2, m});
        ClientShift s;
        for (std::size_t c = 0; c < channels; ++c) {
            s.scale.push_back(strength == 0.0 ? 1.0 : rng.uniform(1.0 - strength, 1.0 + strength));
            s.offset.push_back(strength == 0.0 ? 0.0 : rng.uniform(-strength, strength));
        }
        out.push_back(std::move(s));
    }
    return out;
}

void apply_shift(LabeledSet& set, const ClientShift& shift) {
    if (set.empty()) return;
    const std::size_t N = set.inputs.dim(0), C = set.inputs.dim(1), HW = set.inputs.dim(2) * set.inputs.dim(3);
    if (shift.scale.size() != C) throw std::invalid_argument("apply_shift: channel count mismatch");
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            double* x = set.inputs.data().data() + (n * C + c) * HW;
            for (std::size_t t = 0; t < HW; ++t) x[t] = shift.scale[c] * x[t] + shift.offset[c];
        }
    }
}

namespace {

nlohmann::json shifts_json(const std::vector<ClientShift>& shifts) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : shifts) arr.push_back({{"scale", s.scale}, {"offset", s.offset}});
    return arr;
}

std::size_t channels_of(const FederatedDataset& ds) {
    for (const auto& c : ds.clients) {
        for (const LabeledSet* s : {&c.train, &c.val, &c.test}) {
            if (!s->empty()) return s->inputs.dim(1);
        }
    }
    throw std::invalid_argument("dataset has no samples");
}

// Shuffles a client's rows and splits them into train/val/test; train keeps
// the remainder and at least one sample.
ClientData split_client(const LabeledSet& all, SplitFractions f, std::uint64_t seed, std::size_t client) {
    if (!(f.val >= 0.0 && f.test >= 0.0 && f.val + f.test < 1.0)) {
        throw std::invalid_argument("split fractions must be nonnegative and sum below 1");
    }
    std::vector<std::size_t> rows(all.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng(seed, Stream::data, {3, client});
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    const std::size_t n = rows.size();
    std::size_t n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n)));
    std::size_t n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n)));
    while (n_val + n_test >= n && n_val + n_test > 0) {
        if (n_test >= n_val && n_test > 0) --n_test; else --n_val;
    }
    std::span<const std::size_t> r(rows);
    ClientData d;
    d.test = all.subset(r.subspan(0, n_test));
    d.val = all.subset(r.subspan(n_test, n_val));
    auto train_rows = std::vector<std::size_t>(rows.begin() + static_cast<long>(n_test + n_val), rows.end());
    std::sort(train_rows.begin(), train_rows.end());
    d.train = all.subset(train_rows);
    return d;
}

}  // namespace

void apply_feature_shift(FederatedDataset& ds, double strength, std::uint64_t seed) {
    const auto shifts = draw_client_shifts(ds.num_clients(), channels_of(ds), strength, seed);
    for (std::size_t m = 0; m < ds.num_clients(); ++m) {
        apply_shift(ds.clients[m].train, shifts[m]);
        apply_shift(ds.clients[m].val, shifts[m]);
        apply_shift(ds.clients[m].test, shifts[m]);
    }
    ds.metadata["shift_strength"] = strength;
    ds.metadata["shift_seed"] = seed;
    ds.metadata["shifts"] = shifts_json(shifts);
}

FederatedDataset make_feature_shift(const BlobTextureTask& base, std::size_t num_clients, double strength,
                                    std::uint64_t seed, SplitSizes sizes) {
    if (num_clients < 2) throw std::invalid_argument("make_feature_shift: need at least 2 clients");
    if (sizes.train == 0) throw std::invalid_argument("make_feature_shift: empty training split");
    FederatedDataset ds;
    ds.num_classes = base.config().num_classes;
    const std::size_t per_client = sizes.train + sizes.val + sizes.test;
    for (std::size_t m = 0; m < num_clients; ++m) {
        const std::size_t first = m * per_client;
        ClientData d;
        d.train = base.make_set(first, sizes.train);
        d.val = base.make_set(first + sizes.train, sizes.val);
        d.test = base.make_set(first + sizes.train + sizes.val, sizes.test);
        ds.clients.push_back(std::move(d));
    }
    const auto& t = base.config();
    ds.metadata = {{"generator", "feature_shift"},
                   {"num_clients", num_clients},
                   {"seed", seed},
                   {"sizes", {{"train", sizes.train}, {"val", sizes.val}, {"test", sizes.test}}},
                   {"task",
                    {{"num_classes", t.num_classes}, {"channels", t.channels}, {"height", t.height},
                     {"width", t.width}, {"noise", t.noise}, {"jitter", t.jitter},
                     {"class_colors", t.class_colors}, {"seed", t.seed}}}};
    apply_feature_shift(ds, strength, seed);
    return ds;
}

FederatedDataset dirichlet_partition(const LabeledSet& base, std::size_t num_classes, std::size_t num_clients,
                                     double concentration, std::uint64_t seed, SplitFractions fractions) {
    if (!(concentration > 0.0)) throw std::invalid_argument("dirichlet_partition: concentration must be > 0");
    if (num_clients == 0) throw std::invalid_argument("dirichlet_partition: need at least 1 client");
    if (base.size() < num_clients) {
        throw std::invalid_argument("dirichlet_partition: " + std::to_string(base.size()) + " samples for " +
                                    std::to_string(num_clients) + " clients");
    }
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < base.size(); ++i) by_class.at(static_cast<std::size_t>(base.labels[i])).push_back(i);

    Rng rng(seed, Stream::data, {4});
    std::vector<std::vector<std::size_t>> assigned;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 10000) throw std::runtime_error("dirichlet_partition: could not give every client a sample");
        assigned.assign(num_clients, {});
        for (std::size_t k = 0; k < num_classes; ++k) {
            auto rows = by_class[k];
            std::shuffle(rows.begin(), rows.end(), rng.engine());
            std::vector<double> prop(num_clients);
            double total = 0.0;
            for (auto& p : prop) total += (p = rng.gamma(concentration));
            if (total == 0.0) {
                prop.assign(num_clients, 0.0);
                prop[rng.index(num_clients)] = 1.0;
                total = 1.0;
            }
            // Split points at floor(cumsum(prop) * n), as in the usual Dirichlet partitioner.
            double cum = 0.0;
            std::size_t start = 0;
            for (std::size_t m = 0; m < num_clients; ++m) {
                cum += prop[m] / total;
                std::size_t end = m + 1 == num_clients
                                      ? rows.size()
                                      : std::min(rows.size(), static_cast<std::size_t>(std::floor(cum * static_cast<double>(rows.size()))));
                end = std::max(end, start);
                assigned[m].insert(assigned[m].end(), rows.begin() + static_cast<long>(start), rows.begin() + static_cast<long>(end));
                start = end;
            }
        }
        if (std::all_of(assigned.begin(), assigned.end(), [](const auto& a) { return !a.empty(); })) break;
    }

    FederatedDataset ds;
    ds.num_classes = num_classes;
    for (std::size_t m = 0; m < num_clients; ++m) {
        std::sort(assigned[m].begin(), assigned[m].end());
        ds.clients.push_back(split_client(base.subset(assigned[m]), fractions, seed, m));
    }
    ds.metadata = {{"generator", "dirichlet"},
                   {"num_clients", num_clients},
                   {"concentration", concentration},
                   {"seed", seed},
                   {"fractions", {{"val", fractions.val}, {"test", fractions.test}}}};
    return ds;
}

std::vector<std::size_t> geometric_sizes(std::size_t total, std::size_t num_clients, double ratio) {
    if (!(ratio >= 1.0)) throw std::invalid_argument("size_skew: ratio must be >= 1");
    if (num_clients == 0) throw std::invalid_argument("size_skew: need at least 1 client");
    std::vector<double> w(num_clients);
    for (std::size_t m = 0; m < num_clients; ++m) {
        const double e = num_clients == 1 ? 0.0 : static_cast<double>(m) / static_cast<double>(num_clients - 1);
        w[m] = std::pow(ratio, e);
    }
    const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
    std::vector<std::size_t> sizes(num_clients);
    std::vector<std::pair<double, std::size_t>> rem;
    std::size_t assigned = 0;
    for (std::size_t m = 0; m < num_clients; ++m) {
        const double exact = static_cast<double>(total) * w[m] / wsum;
        sizes[m] = static_cast<std::size_t>(std::floor(exact));
        assigned += sizes[m];
        rem.emplace_back(exact - std::floor(exact), m);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++sizes[rem[i % rem.size()].second];
    return sizes;
}

FederatedDataset size_skew(const LabeledSet& base, std::size_t num_classes, std::size_t num_clients, double ratio,
                           std::uint64_t seed, SplitFractions fractions) {
    const auto sizes = geometric_sizes(base.size(), num_clients, ratio);
    for (auto s : sizes) {
        if (s == 0) throw std::invalid_argument("size_skew: a client would receive no samples");
    }
    std::vector<std::size_t> rows(base.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    Rng rng(seed, Stream::data, {5});
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    FederatedDataset ds;
    ds.num_classes = num_classes;
    std::size_t start = 0;
    for (std::size_t m = 0; m < num_clients; ++m) {
        std::vector<std::size_t> mine(rows.begin() + static_cast<long>(start), rows.begin() + static_cast<long>(start + sizes[m]));
        std::sort(mine.begin(), mine.end());
        start += sizes[m];
        ds.clients.push_back(split_client(base.subset(mine), fractions, seed, m));
    }
    ds.metadata = {{"generator", "size_skew"},
                   {"num_clients", num_clients},
                   {"ratio", ratio},
                   {"seed", seed},
                   {"sizes", sizes},
                   {"fractions", {{"val", fractions.val}, {"test", fractions.test}}}};
    return ds;
}

std::vector<std::vector<std::size_t>> class_histograms(const FederatedDataset& ds) {
    std::vector<std::vector<std::size_t>> out;
    for (const auto& c : ds.clients) {
        std::vector<std::size_t> h(ds.num_classes, 0);
        for (const LabeledSet* s : {&c.train, &c.val, &c.test}) {
            for (int l : s->labels) ++h.at(static_cast<std::size_t>(l));
        }
        out.push_back(std::move(h));
    }
    return out;
}

double max_label_tv_from_uniform(const FederatedDataset& ds) {
    double worst = 0.0;
    for (const auto& h : class_histograms(ds)) {
        const double n = static_cast<double>(std::accumulate(h.begin(), h.end(), std::size_t{0}));
        if (n == 0) continue;
        double tv = 0.0;
        for (auto v : h) tv += std::abs(static_cast<double>(v) / n - 1.0 / static_cast<double>(h.size()));
        worst = std::max(worst, 0.5 * tv);
    }
    return worst;
}

namespace {

void add_split(ModelParams& bundle, const std::string& prefix, const LabeledSet& s) {
    if (s.empty()) return;
    bundle.add(prefix + ".inputs", s.inputs);
    std::vector<double> labels(s.labels.begin(), s.labels.end());
    std::vector<double> ids(s.ids.begin(), s.ids.end());
    bundle.add(prefix + ".labels", Tensor(Shape{s.size()}, std::move(labels)));
    bundle.add(prefix + ".ids", Tensor(Shape{s.size()}, std::move(ids)));
}

LabeledSet read_split(const ModelParams& bundle, const std::string& prefix) {
    LabeledSet s;
    const Tensor* inputs = bundle.find(prefix + ".inputs");
    if (!inputs) return s;
    s.inputs = *inputs;
    for (double v : bundle.get(prefix + ".labels").data()) s.labels.push_back(static_cast<int>(v));
    for (double v : bundle.get(prefix + ".ids").data()) s.ids.push_back(static_cast<std::size_t>(v));
    return s;
}

}  // namespace

void export_dataset(const FederatedDataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta = ds.metadata;
    meta["num_classes"] = ds.num_classes;
    meta["num_clients"] = ds.num_clients();
    std::ofstream(dir / "metadata.json") << meta.dump(2) << '\n';
    for (std::size_t m = 0; m < ds.num_clients(); ++m) {
        ModelParams bundle;
        add_split(bundle, "train", ds.clients[m].train);
        add_split(bundle, "val", ds.clients[m].val);
        add_split(bundle, "test", ds.clients[m].test);
        save_params(dir / ("client_" + std::to_string(m) + ".bin"), bundle);
    }
}

FederatedDataset import_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "metadata.json");
    if (!in) throw std::runtime_error("import_dataset: missing " + (dir / "metadata.json").string());
    FederatedDataset ds;
    ds.metadata = nlohmann::json::parse(in);
    ds.num_classes = ds.metadata.at("num_classes").get<std::size_t>();
    const auto M = ds.metadata.at("num_clients").get<std::size_t>();
    for (std::size_t m = 0; m < M; ++m) {
        const ModelParams bundle = load_params(dir / ("client_" + std::to_string(m) + ".bin"));
        ds.clients.push_back(ClientData{read_split(bundle, "train"), read_split(bundle, "val"), read_split(bundle, "test")});
    }
    ds.metadata.erase("num_classes");
    return ds;
}

bool same_dataset(const FederatedDataset& a, const FederatedDataset& b) {
    if (a.num_classes != b.num_classes || a.num_clients() != b.num_clients()) return false;
    for (std::size_t m = 0; m < a.num_clients(); ++m) {
        const auto& x = a.clients[m];
        const auto& y = b.clients[m];
        for (auto [s, t] : {std::pair{&x.train, &y.train}, std::pair{&x.val, &y.val}, std::pair{&x.test, &y.test}}) {
            if (s->labels != t->labels || s->ids != t->ids) return false;
            if (!s->empty() && !s->inputs.same_values(t->inputs)) return false;
        }
    }
    return true;
}

}  // namespace fedfa
