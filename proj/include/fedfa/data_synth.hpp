#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedfa/dataset.hpp"

namespace fedfa {

struct TaskConfig {
    std::size_t num_classes = 4;
    std::size_t channels = 3;
    std::size_t height = 16;
    std::size_t width = 16;
    double noise = 0.5;        // pixel noise std
    double jitter = 2.0;       // blob centre jitter in pixels
    bool class_colors = true;  // false: every class shares one blob colour
    std::uint64_t seed = 0;    // fixes the class prototypes

    void validate() const;
};

// Seeded synthetic image classes: each class has a coloured Gaussian blob at a
// class-specific location plus an oriented sinusoidal texture. Sample i is a
// pure function of (task seed, i, label).
class BlobTextureTask {
public:
    explicit BlobTextureTask(TaskConfig cfg);

    const TaskConfig& config() const { return cfg_; }
    Shape sample_shape() const { return Shape{cfg_.channels, cfg_.height, cfg_.width}; }

    void render(std::size_t index, int label, std::span<double> out) const;
    // n samples with ids first..first+n-1 and labels cycling 0..K-1.
    LabeledSet make_set(std::size_t first, std::size_t n) const;

private:
    struct Prototype {
        double cx, cy, radius;
        std::vector<double> color;
        double angle, freq, texture_amp;
    };
    TaskConfig cfg_;
    std::vector<Prototype> protos_;
};

struct SplitSizes {
    std::size_t train = 64;
    std::size_t val = 0;
    std::size_t test = 64;
};

struct SplitFractions {
    double val = 0.0;
    double test = 0.25;
};

struct ClientShift {
    std::vector<double> scale;   // a_m per channel
    std::vector<double> offset;  // b_m per channel
};

struct FederatedDataset {
    std::vector<ClientData> clients;
    std::size_t num_classes = 0;
    nlohmann::json metadata;

    std::size_t num_clients() const { return clients.size(); }
};

// Per-channel affine map x <- a * x + b with a in [1-s, 1+s], b in [-s, s].
std::vector<ClientShift> draw_client_shifts(std::size_t num_clients, std::size_t channels, double strength,
                                            std::uint64_t seed);
void apply_shift(LabeledSet& set, const ClientShift& shift);
void apply_feature_shift(FederatedDataset& ds, double strength, std::uint64_t seed);

// M clients of i.i.d. base samples, each transformed by its own affine shift.
FederatedDataset make_feature_shift(const BlobTextureTask& base, std::size_t num_clients, double strength,
                                    std::uint64_t seed, SplitSizes sizes = {});

// Per-class proportions across clients drawn from Dir(concentration).
FederatedDataset dirichlet_partition(const LabeledSet& base, std::size_t num_classes, std::size_t num_clients,
                                     double concentration, std::uint64_t seed, SplitFractions fractions = {});

// Client sizes in geometric progression with max/min = ratio.
FederatedDataset size_skew(const LabeledSet& base, std::size_t num_classes, std::size_t num_clients, double ratio,
                           std::uint64_t seed, SplitFractions fractions = {});

// Largest-remainder rounding of total * w_m / sum(w).
std::vector<std::size_t> geometric_sizes(std::size_t total, std::size_t num_clients, double ratio);

// Per-client class histogram (all splits).
std::vector<std::vector<std::size_t>> class_histograms(const FederatedDataset& ds);
// max over clients of the total-variation distance between the client's
// label distribution and uniform.
double max_label_tv_from_uniform(const FederatedDataset& ds);

// Directory with metadata.json and client_<m>.bin (checkpoint encoding).
void export_dataset(const FederatedDataset& ds, const std::filesystem::path& dir);
FederatedDataset import_dataset(const std::filesystem::path& dir);

bool same_dataset(const FederatedDataset& a, const FederatedDataset& b);

}  // namespace fedfa
