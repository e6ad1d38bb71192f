#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedfa/tensor.hpp"

namespace fedfa {

// Samples stacked as [N,C,H,W] with integer labels and stable sample ids.
struct LabeledSet {
    Tensor inputs;
    std::vector<int> labels;
    std::vector<std::size_t> ids;

    std::size_t size() const { return labels.size(); }
    bool empty() const { return labels.empty(); }
    // [C,H,W] of one sample.
    Shape sample_shape() const;

    LabeledSet subset(std::span<const std::size_t> rows) const;
    // Stacks rows into a [n,C,H,W] batch.
    Tensor gather(std::span<const std::size_t> rows) const;
    std::vector<int> gather_labels(std::span<const std::size_t> rows) const;

    static LabeledSet concat(std::span<const LabeledSet> parts);
};

struct ClientData {
    LabeledSet train;
    LabeledSet val;
    LabeledSet test;
};

}  // namespace fedfa
