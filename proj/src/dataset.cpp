#include "fedfa/dataset.hpp"

#include <algorithm>
#include <stdexcept>

namespace fedfa {

Shape LabeledSet::sample_shape() const {
    if (inputs.rank() != 4) throw std::logic_error("LabeledSet: no samples");
    return Shape{inputs.dim(1), inputs.dim(2), inputs.dim(3)};
}

Tensor LabeledSet::gather(std::span<const std::size_t> rows) const {
    const Shape s = sample_shape();
    const std::size_t n = shape_numel(s);
    Tensor out(Shape{rows.size(), s[0], s[1], s[2]});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= size()) throw std::out_of_range("LabeledSet: row out of range");
        std::copy_n(inputs.data().data() + rows[i] * n, n, out.data().data() + i * n);
    }
    return out;
}

std::vector<int> LabeledSet::gather_labels(std::span<const std::size_t> rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(labels.at(r));
    return out;
}

LabeledSet LabeledSet::subset(std::span<const std::size_t> rows) const {
    LabeledSet out;
    if (rows.empty()) return out;
    out.inputs = gather(rows);
    out.labels = gather_labels(rows);
    for (auto r : rows) out.ids.push_back(ids.at(r));
    return out;
}

LabeledSet LabeledSet::concat(std::span<const LabeledSet> parts) {
    LabeledSet out;
    std::size_t total = 0;
    Shape s;
    for (const auto& p : parts) {
        if (p.empty()) continue;
        if (s.empty()) s = p.sample_shape();
        if (p.sample_shape() != s) throw std::invalid_argument("LabeledSet::concat: sample shapes differ");
        total += p.size();
    }
    if (total == 0) return out;
    std::vector<double> data;
    data.reserve(total * shape_numel(s));
    for (const auto& p : parts) {
        if (p.empty()) continue;
        data.insert(data.end(), p.inputs.data().begin(), p.inputs.data().end());
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        out.ids.insert(out.ids.end(), p.ids.begin(), p.ids.end());
    }
    out.inputs = Tensor(Shape{total, s[0], s[1], s[2]}, std::move(data));
    return out;
}

}  // namespace fedfa
