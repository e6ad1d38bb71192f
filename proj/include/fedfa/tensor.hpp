#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fedfa {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major real array. `grad` is either empty (absent) or the same
// length as `data`.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
    static Tensor from(std::initializer_list<double> values);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 4-D accessors for [B,C,H,W] feature maps.
    double& at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double at(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((b * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool has_grad() const { return !grad_.empty(); }
    std::span<double> grad() { return grad_; }
    std::span<const double> grad() const { return grad_; }
    void zero_grad() { grad_.assign(data_.size(), 0.0); }
    void clear_grad() { grad_.clear(); }
    void set_grad(std::vector<double> g);

    Tensor reshaped(Shape shape) const;
    bool all_finite() const;

    // Value equality (shape + data bit pattern); gradients are ignored.
    bool same_values(const Tensor& other) const;

private:
    Shape shape_;
    std::vector<double> data_;
    std::vector<double> grad_;
};

void require_shape(const Tensor& t, const Shape& expected, const std::string& where);

}  // namespace fedfa
