#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace moss {

/// Dense row-major tensor of doubles. Value semantics throughout; shapes are
/// small int vectors ({B,C,H,W} for feature maps, {B,D} for matrices, {}-like
/// {1} for scalars).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const std::vector<int>& shape() const { return shape_; }
    size_t numel() const { return data_.size(); }
    int dim(size_t i) const { return shape_[i]; }
    size_t rank() const { return shape_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    /// 4-d accessor for {B,C,H,W} tensors.
    double& at4(int b, int c, int h, int w) {
        return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const double& at4(int b, int c, int h, int w) const {
        return data_[((static_cast<size_t>(b) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    /// 2-d accessor for {R,C} tensors.
    double& at2(int r, int c) { return data_[static_cast<size_t>(r) * shape_[1] + c]; }
    const double& at2(int r, int c) const { return data_[static_cast<size_t>(r) * shape_[1] + c]; }

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    std::string shape_str() const;

    static size_t shape_numel(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace moss
