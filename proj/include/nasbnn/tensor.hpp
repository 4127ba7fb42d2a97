#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nasbnn {

// Dense row-major float32 tensor. No strides or views; elastic slicing is
// done by explicit gather/scatter so the sliced tensors stay contiguous for
// BLAS.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int64_t d : shape_) {
            assert(d >= 0);
            n *= d;
        }
        data_.assign(static_cast<size_t>(n), 0.0f);
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, float v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int i) const {
        assert(i >= 0 && i < ndim());
        return shape_[static_cast<size_t>(i)];
    }
    const std::vector<int64_t>& shape() const { return shape_; }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& at(int64_t i) {
        assert(i >= 0 && i < numel());
        return data_[static_cast<size_t>(i)];
    }
    float at(int64_t i) const {
        assert(i >= 0 && i < numel());
        return data_[static_cast<size_t>(i)];
    }

    void fill(float v) {
        for (auto& x : data_) x = v;
    }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    std::vector<int64_t> shape_;
    std::vector<float> data_;
};

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    const float* pa = a.data();
    const float* pb = b.data();
    for (int64_t i = 0; i < a.numel(); ++i)
        if (pa[i] != pb[i]) return false;
    return true;
}

}  // namespace nasbnn
