#pragma once
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "tjepa/errors.hpp"

namespace tjepa {

// Dense row-major tensor. Real is float during training and double in
// verification mode; all shape/op code is shared between the two.
template <typename Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count_(shape_), Real(0)) {}

    Tensor(std::vector<std::size_t> shape, std::vector<Real> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count_(shape_))
            throw shape_error("tensor: data length does not match shape");
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, Real v) {
        Tensor t(std::move(shape));
        t.fill(v);
        return t;
    }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor row(std::vector<Real> v) {
        std::size_t n = v.size();
        return Tensor({1, n}, std::move(v));
    }

    static Tensor vec(std::vector<Real> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::initializer_list<Real> v) {
        return Tensor({r, c}, std::vector<Real>(v));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }

    std::size_t rows() const {
        require_2d();
        return shape_[0];
    }
    std::size_t cols() const {
        require_2d();
        return shape_[1];
    }

    // rows over the last axis, for ops that treat a tensor as [...xk]
    std::size_t last_dim() const {
        if (shape_.empty()) throw shape_error("tensor: rank 0");
        return shape_.back();
    }
    std::size_t outer_size() const { return last_dim() == 0 ? 0 : size() / last_dim(); }

    Real& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    Real operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& raw() { return data_; }
    const std::vector<Real>& raw() const { return data_; }

    Real item() const {
        if (size() != 1) throw shape_error("tensor: item() on non-scalar");
        return data_[0];
    }

    void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (Real v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    void require_2d() const {
        if (shape_.size() != 2) throw shape_error("tensor: expected rank 2, got " + shape_str());
    }

    static std::size_t count_(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::vector<std::size_t> shape_;
    std::vector<Real> data_;
};

}  // namespace tjepa
