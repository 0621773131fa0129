#pragma once

#include <cmath>
#include <cstddef>
#include <sstream>
#include <string>
#include <vector>

#include "aat/errors.hpp"

namespace aat {

// Dense row-major tensor of 64-bit floats. Rank 1 ({n}) and rank 2
// ({rows, cols}) cover everything the decoder needs; scalars are shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<int> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size()) {
            throw DimensionError("tensor: shape " + shape_str() + " does not match " +
                                 std::to_string(data.size()) + " elements");
        }
    }

    static Tensor zeros(std::vector<int> s) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    static Tensor full(std::vector<int> s, double v) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vec(std::vector<double> d) {
        int n = static_cast<int>(d.size());
        return Tensor({n}, std::move(d));
    }

    static Tensor matrix(int r, int c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    static Tensor identity(int n) {
        Tensor t = zeros({n, n});
        for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * n + i] = 1.0;
        return t;
    }

    int ndim() const { return static_cast<int>(shape.size()); }

    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    std::size_t numel() const { return data.size(); }

    // rank-2 accessors
    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool is_scalar() const { return numel() == 1; }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "{";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) os << ",";
            os << shape[i];
        }
        os << "}";
        return os.str();
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw DimensionError("tensor: negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }
};

} // namespace aat
