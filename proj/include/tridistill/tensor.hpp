#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tridistill/rng.hpp"

namespace tridistill {

// Dense row-major tensor. T is float in training paths and double in the
// finite-difference gradient checks; reductions accumulate in double either way.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel(shape)) {}
    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) throw std::invalid_argument("tensor data does not match shape");
    }

    static std::size_t numel(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor truncated_normal(std::vector<int> s, double sigma, Rng& rng) {
        Tensor t(std::move(s));
        for (auto& x : t.data) x = static_cast<T>(rng.truncated_normal(sigma));
        return t;
    }

    std::size_t size() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& at(std::size_t i) { return data[i]; }
    T at(std::size_t i) const { return data[i]; }

    // 2-d / 3-d accessors for the hot paths; no bounds checks.
    T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * dim(1) + c]; }
    T at2(int r, int c) const { return data[static_cast<std::size_t>(r) * dim(1) + c]; }
    T& at3(int b, int r, int c) {
        return data[(static_cast<std::size_t>(b) * dim(1) + r) * dim(2) + c];
    }
    T at3(int b, int r, int c) const {
        return data[(static_cast<std::size_t>(b) * dim(1) + r) * dim(2) + c];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : this->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape == b.shape && a.data == b.data;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

} // namespace tridistill
