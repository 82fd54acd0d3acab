#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "srw/errors.hpp"

namespace srw {

// Dense row-major N-d array of doubles. Values are plain data; the autodiff
// tape (graph.hpp) owns all differentiable structure.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(numel_of(shape) == static_cast<int64_t>(data.size()),
                "tensor: shape does not match data length");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            require(d > 0, "tensor: shape entries must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) {
        const int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int64_t> s, double v) {
        const int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }

    int64_t dim(size_t i) const { return shape.at(i); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // row-major index helpers for up to 4-d access in non-hot paths
    double& at(std::initializer_list<int64_t> idx) { return data[static_cast<size_t>(offset(idx))]; }
    double at(std::initializer_list<int64_t> idx) const { return data[static_cast<size_t>(offset(idx))]; }

    int64_t offset(std::initializer_list<int64_t> idx) const {
        require(idx.size() == shape.size(), "tensor: index rank mismatch");
        int64_t off = 0;
        size_t k = 0;
        for (int64_t i : idx) {
            require(i >= 0 && i < shape[k], "tensor: index out of range");
            off = off * shape[k] + i;
            ++k;
        }
        return off;
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

// Ordered collection of named tensors: network parameters, their gradients,
// and optimizer velocity all share this layout.
struct Params {
    std::vector<std::string> names;
    std::vector<Tensor> tensors;

    void add(std::string name, Tensor t) {
        names.push_back(std::move(name));
        tensors.push_back(std::move(t));
    }

    size_t size() const { return tensors.size(); }
    bool empty() const { return tensors.empty(); }

    int64_t numel() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    const Tensor* find(const std::string& name) const {
        for (size_t i = 0; i < names.size(); ++i) {
            if (names[i] == name) return &tensors[i];
        }
        return nullptr;
    }

    bool same_shapes(const Params& o) const {
        if (size() != o.size()) return false;
        for (size_t i = 0; i < size(); ++i) {
            if (!tensors[i].same_shape(o.tensors[i])) return false;
        }
        return true;
    }

    Params zeros_like() const {
        Params z;
        for (size_t i = 0; i < size(); ++i) z.add(names[i], Tensor::zeros(tensors[i].shape));
        return z;
    }
};

// Flat binary checkpoint: u64 tensor count, then per tensor
// u32 name length, name bytes, u32 rank, u64 dims, f64 little-endian values.
void save_tensors(const std::string& path, const Params& params);
Params load_tensors(const std::string& path);

}  // namespace srw
