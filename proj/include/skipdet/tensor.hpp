#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "skipdet/rng.hpp"

namespace skipdet {

// Dense N-d array (N <= 4, batch x channels x height x width) with an
// optional gradient buffer of the same shape. float is the working
// precision; the double instantiation exists for gradient checking only.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty unless ensure_grad() was called

    TensorT() = default;
    explicit TensorT(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
            n *= std::size_t(d);
        }
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape.at(std::size_t(i)); }
    int ndim() const { return int(shape.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), T(0));
    }

    // NCHW access
    T& at(int n, int c, int h, int w) {
        return data[((std::size_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T at(int n, int c, int h, int w) const {
        return data[((std::size_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T& at(int n, int c) { return data[std::size_t(n) * shape[1] + c]; }
    T at(int n, int c) const { return data[std::size_t(n) * shape[1] + c]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
TensorT<T> randn(std::vector<int> shape, Rng& rng, T stddev = T(1)) {
    TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = T(rng.normal()) * stddev;
    return t;
}

inline void check_shape(const std::vector<int>& got, const std::vector<int>& want,
                        const std::string& where) {
    if (got != want) {
        TensorT<float> a, b;
        a.shape = got;
        b.shape = want;
        throw std::invalid_argument(where + ": shape mismatch, got " + a.shape_str() +
                                    ", expected " + b.shape_str());
    }
}

}  // namespace skipdet
