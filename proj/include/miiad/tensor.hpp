#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace miiad {

// Dense row-major tensor of doubles. Rank is dynamic but in practice 1-3.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) { v.assign(numel_of(shape), 0.0); }
    Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (v.size() != size_t(numel_of(shape))) throw std::invalid_argument("tensor: data/shape mismatch");
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, double value) {
        Tensor t(std::move(s));
        for (auto& x : t.v) x = value;
        return t;
    }

    static long long numel_of(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("tensor: negative dim");
            n *= d;
        }
        return n;
    }

    size_t size() const { return v.size(); }
    int rank() const { return int(shape.size()); }
    bool empty() const { return v.empty(); }

    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& at(int i) { return v[size_t(i)]; }
    double at(int i) const { return v[size_t(i)]; }
    double& at(int i, int j) { return v[size_t(i) * cols() + j]; }
    double at(int i, int j) const { return v[size_t(i) * cols() + j]; }
    double& at(int i, int j, int k) { return v[(size_t(i) * shape[1] + j) * shape[2] + k]; }
    double at(int i, int j, int k) const { return v[(size_t(i) * shape[1] + j) * shape[2] + k]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }
};

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul: shape mismatch " + a.shape_str() + " x " + b.shape_str());
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c({m, n});
    for (int i = 0; i < m; ++i) {
        const double* ar = &a.v[size_t(i) * k];
        double* cr = &c.v[size_t(i) * n];
        for (int p = 0; p < k; ++p) {
            const double av = ar[p];
            if (av == 0.0) continue;
            const double* br = &b.v[size_t(p) * n];
            for (int j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
    return c;
}

}  // namespace miiad
