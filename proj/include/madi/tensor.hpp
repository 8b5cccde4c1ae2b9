#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "madi/common.hpp"

namespace madi {

// Dense row-major tensor of doubles. Rank is usually 1 or 2; conv weights are
// rank 3 ([k][in][out]).
struct Tensor {
    std::vector<int> dims;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(count(dims), 0.0);
    }

    static size_t count(const std::vector<int>& d) {
        size_t n = 1;
        for (int x : d) n *= static_cast<size_t>(x);
        return n;
    }

    static Tensor zeros(std::vector<int> d) { return Tensor(std::move(d)); }

    static Tensor scalar(double x) {
        Tensor t({1});
        t.v[0] = x;
        return t;
    }

    size_t size() const { return v.size(); }
    int rank() const { return static_cast<int>(dims.size()); }

    int rows() const { return dims.size() == 2 ? dims[0] : (dims.empty() ? 0 : dims[0]); }
    int cols() const { return dims.size() == 2 ? dims[1] : 1; }

    double& at(int r, int c) { return v[static_cast<size_t>(r) * dims[1] + c]; }
    double at(int r, int c) const { return v[static_cast<size_t>(r) * dims[1] + c]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

inline bool all_finite(const Tensor& t) {
    for (double x : t.v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace madi
