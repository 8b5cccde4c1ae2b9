#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "madi/common.hpp"
#include "madi/tensor.hpp"

namespace madi {

struct ParamTensor {
    std::string name;
    Tensor value;
    bool frozen = false;
};

struct LoraSpec {
    std::string target;  // name of the weight the low-rank delta attaches to
    int rank = 0;
    double alpha = 0.0;
};

// Flat named-parameter store. std::map keeps iteration order stable, which
// matters for deterministic optimizer updates and checkpoint layout.
struct ModelState {
    std::map<std::string, ParamTensor> params;
    std::vector<LoraSpec> lora;

    ParamTensor& add(const std::string& name, std::vector<int> dims, bool frozen) {
        MADI_CHECK(!params.count(name), "duplicate parameter: " + name);
        ParamTensor p;
        p.name = name;
        p.value = Tensor(std::move(dims));
        p.frozen = frozen;
        auto [it, ok] = params.emplace(name, std::move(p));
        (void)ok;
        return it->second;
    }

    bool has(const std::string& name) const { return params.count(name) != 0; }

    ParamTensor& at(const std::string& name) {
        auto it = params.find(name);
        MADI_CHECK(it != params.end(), "unknown parameter: " + name);
        return it->second;
    }
    const ParamTensor& at(const std::string& name) const {
        auto it = params.find(name);
        MADI_CHECK(it != params.end(), "unknown parameter: " + name);
        return it->second;
    }

    size_t trainable_count() const {
        size_t n = 0;
        for (const auto& [k, p] : params)
            if (!p.frozen) n += p.value.size();
        return n;
    }
    size_t total_count() const {
        size_t n = 0;
        for (const auto& [k, p] : params) n += p.value.size();
        return n;
    }
};

using GradMap = std::map<std::string, Tensor>;

inline void init_gaussian(Tensor& t, Rng& rng, double stddev) {
    for (double& x : t.v) x = rng.gaussian() * stddev;
}

inline void merge_add_grads(GradMap& into, GradMap&& from) {
    for (auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            into.emplace(name, std::move(g));
        } else {
            MADI_CHECK(it->second.dims == g.dims, "grad merge shape mismatch: " + name);
            for (size_t i = 0; i < g.size(); ++i) it->second.v[i] += g.v[i];
        }
    }
}

// Adds gaussian noise to every trainable tensor (metadata and frozen weights
// untouched). Used to fabricate a slightly-off policy for variance studies.
inline void perturb_params(ModelState& state, double sigma, Rng& rng) {
    for (auto& [name, p] : state.params) {
        if (p.frozen) continue;
        for (double& x : p.value.v) x += sigma * rng.gaussian();
    }
}

inline void scale_grads(GradMap& grads, double c) {
    for (auto& [name, g] : grads)
        for (double& x : g.v) x *= c;
}

inline double global_grad_norm(const GradMap& grads) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (double x : g.v) sq += x * x;
    return std::sqrt(sq);
}

// Rescales so the global norm is at most max_norm. The 1/t weight in the
// masked losses is heavy-tailed; occasional huge batches would otherwise
// knock the optimizer state over. max_norm <= 0 disables.
inline void clip_grad_norm(GradMap& grads, double max_norm) {
    if (max_norm <= 0.0) return;
    const double n = global_grad_norm(grads);
    if (n > max_norm) scale_grads(grads, max_norm / n);
}

}  // namespace madi
