#pragma once

#include "madi/losses.hpp"

namespace madi {

// A preference pair over one shared condition (prompt + optional audio).
struct PrefExample {
    std::vector<int> prompt_ids;
    const audio::EncoderStates* enc = nullptr;
    bool use_acoustic = false;
    std::vector<int> chosen;
    std::vector<int> rejected;
};

// Monte-Carlo evidence bound on log p(y | condition): the mean over the given
// corruption draws of the negative masked cross-entropy term.
double elbo_estimate(const ModelState& state, const PrefExample& ex, const std::vector<int>& y,
                     const std::vector<MaskPattern>& patterns);

// ELBO(policy) - ELBO(reference), both scored under the SAME corruption
// draws — the variance-reduction device this whole module is named after.
double log_ratio(const ModelState& policy, const ModelState& reference, const PrefExample& ex,
                 const std::vector<int>& y, const std::vector<MaskPattern>& patterns);

// -log sigmoid(beta * margin), written as softplus(-beta * margin).
double preference_loss(double margin, double beta);

struct VrpoPairResult {
    double loss = 0.0;
    double margin = 0.0;
    GradMap grads;  // policy grads, already summed over all ELBO terms
};

// One preference-pair update: fresh corruption draws per response (reused
// verbatim for policy and reference), two-pass backward (values first, then
// per-term graphs seeded with the loss sensitivity).
VrpoPairResult vrpo_pair_grad(ModelState& policy, const ModelState& reference,
                              const PrefExample& ex, int n_samples, double beta, Rng& rng);

struct VarianceReport {
    double var_shared = 0.0;
    double var_independent = 0.0;
    double ratio = 0.0;
    int trials = 0;
};

// Empirical variance of the preference score with shared vs independent
// corruption draws between policy and reference.
VarianceReport variance_experiment(const ModelState& policy, const ModelState& reference,
                                   const PrefExample& ex, int trials, int n_samples,
                                   uint64_t seed);

}  // namespace madi
