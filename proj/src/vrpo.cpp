#include "madi/vrpo.hpp"

#include <cmath>

namespace madi {

namespace {

LossSample term_sample(const PrefExample& ex, const std::vector<int>& y, const MaskPattern& p) {
    LossSample s;
    s.clean = y;
    s.pattern = p;
    s.prompt_ids = ex.prompt_ids;
    s.enc = ex.enc;
    s.use_acoustic = ex.use_acoustic;
    return s;
}

double term_loss_value(const ModelState& state, const LossSample& s) {
    if (s.enc) return audio_sft_loss(state, s);
    if (!s.prompt_ids.empty()) return sft_loss(state, s);
    return pretrain_loss(state, s);
}

Var term_loss_graph(Graph& g, ModelState& state, const LossSample& s) {
    if (s.enc) return audio_sft_loss_g(g, state, s);
    if (!s.prompt_ids.empty()) return sft_loss_g(g, state, s);
    return pretrain_loss_g(g, state, s);
}

}  // namespace

double elbo_estimate(const ModelState& state, const PrefExample& ex, const std::vector<int>& y,
                     const std::vector<MaskPattern>& patterns) {
    MADI_CHECK(!patterns.empty(), "elbo needs at least one draw");
    double acc = 0.0;
    for (const MaskPattern& p : patterns) acc += -term_loss_value(state, term_sample(ex, y, p));
    return acc / static_cast<double>(patterns.size());
}

double log_ratio(const ModelState& policy, const ModelState& reference, const PrefExample& ex,
                 const std::vector<int>& y, const std::vector<MaskPattern>& patterns) {
    return elbo_estimate(policy, ex, y, patterns) - elbo_estimate(reference, ex, y, patterns);
}

double preference_loss(double margin, double beta) {
    const double z = -beta * margin;
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

VrpoPairResult vrpo_pair_grad(ModelState& policy, const ModelState& reference,
                              const PrefExample& ex, int n_samples, double beta, Rng& rng) {
    MADI_CHECK(!ex.chosen.empty() && ex.chosen.size() == ex.rejected.size(),
               "preference pair responses must be same length");
    const int len = static_cast<int>(ex.chosen.size());
    const auto pats_pos = shared_patterns(len, n_samples, rng);
    const auto pats_neg = shared_patterns(len, n_samples, rng);

    const double s_pos = log_ratio(policy, reference, ex, ex.chosen, pats_pos);
    const double s_neg = log_ratio(policy, reference, ex, ex.rejected, pats_neg);

    VrpoPairResult out;
    out.margin = s_pos - s_neg;
    out.loss = preference_loss(out.margin, beta);
    if (!std::isfinite(out.loss)) throw numeric_error("non-finite preference loss", "margin");

    // d loss / d (policy term k of y+) = +beta*sig/K, of y- = -beta*sig/K,
    // where sig = sigmoid(-beta * margin).
    const double sig = 1.0 / (1.0 + std::exp(beta * out.margin));
    const double seed_pos = beta * sig / static_cast<double>(n_samples);
    for (int k = 0; k < n_samples; ++k) {
        for (int sgn = 0; sgn < 2; ++sgn) {
            const auto& y = sgn == 0 ? ex.chosen : ex.rejected;
            const auto& p = sgn == 0 ? pats_pos[k] : pats_neg[k];
            if (p.masked_count() == 0) continue;  // constant-zero term
            Graph g(true);
            Var loss = term_loss_graph(g, policy, term_sample(ex, y, p));
            g.backward(loss, sgn == 0 ? seed_pos : -seed_pos);
            merge_add_grads(out.grads, g.take_param_grads());
        }
    }
    return out;
}

VarianceReport variance_experiment(const ModelState& policy, const ModelState& reference,
                                   const PrefExample& ex, int trials, int n_samples,
                                   uint64_t seed) {
    MADI_CHECK(trials > 1, "variance needs several trials");
    const int len = static_cast<int>(ex.chosen.size());
    std::vector<double> shared_scores, indep_scores;
    shared_scores.reserve(trials);
    indep_scores.reserve(trials);
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(derive_seed(seed, trial));
        {
            const auto pp = shared_patterns(len, n_samples, rng);
            const auto pn = shared_patterns(len, n_samples, rng);
            shared_scores.push_back(log_ratio(policy, reference, ex, ex.chosen, pp) -
                                    log_ratio(policy, reference, ex, ex.rejected, pn));
        }
        {
            const auto a = shared_patterns(len, n_samples, rng);
            const auto b = shared_patterns(len, n_samples, rng);
            const auto c = shared_patterns(len, n_samples, rng);
            const auto d = shared_patterns(len, n_samples, rng);
            const double sp = elbo_estimate(policy, ex, ex.chosen, a) -
                              elbo_estimate(reference, ex, ex.chosen, b);
            const double sn = elbo_estimate(policy, ex, ex.rejected, c) -
                              elbo_estimate(reference, ex, ex.rejected, d);
            indep_scores.push_back(sp - sn);
        }
    }
    auto variance = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= xs.size();
        double acc = 0.0;
        for (double x : xs) acc += (x - mean) * (x - mean);
        return acc / (xs.size() - 1);
    };
    VarianceReport r;
    r.var_shared = variance(shared_scores);
    r.var_independent = variance(indep_scores);
    r.ratio = r.var_shared / r.var_independent;
    r.trials = trials;
    return r;
}

}  // namespace madi
