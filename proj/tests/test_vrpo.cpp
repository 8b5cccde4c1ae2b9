#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "madi/vrpo.hpp"

using namespace madi;

namespace {

struct Fixture {
    ModelState policy;
    ModelState reference;
    audio::AudioClip clip;
    audio::EncoderStates enc;
    PrefExample ex;

    explicit Fixture(uint64_t seed, double perturb = 0.0) {
        policy = madi::testing::tiny_model(seed);
        set_stage_freezing(policy, 0);
        reference = policy;
        if (perturb > 0.0) {
            Rng rng(derive_seed(seed, 0xfeed));
            perturb_params(policy, perturb, rng);
        }
        Rng crng(derive_seed(seed, 0xc0));
        clip = audio::synth_clip({4, 9, 2, 14}, 1, crng);
        enc = encode_frozen(policy, clip);
        const Vocab& voc = Vocab::builtin();
        ex.prompt_ids = voc.encode("what is the emotion of the speaker ?");
        ex.enc = &enc;
        ex.use_acoustic = true;
        ex.chosen = pad_response(voc.encode("the speaker sounds happy ."));
        ex.rejected = pad_response(voc.encode("the speaker sounds angry ."));
    }
};

}  // namespace

TEST_CASE("preference loss hits its closed-form anchors") {
    CHECK(preference_loss(0.0, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(preference_loss(0.0, 0.1) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
    // softplus(-1): beta 0.1, margin 10.
    CHECK(preference_loss(10.0, 0.1) ==
          doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-12));
    CHECK(preference_loss(10.0, 0.1) == doctest::Approx(0.3132616875182228).epsilon(1e-12));
    // Monotone decreasing in the margin; vanishes for huge margins.
    CHECK(preference_loss(-2.0, 0.1) > preference_loss(0.0, 0.1));
    CHECK(preference_loss(1000.0, 0.1) < 1e-8);
    CHECK(preference_loss(-1000.0, 0.1) == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("identical policy and reference give a log-ratio of exactly zero") {
    Fixture f(21);
    Rng rng(3);
    const auto pats = shared_patterns(kResponseLen, 4, rng);
    const double r = log_ratio(f.policy, f.reference, f.ex, f.ex.chosen, pats);
    CHECK(r == 0.0);  // bitwise: the two scorers run the identical computation
}

TEST_CASE("elbo estimate is the mean of negated term losses") {
    Fixture f(22);
    Rng rng(4);
    const auto one = shared_patterns(kResponseLen, 1, rng);
    LossSample s;
    s.prompt_ids = f.ex.prompt_ids;
    s.clean = f.ex.chosen;
    s.pattern = one[0];
    s.enc = &f.enc;
    s.use_acoustic = true;
    const double direct = -audio_sft_loss(f.policy, s);
    CHECK(elbo_estimate(f.policy, f.ex, f.ex.chosen, one) ==
          doctest::Approx(direct).epsilon(1e-15));

    // And with several draws it averages them.
    Rng rng2(4);
    const auto four = shared_patterns(kResponseLen, 4, rng2);
    double mean = 0.0;
    for (const MaskPattern& p : four) {
        s.pattern = p;
        mean += -audio_sft_loss(f.policy, s) / 4.0;
    }
    CHECK(elbo_estimate(f.policy, f.ex, f.ex.chosen, four) ==
          doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("pair update reports loss consistent with its own margin") {
    Fixture f(23, 1e-2);
    Rng rng(7);
    const VrpoPairResult res = vrpo_pair_grad(f.policy, f.reference, f.ex, 4, 0.1, rng);
    CHECK(res.loss == doctest::Approx(preference_loss(res.margin, 0.1)).epsilon(1e-12));
    CHECK(!res.grads.empty());
    double gnorm = 0.0;
    for (const auto& [name, g] : res.grads) {
        CHECK(!f.policy.at(name).frozen);
        for (double x : g.v) gnorm += x * x;
    }
    CHECK(gnorm > 0.0);

    // Seeded replay is bit-identical.
    Rng rng2(7);
    const VrpoPairResult res2 = vrpo_pair_grad(f.policy, f.reference, f.ex, 4, 0.1, rng2);
    CHECK(res.loss == res2.loss);
    CHECK(res.margin == res2.margin);
    for (const auto& [name, g] : res.grads) {
        const Tensor& h = res2.grads.at(name);
        for (size_t i = 0; i < g.v.size(); ++i) CHECK(g.v[i] == h.v[i]);
    }
}

TEST_CASE("shared corruption draws shrink the estimator variance") {
    Fixture f(24, 1e-2);
    const VarianceReport rep =
        variance_experiment(f.policy, f.reference, f.ex, 120, 4, 99);
    CHECK(rep.trials == 120);
    CHECK(rep.var_shared >= 0.0);
    CHECK(rep.var_independent > 0.0);
    CHECK(rep.ratio <= 0.9);
}

TEST_CASE("with policy equal to reference the shared estimator is exactly constant") {
    Fixture f(25);  // no perturbation
    const VarianceReport rep = variance_experiment(f.policy, f.reference, f.ex, 50, 2, 5);
    // Every shared-draw margin is exactly 0, so the variance is exactly 0.
    CHECK(rep.var_shared == 0.0);
    CHECK(rep.var_independent > 0.0);
}
