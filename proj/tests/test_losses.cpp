#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "madi/losses.hpp"

using namespace madi;

namespace {

// A model whose logits are exactly uniform: every backbone tensor zeroed.
// With V symbols the per-token cross entropy is then exactly ln V.
ModelState uniform_model(int vocab, int length) {
    BackboneConfig bc;
    bc.layers = 1;
    bc.model_dim = 8;
    bc.heads = 2;
    bc.ffn_dim = 16;
    bc.vocab = vocab;
    bc.max_positions = length + 8;
    ModelState s;
    Rng rng(1);
    init_backbone(s, bc, rng);
    for (auto& [name, p] : s.params)
        if (name != "backbone.num_heads" && name != "backbone.pos_limit")
            for (double& x : p.value.v) x = 0.0;
    return s;
}

ModelState small_random_model(int vocab, uint64_t seed) {
    BackboneConfig bc;
    bc.layers = 1;
    bc.model_dim = 8;
    bc.heads = 2;
    bc.ffn_dim = 16;
    bc.vocab = vocab;
    bc.max_positions = 64;
    ModelState s;
    Rng rng(seed);
    init_backbone(s, bc, rng);
    // Sharpen the logits so the enumeration isn't trivially flat.
    for (double& x : s.at("backbone.head").value.v) x *= 20.0;
    return s;
}

MaskPattern fixed_pattern(std::vector<char> flags, double t) {
    MaskPattern p;
    p.t = t;
    p.flags = std::move(flags);
    return p;
}

// Exhaustive expectation of the masked loss at fixed t: sum over all 2^L
// flag vectors of t^m (1-t)^(L-m) * loss(pattern).
double enumerate_expectation(const std::function<double(const MaskPattern&)>& loss_of,
                             int length, double t) {
    double total = 0.0;
    for (int bits = 0; bits < (1 << length); ++bits) {
        MaskPattern p;
        p.t = t;
        p.flags.resize(length);
        int m = 0;
        for (int i = 0; i < length; ++i) {
            p.flags[i] = (bits >> i) & 1;
            m += p.flags[i];
        }
        const double prob = std::pow(t, m) * std::pow(1.0 - t, length - m);
        total += prob * loss_of(p);
    }
    return total;
}

}  // namespace

TEST_CASE("fully masked uniform model scores L * ln V") {
    // 4 tokens, 8 symbols, t = 1: the loss must be exactly 4 ln 8 = 8.3178.
    ModelState s = uniform_model(8, 4);
    LossSample ls;
    ls.clean = {1, 2, 3, 7};
    ls.pattern = fixed_pattern({1, 1, 1, 1}, 1.0);
    const double got = pretrain_loss(s, ls);
    CHECK(got == doctest::Approx(4.0 * std::log(8.0)).epsilon(1e-12));
    CHECK(got == doctest::Approx(8.31776616672).epsilon(1e-9));
}

TEST_CASE("only masked positions are scored, weighted 1/t") {
    ModelState s = uniform_model(8, 4);
    LossSample ls;
    ls.clean = {1, 2, 3, 7};
    ls.pattern = fixed_pattern({1, 1, 1, 0}, 0.5);
    CHECK(pretrain_loss(s, ls) == doctest::Approx(3.0 * std::log(8.0) / 0.5).epsilon(1e-12));

    ls.pattern = fixed_pattern({0, 0, 1, 0}, 0.25);
    CHECK(pretrain_loss(s, ls) == doctest::Approx(std::log(8.0) / 0.25).epsilon(1e-12));
}

TEST_CASE("a draw that masks nothing contributes an exact zero") {
    ModelState s = small_random_model(4, 5);
    set_stage_freezing(s, 0);
    LossSample ls;
    ls.clean = {1, 2, 3};
    ls.pattern = fixed_pattern({0, 0, 0}, 0.4);
    auto [value, grads] = evaluate_and_grad([&](Graph& g) { return pretrain_loss_g(g, s, ls); });
    CHECK(value == 0.0);
    double gnorm = 0.0;
    for (const auto& [name, g] : grads)
        for (double x : g.v) gnorm += x * x;
    CHECK(gnorm == 0.0);
}

TEST_CASE("prompt tokens are visible and unscored") {
    // With a uniform model the prompted loss depends only on the masked
    // response positions, not on the prompt length or content.
    ModelState s = uniform_model(8, 12);
    LossSample ls;
    ls.prompt_ids = {5, 6, 1};
    ls.clean = {2, 3};
    ls.pattern = fixed_pattern({1, 1}, 1.0);
    CHECK(sft_loss(s, ls) == doctest::Approx(2.0 * std::log(8.0)).epsilon(1e-12));
    ls.prompt_ids = {7};
    CHECK(sft_loss(s, ls) == doctest::Approx(2.0 * std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("monte carlo matches exhaustive enumeration at fixed t") {
    // Criterion: L <= 6, V <= 4, t in {0.25, 0.5, 0.75}; 10^4 draws land
    // within 3 estimated standard errors of the exact expectation.
    ModelState s = small_random_model(4, 7);
    const std::vector<int> clean = {1, 2, 3, 1, 0 + 2, 3};

    for (const double t : {0.25, 0.5, 0.75}) {
        auto loss_of = [&](const MaskPattern& p) {
            LossSample ls;
            ls.clean = clean;
            ls.pattern = p;
            return pretrain_loss(s, ls);
        };
        const double exact = enumerate_expectation(loss_of, 6, t);

        Rng rng(static_cast<uint64_t>(t * 1000));
        const int n = 10000;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = loss_of(pattern_at(6, t, rng));
            sum += v;
            sumsq += v * v;
        }
        const double mean = sum / n;
        const double var = (sumsq - n * mean * mean) / (n - 1);
        const double se = std::sqrt(var / n);
        INFO("t=", t, " exact=", exact, " mc=", mean, " se=", se);
        CHECK(std::abs(mean - exact) <= 3.0 * se);
    }
}

TEST_CASE("prompted monte carlo is unbiased too") {
    ModelState s = small_random_model(4, 8);
    const std::vector<int> clean = {2, 1, 3, 2};
    const std::vector<int> prompt = {1, 3};

    auto loss_of = [&](const MaskPattern& p) {
        LossSample ls;
        ls.prompt_ids = prompt;
        ls.clean = clean;
        ls.pattern = p;
        return sft_loss(s, ls);
    };
    const double t = 0.5;
    const double exact = enumerate_expectation(loss_of, 4, t);
    Rng rng(99);
    const int n = 10000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = loss_of(pattern_at(4, t, rng));
        sum += v;
        sumsq += v * v;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq - n * mean * mean) / (n - 1) / n);
    CHECK(std::abs(mean - exact) <= 3.0 * se);
}

TEST_CASE("audio condition changes the loss and respects the ablation flag") {
    ModelState s = madi::testing::tiny_model(11);
    Rng rng(3);
    const audio::AudioClip clip = audio::synth_clip({0, 5, 9}, 2, rng);
    const audio::EncoderStates enc = encode_frozen(s, clip);

    LossSample ls;
    ls.prompt_ids = Vocab::builtin().encode("what is the emotion of the speaker ?");
    ls.clean = pad_response(Vocab::builtin().encode("the speaker sounds sad ."));
    ls.pattern = fixed_pattern(std::vector<char>(kResponseLen, 1), 1.0);
    ls.enc = &enc;

    ls.use_acoustic = true;
    const double with_acoustic = audio_sft_loss(s, ls);
    ls.use_acoustic = false;
    const double without = audio_sft_loss(s, ls);
    CHECK(with_acoustic != doctest::Approx(without).epsilon(1e-15));
    CHECK(std::isfinite(with_acoustic));
    CHECK(std::isfinite(without));
}

TEST_CASE("losses refuse malformed samples") {
    ModelState s = madi::testing::tiny_model(12);
    LossSample ls;
    ls.clean = {1, 2};
    ls.pattern = fixed_pattern({1}, 0.5);  // wrong flag length
    CHECK_THROWS_AS(pretrain_loss(s, ls), contract_error);

    LossSample with_prompt;
    with_prompt.clean = {1, 2};
    with_prompt.prompt_ids = {3};
    with_prompt.pattern = fixed_pattern({1, 1}, 0.5);
    CHECK_THROWS_AS(pretrain_loss(s, with_prompt), contract_error);  // prompt not allowed

    LossSample no_enc;
    no_enc.clean = {1, 2};
    no_enc.prompt_ids = {3};
    no_enc.pattern = fixed_pattern({1, 1}, 0.5);
    CHECK_THROWS_AS(audio_sft_loss(s, no_enc), contract_error);  // needs encoder states
}
