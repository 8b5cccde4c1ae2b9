#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "helpers.hpp"

using namespace madi;

namespace {

std::vector<int> some_tokens() {
    const Vocab& v = Vocab::builtin();
    return v.encode("river stone maple cloud");
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.dims == b.dims &&
           std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("config introspection recovers what init wrote") {
    BackboneConfig bc;
    bc.layers = 3;
    bc.model_dim = 24;
    bc.heads = 3;
    bc.ffn_dim = 40;
    bc.vocab = Vocab::builtin().size();
    bc.max_positions = 96;
    ModelState s;
    Rng rng(1);
    init_backbone(s, bc, rng);
    const BackboneConfig got = backbone_config_of(s);
    CHECK(got.layers == bc.layers);
    CHECK(got.model_dim == bc.model_dim);
    CHECK(got.heads == bc.heads);
    CHECK(got.ffn_dim == bc.ffn_dim);
    CHECK(got.vocab == bc.vocab);
    CHECK(got.max_positions == bc.max_positions);
}

TEST_CASE("logits cover every token position over the full vocabulary") {
    ModelState s = madi::testing::tiny_model(2);
    const std::vector<int> toks = some_tokens();
    const Tensor logits = predict_logits(s, toks, Tensor{});
    CHECK(logits.rows() == static_cast<int>(toks.size()));
    CHECK(logits.cols() == Vocab::builtin().size());
    CHECK(all_finite(logits));

    // Condition rows shift positions: output stays token-rows-only.
    Tensor cond = Tensor::zeros({5, madi::testing::tiny_backbone_config().model_dim});
    for (double& x : cond.v) x = 0.01;
    const Tensor logits2 = predict_logits(s, toks, cond);
    CHECK(logits2.rows() == static_cast<int>(toks.size()));
    CHECK_FALSE(bits_equal(logits, logits2));  // the condition must matter
}

TEST_CASE("the model is bidirectional: late tokens influence early logits") {
    ModelState s = madi::testing::tiny_model(3);
    std::vector<int> a = some_tokens(), b = a;
    b.back() = Vocab::builtin().encode("frost")[0];
    const Tensor la = predict_logits(s, a, Tensor{});
    const Tensor lb = predict_logits(s, b, Tensor{});
    double delta = 0.0;
    for (int c = 0; c < la.cols(); ++c) delta += std::abs(la.at(0, c) - lb.at(0, c));
    CHECK(delta > 0.0);
}

TEST_CASE("attaching low-rank deltas is a bit-exact no-op until trained") {
    ModelState s = madi::testing::tiny_model(4);
    const std::vector<int> toks = some_tokens();
    const Tensor before = predict_logits(s, toks, Tensor{});

    Rng rng(9);
    attach_low_rank(s, 4, 8.0, rng);
    CHECK_FALSE(s.lora.empty());
    const Tensor after = predict_logits(s, toks, Tensor{});
    CHECK(bits_equal(before, after));

    // Every attention projection of every layer carries a delta pair.
    const BackboneConfig bc = backbone_config_of(s);
    CHECK(low_rank_targets(s).size() == static_cast<size_t>(4 * bc.layers));
    for (const std::string& t : low_rank_targets(s)) {
        CHECK(s.has(t + ".lora_a"));
        CHECK(s.has(t + ".lora_b"));
        CHECK(s.at(t + ".lora_a").value.dims[0] == 4);
    }

    // Perturbing one B factor must change the output (the delta is live).
    s.at(low_rank_targets(s)[0] + ".lora_b").value.v[0] = 0.5;
    CHECK_FALSE(bits_equal(before, predict_logits(s, toks, Tensor{})));

    detach_low_rank(s);
    CHECK(s.lora.empty());
    CHECK(bits_equal(before, predict_logits(s, toks, Tensor{})));
    CHECK_FALSE(s.has(low_rank_targets(s).empty() ? "x" : low_rank_targets(s)[0] + ".lora_a"));
}

TEST_CASE("double attach is rejected") {
    ModelState s = madi::testing::tiny_model(5);
    Rng rng(1);
    attach_low_rank(s, 2, 4.0, rng);
    CHECK_THROWS_AS(attach_low_rank(s, 2, 4.0, rng), contract_error);
}

TEST_CASE("stage freezing exposes exactly the advertised trainable sets") {
    ModelState s = madi::testing::tiny_model(6);
    Rng rng(2);
    attach_low_rank(s, 2, 4.0, rng);

    auto trainable_prefixes = [&] {
        std::vector<std::string> names;
        for (const auto& [name, p] : s.params)
            if (!p.frozen) names.push_back(name);
        return names;
    };

    set_stage_freezing(s, 0);
    for (const std::string& n : trainable_prefixes()) {
        CHECK(n.rfind("backbone.", 0) == 0);
        CHECK(n.find(".lora_") == std::string::npos);
        CHECK(n.find("num_heads") == std::string::npos);
    }

    set_stage_freezing(s, 1);
    for (const std::string& n : trainable_prefixes())
        CHECK(n.rfind("semantic_adapter.", 0) == 0);

    set_stage_freezing(s, 2);
    bool saw_acoustic = false;
    for (const std::string& n : trainable_prefixes()) {
        const bool sem = n.rfind("semantic_adapter.", 0) == 0;
        const bool aco = n.rfind("acoustic_adapter.", 0) == 0;
        saw_acoustic = saw_acoustic || aco;
        CHECK((sem || aco));
        CHECK(n.find("num_heads") == std::string::npos);
    }
    CHECK(saw_acoustic);

    set_stage_freezing(s, 3);
    bool saw_lora = false;
    for (const std::string& n : trainable_prefixes()) {
        const bool adapter = n.rfind("semantic_adapter.", 0) == 0 ||
                             n.rfind("acoustic_adapter.", 0) == 0;
        const bool lora = n.find(".lora_") != std::string::npos;
        saw_lora = saw_lora || lora;
        CHECK((adapter || lora));
    }
    CHECK(saw_lora);

    // The encoder is frozen at every stage.
    for (int stage = 0; stage <= 4; ++stage) {
        set_stage_freezing(s, stage);
        for (const auto& [name, p] : s.params)
            if (name.rfind("encoder.", 0) == 0) CHECK(p.frozen);
    }
}

TEST_CASE("attention head count must divide the width") {
    // init_backbone with heads not dividing model_dim is a caller bug.
    BackboneConfig bc = madi::testing::tiny_backbone_config();
    bc.heads = 3;  // model_dim 8
    ModelState s;
    Rng rng(3);
    CHECK_THROWS_AS(init_backbone(s, bc, rng), contract_error);
}
