#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "helpers.hpp"
#include "madi/masking.hpp"

using namespace madi;
using namespace madi::audio;

namespace {

bool bits_equal(const Tensor& a, const Tensor& b) {
    return a.dims == b.dims &&
           std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

std::vector<int> random_content(int n, Rng& rng) {
    std::vector<int> c(n);
    for (int& x : c) x = rng.uniform_int(16);
    return c;
}

// Mean intermediate/final vector of a clip, one row per clip.
Tensor clip_means(const ModelState& state, int clips, uint64_t seed, bool intermediate,
                  std::vector<int>* labels) {
    Rng rng(seed);
    Tensor rows = Tensor::zeros({clips, kEncoderDim});
    for (int i = 0; i < clips; ++i) {
        const int attr = rng.uniform_int(4);
        const AudioClip clip = synth_clip(random_content(6, rng), attr, rng);
        const EncoderStates enc = encode_frozen(state, clip);
        const Tensor& src = intermediate ? enc.intermediate : enc.final;
        for (int f = 0; f < src.rows(); ++f)
            for (int c = 0; c < kEncoderDim; ++c) rows.at(i, c) += src.at(f, c) / src.rows();
        labels->push_back(attr);
    }
    return rows;
}

// Full-batch softmax regression; returns accuracy on the fitted set — a pure
// linear-separability measure.
double probe_accuracy(const Tensor& x, const std::vector<int>& y, int classes, int iters,
                      double lr) {
    const int n = x.rows(), d = x.cols();
    std::vector<double> w(static_cast<size_t>(classes) * d, 0.0), b(classes, 0.0);
    std::vector<double> logits(classes), p(classes);
    std::vector<double> gw(w.size()), gb(classes);
    for (int it = 0; it < iters; ++it) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            double mx = -1e300;
            for (int k = 0; k < classes; ++k) {
                logits[k] = b[k];
                for (int j = 0; j < d; ++j) logits[k] += w[k * d + j] * x.at(i, j);
                mx = std::max(mx, logits[k]);
            }
            double z = 0.0;
            for (int k = 0; k < classes; ++k) z += (p[k] = std::exp(logits[k] - mx));
            for (int k = 0; k < classes; ++k) {
                const double g = p[k] / z - (k == y[i] ? 1.0 : 0.0);
                gb[k] += g / n;
                for (int j = 0; j < d; ++j) gw[k * d + j] += g * x.at(i, j) / n;
            }
        }
        for (size_t j = 0; j < w.size(); ++j) w[j] -= lr * gw[j];
        for (int k = 0; k < classes; ++k) b[k] -= lr * gb[k];
    }
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double bv = -1e300;
        for (int k = 0; k < classes; ++k) {
            double s = b[k];
            for (int j = 0; j < d; ++j) s += w[k * d + j] * x.at(i, j);
            if (s > bv) {
                bv = s;
                best = k;
            }
        }
        hits += best == y[i];
    }
    return static_cast<double>(hits) / n;
}

}  // namespace

TEST_CASE("clips are deterministic and sized frames_per_token * tokens") {
    Rng r1(7), r2(7);
    const AudioClip a = synth_clip({3, 1, 4, 1, 5, 9, 2, 6, 5, 3}, 2, r1);
    const AudioClip b = synth_clip({3, 1, 4, 1, 5, 9, 2, 6, 5, 3}, 2, r2);
    CHECK(a.frames.rows() == 40);
    CHECK(a.frames.cols() == kFeatureDim);
    CHECK(bits_equal(a.frames, b.frames));

    Rng r3(8);
    const AudioClip c = synth_clip({3, 1, 4}, 2, r3);
    CHECK(c.frames.rows() == 12);

    CHECK_THROWS_AS(synth_clip({16}, 0, r3), contract_error);  // unknown token
    CHECK_THROWS_AS(synth_clip({}, 0, r3), contract_error);    // empty transcript
}

TEST_CASE("nearest-prototype decoding recovers at least 99 percent of tokens") {
    const Tensor& protos = content_prototypes();
    Rng rng(1234);
    int total = 0, hits = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::vector<int> content = random_content(8, rng);
        const int attr = rng.uniform_int(4);
        const AudioClip clip = synth_clip(content, attr, rng);
        for (size_t tok = 0; tok < content.size(); ++tok) {
            // average the token's frames, then nearest prototype on the
            // content coordinates
            std::vector<double> mean(kContentCoords, 0.0);
            for (int f = 0; f < kFramesPerToken; ++f)
                for (int c = 0; c < kContentCoords; ++c)
                    mean[c] += clip.frames.at(static_cast<int>(tok) * kFramesPerToken + f, c) /
                               kFramesPerToken;
            int best = -1;
            double bd = 1e300;
            for (int pr = 0; pr < protos.rows(); ++pr) {
                double d2 = 0.0;
                for (int c = 0; c < kContentCoords; ++c) {
                    const double d = mean[c] - protos.at(pr, c);
                    d2 += d * d;
                }
                if (d2 < bd) {
                    bd = d2;
                    best = pr;
                }
            }
            ++total;
            hits += best == content[tok];
        }
    }
    CHECK(static_cast<double>(hits) / total >= 0.99);
}

TEST_CASE("the encoder is identical in every state and preserves frame count") {
    ModelState s1 = madi::testing::tiny_model(1);
    ModelState s2 = madi::testing::tiny_model(99);  // different model seed
    for (const auto& [name, p] : s1.params)
        if (name.rfind("encoder.", 0) == 0) {
            CHECK(p.frozen);
            CHECK(bits_equal(p.value, s2.at(name).value));
        }

    Rng rng(5);
    const AudioClip clip = synth_clip(random_content(5, rng), 3, rng);
    const EncoderStates e1 = encode_frozen(s1, clip);
    const EncoderStates e2 = encode_frozen(s2, clip);
    CHECK(e1.intermediate.rows() == clip.frames.rows());
    CHECK(e1.final.rows() == clip.frames.rows());
    CHECK(bits_equal(e1.intermediate, e2.intermediate));
    CHECK(bits_equal(e1.final, e2.final));
}

TEST_CASE("attribute is linearly decodable from intermediate states only") {
    ModelState state = madi::testing::tiny_model(2);
    std::vector<int> y_int, y_fin;
    const Tensor xi = clip_means(state, 500, 42, true, &y_int);
    const Tensor xf = clip_means(state, 500, 42, false, &y_fin);

    const double acc_intermediate = probe_accuracy(xi, y_int, 4, 400, 0.5);
    const double acc_final = probe_accuracy(xf, y_fin, 4, 400, 0.5);
    CHECK(acc_intermediate >= 0.95);
    // The final projection zeroes the attribute pathway; the probe should be
    // near chance (0.25) and nowhere near the intermediate accuracy.
    CHECK(acc_final <= 0.5);
}

TEST_CASE("semantic adapter halves the frame count twice, with padding") {
    ModelState state = madi::testing::tiny_model(3);
    const int d = madi::testing::tiny_backbone_config().model_dim;
    auto rows_for = [&](int frames) {
        Rng rng(frames);
        Tensor states = Tensor::zeros({frames, kEncoderDim});
        for (double& x : states.v) x = rng.gaussian();
        const Tensor out = semantic_adapt(state, states);
        CHECK(out.cols() == d);
        return out.rows();
    };
    CHECK(rows_for(100) == 25);
    CHECK(rows_for(4) == 1);
    CHECK(rows_for(10) == 3);  // padded to 12
    CHECK(rows_for(1) == 1);
}

TEST_CASE("acoustic adapter always emits exactly 64 rows") {
    ModelState state = madi::testing::tiny_model(4);
    const int d = madi::testing::tiny_backbone_config().model_dim;
    for (const int frames : {1, 7, 40, 313}) {
        Rng rng(frames);
        Tensor states = Tensor::zeros({frames, kEncoderDim});
        for (double& x : states.v) x = rng.gaussian();
        const Tensor out = acoustic_adapt(state, states);
        CHECK(out.rows() == kAcousticRows);
        CHECK(out.cols() == d);
        CHECK(all_finite(out));
    }

    // Zero frames in, finite out (query-only pathway).
    const Tensor zero_out = acoustic_adapt(state, Tensor::zeros({3, kEncoderDim}));
    CHECK(all_finite(zero_out));

    // Content-addressed: permuting frames changes the summary.
    Rng rng(11);
    Tensor states = Tensor::zeros({6, kEncoderDim});
    for (double& x : states.v) x = rng.gaussian();
    Tensor permuted = states;
    for (int c = 0; c < kEncoderDim; ++c) {
        std::swap(permuted.at(0, c), permuted.at(5, c));
        std::swap(permuted.at(2, c), permuted.at(3, c));
    }
    CHECK_FALSE(bits_equal(acoustic_adapt(state, states), acoustic_adapt(state, permuted)));
}

TEST_CASE("spliced layout is [acoustic][semantic][prompt] or [semantic][prompt]") {
    ModelState state = madi::testing::tiny_model(5);
    Rng rng(6);
    const AudioClip clip = synth_clip(random_content(10, rng), 1, rng);  // F = 40
    const std::vector<int> prompt = Vocab::builtin().encode("please transcribe the audio");

    const SplicedInput with = splice_prompt(state, clip, prompt, true);
    CHECK(with.has_acoustic);
    CHECK(with.cond_rows.rows() == kAcousticRows + 10);
    CHECK(with.prompt_ids == prompt);

    const SplicedInput without = splice_prompt(state, clip, prompt, false);
    CHECK_FALSE(without.has_acoustic);
    CHECK(without.cond_rows.rows() == 10);

    // The semantic block is identical in both layouts (same adapter path).
    const int d = without.cond_rows.cols();
    Tensor sem_with = Tensor::zeros({10, d});
    std::memcpy(sem_with.v.data(), with.cond_rows.v.data() + kAcousticRows * d,
                sizeof(double) * 10 * d);
    CHECK(bits_equal(sem_with, without.cond_rows));
}

TEST_CASE("corruption never touches condition or prompt positions") {
    // The response region is the only masked thing by construction: patterns
    // are drawn over the response length alone. Check the geometry holds.
    Rng rng(13);
    for (int trial = 0; trial < 10000; ++trial) {
        const MaskPattern p = draw_pattern(kResponseLen, rng);
        CHECK(static_cast<int>(p.flags.size()) == kResponseLen);
    }
}

TEST_CASE("feature files round-trip and reject corruption") {
    Rng rng(17);
    Tensor frames = Tensor::zeros({9, kFeatureDim});
    for (double& x : frames.v) x = rng.gaussian();
    const std::string path = "/tmp/madi_feat_test.dfa2";
    write_features(path, frames);
    const Tensor back = read_features(path);
    CHECK(back.rows() == 9);
    CHECK(back.cols() == kFeatureDim);
    // f32 storage: equal after one round-trip through float precision.
    for (size_t i = 0; i < frames.v.size(); ++i)
        CHECK(back.v[i] == static_cast<double>(static_cast<float>(frames.v[i])));
    // A second round-trip is byte-stable.
    write_features(path, back);
    const Tensor again = read_features(path);
    CHECK(bits_equal(back, again));

    // Bad magic.
    {
        FILE* f = std::fopen(path.c_str(), "r+b");
        std::fputs("XXXX", f);
        std::fclose(f);
        CHECK_THROWS_AS(read_features(path), io_error);
    }
    // Truncation.
    write_features(path, frames);
    {
        FILE* f = std::fopen(path.c_str(), "rb");
        std::fseek(f, 0, SEEK_END);
        const long sz = std::ftell(f);
        std::fclose(f);
        CHECK(truncate(path.c_str(), sz - 7) == 0);
        CHECK_THROWS_AS(read_features(path), io_error);
    }
    std::remove(path.c_str());
}
