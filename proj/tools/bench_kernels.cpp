// Times every parallel kernel against its serial reference and checks the
// outputs are bit-identical (same per-element accumulation order).
#include <cstdio>
#include <cstring>
#include <vector>

#include "madi/kernels.hpp"
#include "madi/tensor.hpp"

using namespace madi;
using namespace madi::kernels;

namespace {

Tensor randn(std::initializer_list<int> dims, Rng& rng) {
    Tensor t = Tensor::zeros(dims);
    for (double& x : t.v) x = rng.gaussian();
    return t;
}

struct Case {
    std::string name;
    double t_serial = 0.0, t_parallel = 0.0;
    bool identical = false;
};

}  // namespace

int main(int argc, char** argv) {
    const int n = argc > 1 ? std::atoi(argv[1]) : 256;
    const int reps = argc > 2 ? std::atoi(argv[2]) : 5;
    Rng rng(42);

    const Tensor a = randn({n, n}, rng);
    const Tensor b = randn({n, n}, rng);
    const Tensor gain = randn({1, n}, rng);
    const Tensor bias = randn({1, n}, rng);
    const int frames = 4 * n, cin = 32, cout = 64, k = 3;
    const Tensor x = randn({frames, cin}, rng);
    const Tensor w = randn({k, cin, cout}, rng);
    const Tensor cb = randn({cout}, rng);

    std::vector<Case> cases;
    auto add = [&](const char* name, size_t out_elems, auto&& fill) {
        Case c;
        c.name = name;
        Tensor out_s = Tensor::zeros({static_cast<int>(out_elems)});
        Tensor out_p = out_s;
        {
            BackendGuard g(Backend::serial);
            Timer t;
            for (int r = 0; r < reps; ++r) fill(out_s.v.data());
            c.t_serial = t.seconds() / reps;
        }
        {
            BackendGuard g(Backend::openmp);
            Timer t;
            for (int r = 0; r < reps; ++r) fill(out_p.v.data());
            c.t_parallel = t.seconds() / reps;
        }
        c.identical =
            std::memcmp(out_s.v.data(), out_p.v.data(), out_elems * sizeof(double)) == 0;
        cases.push_back(std::move(c));
    };

    const size_t nn = static_cast<size_t>(n) * n;
    add("mm_nn", nn, [&](double* out) { mm_nn(a.v.data(), b.v.data(), out, n, n, n, false); });
    add("mm_nt", nn, [&](double* out) { mm_nt(a.v.data(), b.v.data(), out, n, n, n, false); });
    add("mm_tn", nn, [&](double* out) { mm_tn(a.v.data(), b.v.data(), out, n, n, n, false); });
    add("softmax_rows", nn, [&](double* out) { softmax_rows(a.v.data(), out, n, n); });
    add("log_softmax_rows", nn,
        [&](double* out) { log_softmax_rows(a.v.data(), out, n, n); });
    add("gelu", nn, [&](double* out) { gelu(a.v.data(), out, nn); });

    Tensor xhat = Tensor::zeros({n, n}), rstd = Tensor::zeros({n});
    add("layer_norm_rows", nn, [&](double* out) {
        layer_norm_rows(a.v.data(), gain.v.data(), bias.v.data(), out, xhat.v.data(),
                        rstd.v.data(), n, n, 1e-5);
    });

    const int out_frames = conv1d_out_frames(frames, k, 2, 1);
    add("conv1d(k3,s2)", static_cast<size_t>(out_frames) * cout, [&](double* out) {
        conv1d(x.v.data(), w.v.data(), cb.v.data(), out, frames, cin, cout, k, 2, 1);
    });

    std::printf("%-18s %12s %12s %9s  %s\n", "kernel", "serial (ms)", "openmp (ms)", "speedup",
                "identical");
    bool all_same = true;
    for (const Case& c : cases) {
        all_same = all_same && c.identical;
        std::printf("%-18s %12.3f %12.3f %8.2fx  %s\n", c.name.c_str(), 1e3 * c.t_serial,
                    1e3 * c.t_parallel, c.t_serial / c.t_parallel, c.identical ? "yes" : "NO");
    }
    if (!all_same) {
        std::printf("serial/parallel outputs differ\n");
        return 1;
    }
    return 0;
}
