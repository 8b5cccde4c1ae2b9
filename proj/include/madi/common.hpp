#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace madi {

// Thrown when a caller violates a documented precondition (bad shapes,
// illegal stage order, malformed files, ...).
struct contract_error : std::runtime_error {
    explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when training math produces a non-finite value. Carries the name of
// the first offending tensor so the failure is actionable.
struct numeric_error : std::runtime_error {
    std::string tensor_name;
    numeric_error(const std::string& msg, std::string name)
        : std::runtime_error(msg + " (tensor: " + name + ")"), tensor_name(std::move(name)) {}
};

struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

#define MADI_CHECK(cond, msg)                                \
    do {                                                     \
        if (!(cond)) throw ::madi::contract_error(msg);      \
    } while (0)

inline uint64_t splitmix64(uint64_t& s) {
    s += 0x9e3779b97f4a7c15ull;
    uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic PRNG. We deliberately avoid <random> distributions: their
// output differs across standard-library versions, and replay must be exact.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1] — masking draws must never produce t == 0.
    double uniform_open_closed() { return 1.0 - uniform(); }

    // [0, n)
    int uniform_int(int n) {
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open_closed();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Independent child stream; mixing constants keep distinct tags far apart.
    Rng fork(uint64_t tag) const {
        uint64_t s = state_ ^ (0x632be59bd9b4e019ull + tag * 0x9e3779b97f4a7c15ull);
        splitmix64(s);
        return Rng(s);
    }

  private:
    explicit Rng(uint64_t raw, bool) : state_(raw) {}
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stable seed derivation for named sub-streams (per record, per epoch, ...).
inline uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    uint64_t s = base;
    splitmix64(s);
    s ^= a * 0xff51afd7ed558ccdull;
    splitmix64(s);
    s ^= b * 0xc4ceb9fe1a85ec53ull;
    splitmix64(s);
    s ^= c * 0x2545f4914f6cdd1dull;
    return splitmix64(s);
}

class Timer {
  public:
    Timer() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        auto dt = std::chrono::steady_clock::now() - t0_;
        return std::chrono::duration<double>(dt).count();
    }

  private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace madi
