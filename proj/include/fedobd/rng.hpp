#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace fedobd {

// splitmix64 finalizer, used to spread seed material.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Every random decision in a run draws from a seed derived here, making the
// whole experiment a pure function of the master seed. The rule: fold
// (purpose, round, client) into the master seed one mix64 step at a time.
enum class SeedPurpose : std::uint64_t {
    dataset = 1,
    partition = 2,
    model_init = 3,
    client_sampling = 4,
    shuffle = 5,
    sq_stream = 6,
};

inline std::uint64_t derive_seed(std::uint64_t master, SeedPurpose purpose,
                                 std::uint64_t round = 0, std::uint64_t client = 0) {
    std::uint64_t x = mix64(master);
    x = mix64(x ^ static_cast<std::uint64_t>(purpose));
    x = mix64(x ^ round);
    x = mix64(x ^ client);
    return x;
}

// mt19937_64 with hand-rolled draws. <random> distributions are not pinned by
// the standard, so rolling our own keeps streams identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53 mantissa bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller, second value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // uniform integer in [0, n); multiply-shift, bias is ~n/2^64
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace fedobd
