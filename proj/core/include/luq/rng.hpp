#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace luq {

// Self-contained PRNG (xoshiro-style splitmix stream) so that sampling,
// shuffling and gaussian draws are bit-stable across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // warm up so nearby seeds decorrelate
        next();
        next();
    }

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [0, n)
    uint64_t bounded(uint64_t n) { return next() % n; }

    // standard normal via Box-Muller; draws are consumed in pairs
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-15) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * M_PI * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // n distinct indices from [0, pool); if pool < n, falls back to
    // sampling with replacement.
    std::vector<size_t> sample_indices(size_t pool, size_t n) {
        std::vector<size_t> out;
        out.reserve(n);
        if (pool >= n) {
            std::vector<size_t> idx(pool);
            for (size_t i = 0; i < pool; ++i) idx[i] = i;
            shuffle(idx);
            out.assign(idx.begin(), idx.begin() + static_cast<long>(n));
        } else {
            for (size_t i = 0; i < n; ++i) out.push_back(bounded(pool));
        }
        return out;
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derive an independent stream from (seed, tag), e.g. per layer or per pass.
inline uint64_t derive_seed(uint64_t seed, uint64_t tag) {
    uint64_t z = seed ^ (tag * 0xD6E8FEB86659FD93ULL + 0xA5A5A5A5A5A5A5A5ULL);
    z = (z ^ (z >> 32)) * 0xD6E8FEB86659FD93ULL;
    return z ^ (z >> 32);
}

}  // namespace luq
