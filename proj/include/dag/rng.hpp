#pragma once

#include <cmath>
#include <cstdint>

namespace dag {

// Deterministic generator (splitmix64 core, Box-Muller normals). Every run owns
// one root stream; per-sample work derives substreams with substream(i) so the
// draw order is independent of scheduling. The implementation is self-contained
// so results are identical across platforms for one build.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // polar Box-Muller; consumes a variable number of uniforms but the
        // sequence is fully determined by the stream position
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        double m = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = static_cast<float>(v * m);
        have_spare_ = true;
        return static_cast<float>(u * m);
    }

    // independent stream for sample/trajectory `idx`
    Rng substream(uint64_t idx) const {
        uint64_t h = state_;
        h ^= (idx + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
        h *= 0xff51afd7ed558ccdull;
        h ^= h >> 33;
        return Rng(h);
    }

  private:
    uint64_t state_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace dag
