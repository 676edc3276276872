#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace evlg {

// splitmix64 finalizer; derives independent sub-seeds from (base, stream).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Thin wrapper over mt19937_64 with portable draws (the std distributions are
// implementation-defined, which would break cross-platform reproducibility).
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[index(i)]);
    }

   private:
    std::mt19937_64 engine_;
};

}  // namespace evlg
