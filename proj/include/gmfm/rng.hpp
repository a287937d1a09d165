#ifndef GMFM_RNG_HPP
#define GMFM_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace gmfm {

// Named-stream seed derivation: every random stream in the toolkit is
// derived from a single base seed and a stream name, so runs are
// reproducible regardless of scheduling.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view stream) {
    std::uint64_t h = 1469598103934665603ull ^ base;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    // splitmix64 finalizer
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t base, std::string_view stream) {
    return std::mt19937_64(derive_seed(base, stream));
}

}  // namespace gmfm

#endif
