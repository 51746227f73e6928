#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mfa {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed for a named sub-stream of `seed`, optionally indexed (per scene, per epoch).
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return splitmix64(splitmix64(seed ^ h) + index);
}

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    return std::mt19937_64(substream_seed(seed, name, index));
}

} // namespace mfa
