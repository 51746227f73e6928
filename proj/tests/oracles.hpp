#pragma once

// Independent reference implementations used by the unit and acceptance tests.

#include "mfa/dense.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

namespace oracle {

// Selection proportion as an exact fraction so ranks need no floating-point rounding.
struct Fraction {
    long num = 1;
    long den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline long top_count(Fraction phi, long n) {
    const long r = (phi.num * n + phi.den - 1) / phi.den;
    return std::clamp(r, 1L, n);
}

// Lowest index wins ties.
template <typename Scalar>
std::pair<std::uint8_t, Scalar> argmax(const Scalar* probs, int classes) {
    int best = 0;
    for (int c = 1; c < classes; ++c)
        if (probs[c] > probs[best]) best = c;
    return {static_cast<std::uint8_t>(best), probs[best]};
}

// Pools every pixel of a [N,H,W,C] batch, sorts each predicted class by confidence and keeps
// its top ceil(phi * n_c) pixels. Returns one label per pixel, 255 when not kept.
template <typename Scalar>
std::vector<std::uint8_t> select_top(const mfa::DenseArray<Scalar>& probs, Fraction phi) {
    const int classes = static_cast<int>(probs.shape().back());
    const long pixels = static_cast<long>(probs.size() / classes);
    std::vector<std::uint8_t> label(static_cast<std::size_t>(pixels));
    std::vector<Scalar> conf(static_cast<std::size_t>(pixels));
    for (long p = 0; p < pixels; ++p) {
        const auto [l, c] = argmax(probs.data() + p * classes, classes);
        label[static_cast<std::size_t>(p)] = l;
        conf[static_cast<std::size_t>(p)] = c;
    }
    std::vector<std::uint8_t> kept(static_cast<std::size_t>(pixels), 255);
    for (int c = 0; c < classes; ++c) {
        std::vector<long> members;
        for (long p = 0; p < pixels; ++p)
            if (label[static_cast<std::size_t>(p)] == c) members.push_back(p);
        if (members.empty()) continue;
        std::stable_sort(members.begin(), members.end(), [&](long a, long b) {
            return conf[static_cast<std::size_t>(a)] > conf[static_cast<std::size_t>(b)];
        });
        const long keep = top_count(phi, static_cast<long>(members.size()));
        for (long i = 0; i < keep; ++i) kept[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = c;
    }
    return kept;
}

// True when no two pixels predicted as the same class share a confidence value.
template <typename Scalar>
bool tie_free(const mfa::DenseArray<Scalar>& probs) {
    const int classes = static_cast<int>(probs.shape().back());
    const long pixels = static_cast<long>(probs.size() / classes);
    std::vector<std::pair<int, Scalar>> seen;
    for (long p = 0; p < pixels; ++p) seen.push_back(argmax(probs.data() + p * classes, classes));
    std::sort(seen.begin(), seen.end());
    return std::adjacent_find(seen.begin(), seen.end()) == seen.end();
}

} // namespace oracle
