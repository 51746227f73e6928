#pragma once

#include "mfa/dense.hpp"

#include <filesystem>

namespace mfa {

// Binary PPM (P6) / PGM (P5), maxval 255. Image values are quantized to k/255.
void write_ppm(const std::filesystem::path& path, const DenseArray<float>& image);
DenseArray<float> read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_pgm(const std::filesystem::path& path);

inline std::uint8_t quantize_unit(float v) {
    const float clamped = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
    return static_cast<std::uint8_t>(clamped * 255.0f + 0.5f);
}

inline float dequantize_unit(std::uint8_t k) { return static_cast<float>(k) / 255.0f; }

} // namespace mfa
