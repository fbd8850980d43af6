#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "swp/tensor.hpp"

namespace swp {

/// 8-bit image, interleaved pixels, 1 (gray) or 3 (rgb) channels.
struct ImageU8 {
    int64_t width = 0;
    int64_t height = 0;
    int64_t channels = 0;
    std::vector<uint8_t> pixels;
};

/// Reads PNG, PGM (P5) or PPM (P6), detected by magic bytes.
ImageU8 read_image(const std::string& path);

void write_pgm(const std::string& path, int64_t width, int64_t height, const uint8_t* gray);

/// (3,H,W) tensor in [0,1] (bytes divided by 255); gray input is
/// replicated across the three channels.
Tensor image_to_rgb_tensor(const ImageU8& img);

} // namespace swp
