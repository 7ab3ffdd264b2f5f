#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "abn/tensor.hpp"

namespace abn {

// Nearest-neighbor upsample of an [N,C,h,w] tensor to [N,C,H,W]:
// source index = floor(dst * src_extent / dst_extent).
Tensor upsample_nearest(const Tensor& maps, std::size_t height, std::size_t width);

// Bilinear upsample (align-corners-false convention), optional display path.
Tensor upsample_bilinear(const Tensor& maps, std::size_t height, std::size_t width);

// Min-max quantization to 0..255; a constant input maps to all zeros.
std::vector<std::uint8_t> to_gray_u8(const std::vector<double>& values);

struct PgmImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// Binary PGM (P5), maxval 255.
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
PgmImage read_pgm(const std::string& path);

}  // namespace abn
