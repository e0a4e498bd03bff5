#pragma once

#include <cstddef>
#include <string>

#include "dfkd/tensor.hpp"

namespace dfkd {

/// Writes an (H, W, 3) image with values in [-1, 1] as binary PPM (P6).
void write_ppm(const std::string& path, const Tensor& image);

/// Lays an (N, H, W, C) batch out as a (rows*H, cols*W, C) grid, row-major,
/// padding missing cells with -1 (black).
Tensor tile_images(const Tensor& images, std::size_t cols);

}  // namespace dfkd
