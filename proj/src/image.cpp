#include "dfkd/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dfkd {

void write_ppm(const std::string& path, const Tensor& image) {
  if (image.shape.size() != 3 || image.shape[2] != 3) {
    throw std::runtime_error("write_ppm expects an (H, W, 3) image, got " + image.shape_str());
  }
  const std::size_t h = image.shape[0];
  const std::size_t w = image.shape[1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(w * 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t i = 0; i < w * 3; ++i) {
      float v = image.data[(y * w * 3) + i];
      double byte = std::nearbyint((static_cast<double>(v) + 1.0) * 0.5 * 255.0);
      row[i] = static_cast<unsigned char>(std::clamp(byte, 0.0, 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  out.flush();
  if (!out) throw std::runtime_error("failed writing " + path);
}

Tensor tile_images(const Tensor& images, std::size_t cols) {
  if (images.shape.size() != 4) {
    throw std::runtime_error("tile_images expects an (N, H, W, C) batch, got " +
                             images.shape_str());
  }
  if (cols == 0) throw std::runtime_error("tile_images needs cols >= 1");
  const std::size_t n = images.shape[0];
  const std::size_t h = images.shape[1];
  const std::size_t w = images.shape[2];
  const std::size_t c = images.shape[3];
  if (n == 0) throw std::runtime_error("tile_images needs at least one image");
  const std::size_t rows = (n + cols - 1) / cols;
  Tensor grid({rows * h, cols * w, c});
  std::fill(grid.data.begin(), grid.data.end(), -1.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gy = (i / cols) * h;
    const std::size_t gx = (i % cols) * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          grid.data[((gy + y) * cols * w + gx + x) * c + ch] = images.at4(i, y, x, ch);
        }
      }
    }
  }
  return grid;
}

}  // namespace dfkd
