#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "skinseg/tensor.hpp"

namespace skinseg {

// RGB image, channel-planar, values in [0,1].
struct Image {
  int h = 0, w = 0;
  std::vector<real> px;  // size 3*h*w, layout [c][y][x]

  Image() = default;
  Image(int height, int width) : h(height), w(width), px(static_cast<std::size_t>(3) * height * width, 0.0) {}

  real& at(int c, int y, int x) { return px[(static_cast<std::size_t>(c) * h + y) * w + x]; }
  real at(int c, int y, int x) const { return px[(static_cast<std::size_t>(c) * h + y) * w + x]; }

  // Copy into a {1,3,h,w} network input tensor slice.
  Tensor to_tensor() const;
};

// Binary mask, values strictly {0,1}.
struct Mask {
  int h = 0, w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int height, int width) : h(height), w(width), v(static_cast<std::size_t>(height) * width, 0) {}

  std::uint8_t& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }

  std::size_t count() const;  // number of positive pixels
  Tensor to_tensor() const;   // {h,w} of 0.0/1.0
};

// 8-bit binary raster I/O (PPM P6 for images, PGM P5 for masks and
// probability maps). Deterministic byte-for-byte on write.
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& img);

// Reads a single-channel 8-bit raster; rejects color files.
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& h, int& w);
void write_pgm(const std::filesystem::path& path, const std::uint8_t* data, int h, int w);

Mask read_mask(const std::filesystem::path& path);              // binarize at >=128
void write_mask(const std::filesystem::path& path, const Mask& m);  // {0,1} -> {0,255}

// Probability map helpers: 8-bit quantized raster plus an exact raw
// float32 sidecar ("SKF1", int32 h, int32 w, h*w little-endian floats).
void write_prob_pgm(const std::filesystem::path& path, const Tensor& prob);  // round(255*p)
void write_prob_f32(const std::filesystem::path& path, const Tensor& prob);
Tensor read_prob_f32(const std::filesystem::path& path);
Tensor read_prob_pgm(const std::filesystem::path& path);  // value/255

// Resampling. Bilinear for images, nearest for masks (keeps binarity).
Image resize_bilinear(const Image& src, int out_h, int out_w);
Mask resize_nearest(const Mask& src, int out_h, int out_w);

inline std::uint8_t quantize8(real p) {
  real q = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
  return static_cast<std::uint8_t>(q * 255.0 + 0.5);
}

}  // namespace skinseg
