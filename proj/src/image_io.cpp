#include "skinseg/image_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "skinseg/errors.hpp"

namespace skinseg {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(static_cast<char>(c));
      while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(in.get()));
      return tok;
    }
  }
  return tok;
}

void read_pnm_header(std::istream& in, const std::filesystem::path& path, const char* magic,
                     int& h, int& w) {
  const std::string m = next_token(in);
  if (m != magic)
    throw InputError(path.string() + ": expected " + std::string(magic) + " raster, got '" + m + "'");
  const std::string ws = next_token(in), hs = next_token(in), maxs = next_token(in);
  if (ws.empty() || hs.empty() || maxs.empty()) throw InputError(path.string() + ": truncated header");
  w = std::stoi(ws);
  h = std::stoi(hs);
  if (std::stoi(maxs) != 255) throw InputError(path.string() + ": only maxval 255 supported");
  in.get();  // single whitespace before raster data
  if (h <= 0 || w <= 0) throw InputError(path.string() + ": bad dimensions");
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

}  // namespace

std::size_t Mask::count() const {
  std::size_t n = 0;
  for (auto b : v) n += b;
  return n;
}

Tensor Mask::to_tensor() const {
  Tensor t({h, w});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i] ? 1.0 : 0.0;
  return t;
}

Tensor Image::to_tensor() const {
  Tensor t({1, 3, h, w});
  std::copy(px.begin(), px.end(), t.data.begin());
  return t;
}

Image read_ppm(const std::filesystem::path& path) {
  auto in = open_in(path);
  int h = 0, w = 0;
  read_pnm_header(in, path, "P6", h, w);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(3) * h * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw InputError(path.string() + ": truncated raster data");
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
  auto out = open_out(path);
  out << "P6\n" << img.w << " " << img.h << "\n255\n";
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(3) * img.h * img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        raw[(static_cast<std::size_t>(y) * img.w + x) * 3 + c] = quantize8(img.at(c, y, x));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& h, int& w) {
  auto in = open_in(path);
  read_pnm_header(in, path, "P5", h, w);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw InputError(path.string() + ": truncated raster data");
  return raw;
}

void write_pgm(const std::filesystem::path& path, const std::uint8_t* data, int h, int w) {
  auto out = open_out(path);
  out << "P5\n" << w << " " << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(h) * w);
}

Mask read_mask(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto raw = read_pgm(path, h, w);
  Mask m(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) m.v[i] = raw[i] >= 128 ? 1 : 0;
  return m;
}

void write_mask(const std::filesystem::path& path, const Mask& m) {
  std::vector<std::uint8_t> raw(m.v.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = m.v[i] ? 255 : 0;
  write_pgm(path, raw.data(), m.h, m.w);
}

void write_prob_pgm(const std::filesystem::path& path, const Tensor& prob) {
  if (prob.shape.size() != 2) throw ValidationError("probability map must be rank 2");
  std::vector<std::uint8_t> raw(prob.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = quantize8(prob[i]);
  write_pgm(path, raw.data(), prob.dim(0), prob.dim(1));
}

Tensor read_prob_pgm(const std::filesystem::path& path) {
  int h = 0, w = 0;
  auto raw = read_pgm(path, h, w);
  Tensor t({h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i] / 255.0;
  return t;
}

void write_prob_f32(const std::filesystem::path& path, const Tensor& prob) {
  if (prob.shape.size() != 2) throw ValidationError("probability map must be rank 2");
  auto out = open_out(path);
  const std::int32_t h = prob.dim(0), w = prob.dim(1);
  out.write("SKF1", 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  std::vector<float> raw(prob.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(prob[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
}

Tensor read_prob_f32(const std::filesystem::path& path) {
  auto in = open_in(path);
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "SKF1", 4) != 0)
    throw InputError(path.string() + ": not a float32 map");
  std::int32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (h <= 0 || w <= 0) throw InputError(path.string() + ": bad dimensions");
  std::vector<float> raw(static_cast<std::size_t>(h) * w);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(raw.size() * 4))
    throw InputError(path.string() + ": truncated data");
  Tensor t({h, w});
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i];
  return t;
}

Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ValidationError("resize target must be positive");
  Image dst(out_h, out_w);
  const real sy = static_cast<real>(src.h) / out_h;
  const real sx = static_cast<real>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    real fy = (y + 0.5) * sy - 0.5;
    fy = fy < 0 ? 0 : (fy > src.h - 1 ? src.h - 1 : fy);
    const int y0 = static_cast<int>(fy);
    const int y1 = y0 + 1 < src.h ? y0 + 1 : y0;
    const real wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      real fx = (x + 0.5) * sx - 0.5;
      fx = fx < 0 ? 0 : (fx > src.w - 1 ? src.w - 1 : fx);
      const int x0 = static_cast<int>(fx);
      const int x1 = x0 + 1 < src.w ? x0 + 1 : x0;
      const real wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const real top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        const real bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

Mask resize_nearest(const Mask& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0) throw ValidationError("resize target must be positive");
  Mask dst(out_h, out_w);
  const real sy = static_cast<real>(src.h) / out_h;
  const real sx = static_cast<real>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    int yy = static_cast<int>((y + 0.5) * sy);
    if (yy >= src.h) yy = src.h - 1;
    for (int x = 0; x < out_w; ++x) {
      int xx = static_cast<int>((x + 0.5) * sx);
      if (xx >= src.w) xx = src.w - 1;
      dst.at(y, x) = src.at(yy, xx);
    }
  }
  return dst;
}

}  // namespace skinseg
