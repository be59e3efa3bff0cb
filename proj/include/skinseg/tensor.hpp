#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "skinseg/errors.hpp"

namespace skinseg {

using real = double;

// Dense row-major tensor of doubles. Rank is dynamic; network code uses
// {N,C,H,W} throughout, masks and probability maps use {H,W} or {N,1,H,W}.
struct Tensor {
  std::vector<int> shape;
  std::vector<real> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape), 0.0) {}
  Tensor(std::vector<int> s, real fill) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ValidationError("tensor dimension must be positive");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  real* ptr() { return data.data(); }
  const real* ptr() const { return data.data(); }

  real& operator[](std::size_t i) { return data[i]; }
  real operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(real v) { std::fill(data.begin(), data.end(), v); }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + ")";
  }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ValidationError(std::string(what) + ": shape mismatch " + Tensor::shape_str(a.shape) +
                          " vs " + Tensor::shape_str(b.shape));
}

}  // namespace skinseg
