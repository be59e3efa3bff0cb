#pragma once

#include <array>
#include <vector>

#include "skinseg/image_io.hpp"
#include "skinseg/rng.hpp"
#include "skinseg/tensor.hpp"

namespace skinseg {

// Classic RGB thresholding: a pixel is skin if it satisfies the
// uniform-daylight rule or the flash rule.
bool is_skin_rgb(int r, int g, int b);
Mask threshold_classify(const Image& img);

struct GmmComponent {
  real weight = 0;
  std::array<real, 3> mean{};
  std::array<real, 3> var{};  // diagonal covariance
};

struct GmmModel {
  std::vector<GmmComponent> comps;
  std::vector<real> log_likelihood_trace;  // per EM iteration

  real log_density(const std::array<real, 3>& x) const;
};

inline constexpr real kGmmVarFloor = 1e-4;

// Diagonal-covariance EM with k-means seeding. Colors are in [0,1].
GmmModel gmm_fit(const std::vector<std::array<real, 3>>& pixels, int k, Rng& rng,
                 int max_iters = 100, real rel_tol = 1e-6);

// Two-class per-image skin posterior: a K-component GMM fitted inside the
// initial mask vs one fitted outside, mixed by the mask fraction.
Tensor gmm_skin_probability(const Image& img, const Mask& initial_mask, int k,
                            std::uint64_t seed = 0x5eed);

}  // namespace skinseg
