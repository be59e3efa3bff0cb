#include "skinseg/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "skinseg/errors.hpp"

namespace skinseg {

bool is_skin_rgb(int r, int g, int b) {
  const int mx = std::max({r, g, b});
  const int mn = std::min({r, g, b});
  const bool daylight = r > 95 && g > 40 && b > 20 && (mx - mn) > 15 && std::abs(r - g) > 15 &&
                        r > g && r > b;
  const bool flash = r > 220 && g > 210 && b > 170 && std::abs(r - g) <= 15 && b < r && b < g;
  return daylight || flash;
}

Mask threshold_classify(const Image& img) {
  Mask out(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const int r = quantize8(img.at(0, y, x));
      const int g = quantize8(img.at(1, y, x));
      const int b = quantize8(img.at(2, y, x));
      out.at(y, x) = is_skin_rgb(r, g, b) ? 1 : 0;
    }
  return out;
}

namespace {

constexpr real kLog2Pi = 1.8378770664093453;

real log_gauss_diag(const std::array<real, 3>& x, const GmmComponent& c) {
  real s = 0;
  for (int i = 0; i < 3; ++i) {
    const real d = x[static_cast<std::size_t>(i)] - c.mean[static_cast<std::size_t>(i)];
    const real v = c.var[static_cast<std::size_t>(i)];
    s += d * d / v + std::log(v) + kLog2Pi;
  }
  return -0.5 * s;
}

real logsumexp(const std::vector<real>& v) {
  real mx = -std::numeric_limits<real>::infinity();
  for (real x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  real s = 0;
  for (real x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

real GmmModel::log_density(const std::array<real, 3>& x) const {
  std::vector<real> terms(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k)
    terms[k] = std::log(comps[k].weight + 1e-300) + log_gauss_diag(x, comps[k]);
  return logsumexp(terms);
}

GmmModel gmm_fit(const std::vector<std::array<real, 3>>& pixels, int k, Rng& rng, int max_iters,
                 real rel_tol) {
  const std::size_t n = pixels.size();
  if (k < 1) throw ValidationError("gmm_fit: k must be >= 1");
  if (n < static_cast<std::size_t>(k))
    throw ValidationError("gmm_fit: need at least " + std::to_string(k) + " pixels, got " +
                          std::to_string(n));

  // k-means++ seeding followed by a few Lloyd iterations.
  std::vector<std::array<real, 3>> centers;
  centers.push_back(pixels[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
  std::vector<real> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    real total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      real best = std::numeric_limits<real>::infinity();
      for (const auto& c : centers) {
        real d = 0;
        for (int j = 0; j < 3; ++j) {
          const real t = pixels[i][static_cast<std::size_t>(j)] - c[static_cast<std::size_t>(j)];
          d += t * t;
        }
        best = std::min(best, d);
      }
      d2[i] = best;
      total += best;
    }
    if (total <= 0) {
      centers.push_back(pixels[0]);  // all points identical
      continue;
    }
    real r = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0) {
        pick = i;
        break;
      }
    }
    centers.push_back(pixels[pick]);
  }
  std::vector<int> assign(n, 0);
  for (int it = 0; it < 10; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      real best = std::numeric_limits<real>::infinity();
      int bj = 0;
      for (int j = 0; j < k; ++j) {
        real d = 0;
        for (int c = 0; c < 3; ++c) {
          const real t = pixels[i][static_cast<std::size_t>(c)] -
                         centers[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
          d += t * t;
        }
        if (d < best) {
          best = d;
          bj = j;
        }
      }
      if (assign[i] != bj) {
        assign[i] = bj;
        changed = true;
      }
    }
    std::vector<std::array<real, 3>> sums(static_cast<std::size_t>(k), {0, 0, 0});
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c)
        sums[static_cast<std::size_t>(assign[i])][static_cast<std::size_t>(c)] +=
            pixels[i][static_cast<std::size_t>(c)];
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (int j = 0; j < k; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0)
        for (int c = 0; c < 3; ++c)
          centers[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] =
              sums[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] /
              static_cast<real>(counts[static_cast<std::size_t>(j)]);
    if (!changed) break;
  }

  GmmModel model;
  model.comps.resize(static_cast<std::size_t>(k));
  {
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    std::vector<std::array<real, 3>> var(static_cast<std::size_t>(k), {0, 0, 0});
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(assign[i]);
      ++counts[j];
      for (int c = 0; c < 3; ++c) {
        const real d = pixels[i][static_cast<std::size_t>(c)] - centers[j][static_cast<std::size_t>(c)];
        var[j][static_cast<std::size_t>(c)] += d * d;
      }
    }
    for (int j = 0; j < k; ++j) {
      auto& comp = model.comps[static_cast<std::size_t>(j)];
      const std::size_t cj = counts[static_cast<std::size_t>(j)];
      comp.weight = cj > 0 ? static_cast<real>(cj) / static_cast<real>(n) : 1e-6;
      comp.mean = centers[static_cast<std::size_t>(j)];
      for (int c = 0; c < 3; ++c)
        comp.var[static_cast<std::size_t>(c)] =
            std::max(kGmmVarFloor, cj > 0 ? var[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] /
                                                static_cast<real>(cj)
                                          : kGmmVarFloor);
    }
    real wsum = 0;
    for (auto& c : model.comps) wsum += c.weight;
    for (auto& c : model.comps) c.weight /= wsum;
  }

  // EM iterations; the observed-data log-likelihood is tracked per
  // iteration and must be non-decreasing.
  std::vector<real> resp(n * static_cast<std::size_t>(k));
  real prev_ll = -std::numeric_limits<real>::infinity();
  for (int it = 0; it < max_iters; ++it) {
    real ll = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<real> terms(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j)
        terms[static_cast<std::size_t>(j)] =
            std::log(model.comps[static_cast<std::size_t>(j)].weight + 1e-300) +
            log_gauss_diag(pixels[i], model.comps[static_cast<std::size_t>(j)]);
      const real lse = logsumexp(terms);
      ll += lse;
      for (int j = 0; j < k; ++j)
        resp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)] =
            std::exp(terms[static_cast<std::size_t>(j)] - lse);
    }
    model.log_likelihood_trace.push_back(ll);
    if (it > 0 && std::abs(ll - prev_ll) < rel_tol * std::abs(prev_ll)) break;
    prev_ll = ll;

    for (int j = 0; j < k; ++j) {
      auto& comp = model.comps[static_cast<std::size_t>(j)];
      real nk = 0;
      std::array<real, 3> mean{};
      for (std::size_t i = 0; i < n; ++i) {
        const real r = resp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
        nk += r;
        for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] += r * pixels[i][static_cast<std::size_t>(c)];
      }
      if (nk < 1e-12) {
        comp.weight = nk / static_cast<real>(n);
        continue;  // keep previous mean/var for an empty component
      }
      for (int c = 0; c < 3; ++c) mean[static_cast<std::size_t>(c)] /= nk;
      std::array<real, 3> var{};
      for (std::size_t i = 0; i < n; ++i) {
        const real r = resp[i * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)];
        for (int c = 0; c < 3; ++c) {
          const real d = pixels[i][static_cast<std::size_t>(c)] - mean[static_cast<std::size_t>(c)];
          var[static_cast<std::size_t>(c)] += r * d * d;
        }
      }
      comp.weight = nk / static_cast<real>(n);
      comp.mean = mean;
      for (int c = 0; c < 3; ++c)
        comp.var[static_cast<std::size_t>(c)] = std::max(kGmmVarFloor, var[static_cast<std::size_t>(c)] / nk);
    }
  }
  return model;
}

Tensor gmm_skin_probability(const Image& img, const Mask& initial_mask, int k, std::uint64_t seed) {
  if (initial_mask.h != img.h || initial_mask.w != img.w)
    throw ValidationError("gmm_skin_probability: mask size must match image");
  std::vector<std::array<real, 3>> inside, outside;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const std::array<real, 3> px{img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)};
      if (initial_mask.at(y, x))
        inside.push_back(px);
      else
        outside.push_back(px);
    }
  if (inside.size() < static_cast<std::size_t>(k) || outside.size() < static_cast<std::size_t>(k))
    throw ValidationError(
        "gmm_skin_probability: initial mask is degenerate (needs >= K pixels per class); "
        "consider threshold_classify as the initializer");

  Rng rng_in(Rng::mix(seed, 1)), rng_out(Rng::mix(seed, 2));
  const GmmModel skin = gmm_fit(inside, k, rng_in);
  const GmmModel nonskin = gmm_fit(outside, k, rng_out);
  const real pi = static_cast<real>(inside.size()) / static_cast<real>(img.h * img.w);

  Tensor out({img.h, img.w});
  const real lpi = std::log(pi), lnpi = std::log(1 - pi);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const std::array<real, 3> px{img.at(0, y, x), img.at(1, y, x), img.at(2, y, x)};
      const real ls = lpi + skin.log_density(px);
      const real ln = lnpi + nonskin.log_density(px);
      out[static_cast<std::size_t>(y) * img.w + x] = 1.0 / (1.0 + std::exp(ln - ls));
    }
  return out;
}

}  // namespace skinseg
