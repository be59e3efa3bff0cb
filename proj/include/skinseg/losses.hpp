#pragma once

#include <optional>
#include <string>
#include <vector>

#include "skinseg/graph.hpp"
#include "skinseg/image_io.hpp"
#include "skinseg/tensor.hpp"

namespace skinseg {

struct LossConfig {
  real lambda1 = 0.0001;  // pairwise-consistency weight
  real lambda2 = 0.001;   // skin-in-body consistency weight
  real crf_sigma_color = 0.1;
  real crf_sigma_pos = 3.0;
  int crf_radius = 2;
  enum class WcePairing { matched_stage, all_pairs };
  WcePairing wce_pairing = WcePairing::matched_stage;
  real epsilon = 1e-6;

  void validate() const;
};

// Sparse symmetric affinity over pixel pairs within a Chebyshev radius.
// Weights are stored per half-space offset as full h*w planes (zero where
// the neighbor falls outside the image), so that pair (p, p+offset) has its
// weight at plane position p.
struct Affinity {
  int h = 0, w = 0, radius = 0;
  std::vector<std::pair<int, int>> offsets;  // (dy,dx), dy>0 or (dy==0 && dx>0)
  std::vector<std::vector<real>> weights;    // one plane per offset
  long pair_count = 0;

  real weight_between(int y0, int x0, int y1, int x1) const;  // 0 if out of range
};

Affinity build_affinity(const Image& img, const LossConfig& cfg);

// Scalar losses over plain maps. `grad` (same shape as the prediction) is
// optional and receives d(loss)/d(prediction).
real ce_loss(const Tensor& pred, const Tensor& target, real eps = 1e-6, Tensor* grad = nullptr);
real crf_loss(const Tensor& pred, const Affinity& aff, Tensor* grad = nullptr);
real wce_loss(const Tensor& skin_pred, const Tensor& body_pred, real eps = 1e-6,
              Tensor* grad_skin = nullptr, Tensor* grad_body = nullptr);

// Per-term values of one total-loss evaluation. Stage-2 entries are only
// meaningful when has_stage2 is set.
struct LossBreakdown {
  real ce_skin1 = 0, ce_body1 = 0, ce_skin2 = 0, ce_body2 = 0;
  real crf_skin1 = 0, crf_body1 = 0, crf_skin2 = 0, crf_body2 = 0;
  std::vector<real> wce;  // matched_stage: {stage1[, stage2]}; all_pairs: 4 entries
  real total = 0;
  bool has_stage2 = false;

  real ce_sum() const { return ce_skin1 + ce_body1 + ce_skin2 + ce_body2; }
  real crf_sum() const { return crf_skin1 + crf_body1 + crf_skin2 + crf_body2; }
  real wce_sum() const {
    real s = 0;
    for (real v : wce) s += v;
    return s;
  }
  real recombine(const LossConfig& cfg) const {
    return ce_sum() + cfg.lambda1 * crf_sum() + cfg.lambda2 * wce_sum();
  }
  // Name of the first non-finite term, empty when all finite.
  std::string first_non_finite() const;
};

// --- graph-node builders (batched) ---------------------------------------

// Per-sample scalars, inputs {N,1,H,W}; targets {N,1,H,W} binary.
ad::NodeP bce_per_sample(ad::Graph& g, ad::NodeP pred, Tensor target, real eps);
ad::NodeP crf_per_sample(ad::Graph& g, ad::NodeP pred,
                         std::shared_ptr<const std::vector<Affinity>> affinities);
ad::NodeP wce_per_sample(ad::Graph& g, ad::NodeP skin, ad::NodeP body, real eps);

// Batched total loss over a (possibly single-sample) forward trace.
struct BatchTargets {
  Tensor skin_masks;  // {N,1,H,W}; rows with skin_flag 0 are ignored
  Tensor body_masks;
  Tensor skin_flags;  // {N} of 0/1
  Tensor body_flags;
  std::shared_ptr<const std::vector<Affinity>> affinities;  // size N
};

struct TraceNodes {
  ad::NodeP o_skin, o_body;    // stage 1
  ad::NodeP o2_skin, o2_body;  // stage 2 (null when single-stage)
};

struct TotalLoss {
  ad::NodeP node;  // scalar
  LossBreakdown breakdown;
};

TotalLoss build_total_loss(ad::Graph& g, const TraceNodes& trace, const BatchTargets& targets,
                           const LossConfig& cfg);

}  // namespace skinseg
