#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "skinseg/tensor.hpp"

namespace skinseg::ad {

// A named, optimizable weight tensor. Gradients accumulate across backward
// passes until zero_grad().
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
  void zero_grad() { grad.fill(0.0); }
};

// Per-layer batch normalization statistics; updated as a side effect of
// training-mode forward passes, read in eval mode.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily by ensure_grad()
  bool needs_grad = false;
  std::function<void()> backward;  // accumulates this->grad into parents
  Param* param = nullptr;          // set for parameter leaves

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor(value.shape);
  }
};

using NodeP = std::shared_ptr<Node>;

// Dynamic tape. Nodes are recorded in creation order; backward() walks the
// tape in reverse and finally folds parameter-leaf gradients into the
// owning Param::grad.
class Graph {
 public:
  bool training = false;

  // Test hook: when true, use() returns a distinct leaf per call so the
  // gradient arriving through each individual application of a shared
  // parameter can be inspected separately.
  bool per_use_param_leaves = false;
  std::string use_scope;  // label recorded with each parameter use

  struct ParamUse {
    Param* param;
    NodeP node;
    std::string scope;
  };

  NodeP constant(Tensor v);                      // no gradient
  NodeP variable(Tensor v);                      // leaf with gradient (for loss probes)
  NodeP use(Param& p);                           // parameter leaf
  NodeP track(NodeP n);                          // register an op result
  void backward(const NodeP& root);              // root must be scalar

  const std::vector<ParamUse>& param_uses() const { return uses_; }

 private:
  std::vector<NodeP> tape_;
  std::unordered_map<Param*, NodeP> cached_;
  std::vector<ParamUse> uses_;
};

// --- ops ----------------------------------------------------------------
// All ops take NCHW inputs unless stated otherwise. Convolutions are
// stride-1 with "same" zero padding.

NodeP conv2d(Graph& g, NodeP x, Param& w, Param* bias);
NodeP batchnorm(Graph& g, NodeP x, Param& gamma, Param& beta, BatchNormState& st,
                real momentum = 0.9, real eps = 1e-5);
NodeP relu(Graph& g, NodeP x);
NodeP sigmoid(Graph& g, NodeP x);
NodeP maxpool2(Graph& g, NodeP x);
NodeP upsample2(Graph& g, NodeP x);
NodeP concat_channels(Graph& g, NodeP a, NodeP b);
NodeP detach(Graph& g, NodeP x);  // value passthrough, gradient barrier

// Scalar combiners for building loss totals.
NodeP add_scaled(Graph& g, const std::vector<std::pair<real, NodeP>>& terms);  // scalar {1}
// Per-sample weighted mean: scalar = (1/N) * sum_i w_i * v_i, v shaped {N}.
NodeP weighted_mean(Graph& g, NodeP v, Tensor weights);
// Per-sample substitution: where flags[i]==1 the output row is replacement[i]
// (no gradient), elsewhere it is x[i] (gradient passes through).
NodeP mix_per_sample(Graph& g, NodeP x, Tensor replacement, Tensor flags);

}  // namespace skinseg::ad
