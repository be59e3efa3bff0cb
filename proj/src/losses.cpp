#include "skinseg/losses.hpp"

#include <cmath>

#include "skinseg/errors.hpp"

namespace skinseg {

void LossConfig::validate() const {
  if (lambda1 < 0 || lambda2 < 0) throw ValidationError("loss lambdas must be >= 0");
  if (crf_radius < 1) throw ValidationError("crf_radius must be >= 1");
  if (!(epsilon > 0 && epsilon < 0.5)) throw ValidationError("epsilon must be in (0, 0.5)");
  if (crf_sigma_color <= 0 || crf_sigma_pos <= 0) throw ValidationError("crf sigmas must be positive");
}

real Affinity::weight_between(int y0, int x0, int y1, int x1) const {
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    auto [dy, dx] = offsets[k];
    if (y1 - y0 == dy && x1 - x0 == dx) return weights[k][static_cast<std::size_t>(y0) * w + x0];
    if (y0 - y1 == dy && x0 - x1 == dx) return weights[k][static_cast<std::size_t>(y1) * w + x1];
  }
  return 0.0;
}

Affinity build_affinity(const Image& img, const LossConfig& cfg) {
  cfg.validate();
  Affinity aff;
  aff.h = img.h;
  aff.w = img.w;
  aff.radius = cfg.crf_radius;
  const real inv2sc = 1.0 / (2.0 * cfg.crf_sigma_color * cfg.crf_sigma_color);
  const real inv2sp = 1.0 / (2.0 * cfg.crf_sigma_pos * cfg.crf_sigma_pos);
  for (int dy = 0; dy <= cfg.crf_radius; ++dy)
    for (int dx = -cfg.crf_radius; dx <= cfg.crf_radius; ++dx) {
      if (dy == 0 && dx <= 0) continue;  // half space: unordered pairs once
      aff.offsets.emplace_back(dy, dx);
    }
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  aff.weights.resize(aff.offsets.size());
  for (std::size_t k = 0; k < aff.offsets.size(); ++k) {
    auto [dy, dx] = aff.offsets[k];
    aff.weights[k].assign(plane, 0.0);
    const real pos_term = (static_cast<real>(dy) * dy + static_cast<real>(dx) * dx) * inv2sp;
    for (int y = 0; y + dy < img.h && y < img.h; ++y) {
      const int x_lo = dx < 0 ? -dx : 0;
      const int x_hi = dx > 0 ? img.w - 1 - dx : img.w - 1;
      for (int x = x_lo; x <= x_hi; ++x) {
        real cdist = 0;
        for (int c = 0; c < 3; ++c) {
          const real d = img.at(c, y, x) - img.at(c, y + dy, x + dx);
          cdist += d * d;
        }
        aff.weights[k][static_cast<std::size_t>(y) * img.w + x] = std::exp(-cdist * inv2sc - pos_term);
        ++aff.pair_count;
      }
    }
  }
  return aff;
}

namespace {

inline real clamp_prob(real p, real eps) { return p < eps ? eps : (p > 1 - eps ? 1 - eps : p); }

}  // namespace

real ce_loss(const Tensor& pred, const Tensor& target, real eps, Tensor* grad) {
  require_same_shape(pred, target, "ce_loss");
  const std::size_t n = pred.numel();
  if (grad && !grad->same_shape(pred)) *grad = Tensor(pred.shape);
  real sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real o = clamp_prob(pred[i], eps);
    const real m = target[i];
    sum += -(m * std::log(o) + (1 - m) * std::log(1 - o));
    if (grad) {
      const bool inside = pred[i] > eps && pred[i] < 1 - eps;
      (*grad)[i] = inside ? (o - m) / (o * (1 - o)) / static_cast<real>(n) : 0.0;
    }
  }
  return sum / static_cast<real>(n);
}

real crf_loss(const Tensor& pred, const Affinity& aff, Tensor* grad) {
  if (pred.shape.size() != 2 || pred.dim(0) != aff.h || pred.dim(1) != aff.w)
    throw ValidationError("crf_loss: prediction shape does not match affinity");
  if (grad) {
    if (!grad->same_shape(pred)) *grad = Tensor(pred.shape);
    grad->fill(0.0);
  }
  const real scale = 1.0 / static_cast<real>(aff.pair_count);
  real sum = 0;
  for (std::size_t k = 0; k < aff.offsets.size(); ++k) {
    auto [dy, dx] = aff.offsets[k];
    const std::size_t shift = static_cast<std::size_t>(dy) * aff.w + dx;
    const std::vector<real>& wts = aff.weights[k];
    for (int y = 0; y + dy < aff.h; ++y) {
      const int x_lo = dx < 0 ? -dx : 0;
      const int x_hi = dx > 0 ? aff.w - 1 - dx : aff.w - 1;
      for (int x = x_lo; x <= x_hi; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * aff.w + x;
        const real wgt = wts[p];
        const real d = pred[p] - pred[p + shift];
        sum += wgt * d * d;
        if (grad) {
          (*grad)[p] += 2 * wgt * d * scale;
          (*grad)[p + shift] -= 2 * wgt * d * scale;
        }
      }
    }
  }
  return sum * scale;
}

real wce_loss(const Tensor& skin_pred, const Tensor& body_pred, real eps, Tensor* grad_skin,
              Tensor* grad_body) {
  require_same_shape(skin_pred, body_pred, "wce_loss");
  const std::size_t n = skin_pred.numel();
  if (grad_skin && !grad_skin->same_shape(skin_pred)) *grad_skin = Tensor(skin_pred.shape);
  if (grad_body && !grad_body->same_shape(body_pred)) *grad_body = Tensor(body_pred.shape);
  real sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const real x = clamp_prob(skin_pred[i], eps);
    const real y = clamp_prob(body_pred[i], eps);
    const real ly = std::log(y), l1y = std::log(1 - y);
    sum += x * (-(x * ly + (1 - x) * l1y));
    if (grad_skin) {
      const bool inside = skin_pred[i] > eps && skin_pred[i] < 1 - eps;
      (*grad_skin)[i] = inside ? (-2 * x * ly - (1 - 2 * x) * l1y) / static_cast<real>(n) : 0.0;
    }
    if (grad_body) {
      const bool inside = body_pred[i] > eps && body_pred[i] < 1 - eps;
      (*grad_body)[i] = inside ? (-x * x / y + x * (1 - x) / (1 - y)) / static_cast<real>(n) : 0.0;
    }
  }
  return sum / static_cast<real>(n);
}

std::string LossBreakdown::first_non_finite() const {
  const std::pair<const char*, real> named[] = {
      {"ce[skin,stage1]", ce_skin1},   {"ce[body,stage1]", ce_body1},
      {"ce[skin,stage2]", ce_skin2},   {"ce[body,stage2]", ce_body2},
      {"crf[skin,stage1]", crf_skin1}, {"crf[body,stage1]", crf_body1},
      {"crf[skin,stage2]", crf_skin2}, {"crf[body,stage2]", crf_body2}};
  for (auto& [name, v] : named)
    if (!std::isfinite(v)) return name;
  for (std::size_t i = 0; i < wce.size(); ++i)
    if (!std::isfinite(wce[i])) return "wce[" + std::to_string(i) + "]";
  if (!std::isfinite(total)) return "total";
  return {};
}

// --- graph builders -------------------------------------------------------

namespace {

void check_pred(const ad::NodeP& pred, const char* op) {
  if (pred->value.shape.size() != 4 || pred->value.dim(1) != 1)
    throw ValidationError(std::string(op) + ": expected {N,1,H,W} prediction");
}

ad::NodeP make_per_sample(ad::Graph& g, Tensor vals, std::vector<ad::NodeP> parents,
                          std::function<void()> bw) {
  auto n = std::make_shared<ad::Node>();
  n->value = std::move(vals);
  for (auto& p : parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) {
    n->ensure_grad();
    n->backward = std::move(bw);
  }
  return g.track(n);
}

}  // namespace

ad::NodeP bce_per_sample(ad::Graph& g, ad::NodeP pred, Tensor target, real eps) {
  check_pred(pred, "bce_per_sample");
  require_same_shape(pred->value, target, "bce_per_sample");
  const int n = pred->value.dim(0);
  const std::size_t plane = pred->value.numel() / static_cast<std::size_t>(n);
  Tensor vals({n});
  for (int i = 0; i < n; ++i) {
    real s = 0;
    const real* o = pred->value.ptr() + static_cast<std::size_t>(i) * plane;
    const real* m = target.ptr() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const real oc = clamp_prob(o[j], eps);
      s += -(m[j] * std::log(oc) + (1 - m[j]) * std::log(1 - oc));
    }
    vals[static_cast<std::size_t>(i)] = s / static_cast<real>(plane);
  }
  auto tgt = std::make_shared<Tensor>(std::move(target));
  ad::NodeP pn = pred;
  auto result = make_per_sample(g, std::move(vals), {pn}, nullptr);
  ad::Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, pn, tgt, n, plane, eps]() {
      if (!pn->needs_grad) return;
      pn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const real gi = rp->grad[static_cast<std::size_t>(i)] / static_cast<real>(plane);
        const real* o = pn->value.ptr() + static_cast<std::size_t>(i) * plane;
        const real* m = tgt->ptr() + static_cast<std::size_t>(i) * plane;
        real* d = pn->grad.ptr() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          if (o[j] <= eps || o[j] >= 1 - eps) continue;
          d[j] += gi * (o[j] - m[j]) / (o[j] * (1 - o[j]));
        }
      }
    };
  return result;
}

ad::NodeP crf_per_sample(ad::Graph& g, ad::NodeP pred,
                         std::shared_ptr<const std::vector<Affinity>> affinities) {
  check_pred(pred, "crf_per_sample");
  const int n = pred->value.dim(0);
  if (static_cast<int>(affinities->size()) != n)
    throw ValidationError("crf_per_sample: need one affinity per sample");
  const int h = pred->value.dim(2), w = pred->value.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor vals({n});
  for (int i = 0; i < n; ++i) {
    Tensor slice({h, w});
    std::copy(pred->value.ptr() + static_cast<std::size_t>(i) * plane,
              pred->value.ptr() + static_cast<std::size_t>(i + 1) * plane, slice.ptr());
    vals[static_cast<std::size_t>(i)] = crf_loss(slice, (*affinities)[static_cast<std::size_t>(i)]);
  }
  ad::NodeP pn = pred;
  auto result = make_per_sample(g, std::move(vals), {pn}, nullptr);
  ad::Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, pn, affinities, n, h, w, plane]() {
      if (!pn->needs_grad) return;
      pn->ensure_grad();
      Tensor slice({h, w}), grad({h, w});
      for (int i = 0; i < n; ++i) {
        std::copy(pn->value.ptr() + static_cast<std::size_t>(i) * plane,
                  pn->value.ptr() + static_cast<std::size_t>(i + 1) * plane, slice.ptr());
        crf_loss(slice, (*affinities)[static_cast<std::size_t>(i)], &grad);
        const real gi = rp->grad[static_cast<std::size_t>(i)];
        real* d = pn->grad.ptr() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) d[j] += gi * grad[j];
      }
    };
  return result;
}

ad::NodeP wce_per_sample(ad::Graph& g, ad::NodeP skin, ad::NodeP body, real eps) {
  check_pred(skin, "wce_per_sample");
  require_same_shape(skin->value, body->value, "wce_per_sample");
  const int n = skin->value.dim(0);
  const std::size_t plane = skin->value.numel() / static_cast<std::size_t>(n);
  Tensor vals({n});
  for (int i = 0; i < n; ++i) {
    real s = 0;
    const real* xs = skin->value.ptr() + static_cast<std::size_t>(i) * plane;
    const real* ys = body->value.ptr() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const real x = clamp_prob(xs[j], eps), y = clamp_prob(ys[j], eps);
      s += x * (-(x * std::log(y) + (1 - x) * std::log(1 - y)));
    }
    vals[static_cast<std::size_t>(i)] = s / static_cast<real>(plane);
  }
  ad::NodeP sn = skin, bn = body;
  auto result = make_per_sample(g, std::move(vals), {sn, bn}, nullptr);
  ad::Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, sn, bn, n, plane, eps]() {
      for (int i = 0; i < n; ++i) {
        const real gi = rp->grad[static_cast<std::size_t>(i)] / static_cast<real>(plane);
        const real* xs = sn->value.ptr() + static_cast<std::size_t>(i) * plane;
        const real* ys = bn->value.ptr() + static_cast<std::size_t>(i) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const real x = clamp_prob(xs[j], eps), y = clamp_prob(ys[j], eps);
          if (sn->needs_grad && xs[j] > eps && xs[j] < 1 - eps) {
            sn->ensure_grad();
            sn->grad[static_cast<std::size_t>(i) * plane + j] +=
                gi * (-2 * x * std::log(y) - (1 - 2 * x) * std::log(1 - y));
          }
          if (bn->needs_grad && ys[j] > eps && ys[j] < 1 - eps) {
            bn->ensure_grad();
            bn->grad[static_cast<std::size_t>(i) * plane + j] +=
                gi * (-x * x / y + x * (1 - x) / (1 - y));
          }
        }
      }
    };
  return result;
}

TotalLoss build_total_loss(ad::Graph& g, const TraceNodes& trace, const BatchTargets& targets,
                           const LossConfig& cfg) {
  cfg.validate();
  const int n = trace.o_skin->value.dim(0);
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (targets.skin_flags[idx] != 0.0 && targets.skin_flags[idx] != 1.0)
      throw ValidationError("skin flag must be 0 or 1");
    if (targets.body_flags[idx] != 0.0 && targets.body_flags[idx] != 1.0)
      throw ValidationError("body flag must be 0 or 1");
  }
  Tensor inv_skin({n}), inv_body({n});
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    inv_skin[i] = 1.0 - targets.skin_flags[i];
    inv_body[i] = 1.0 - targets.body_flags[i];
  }
  const bool two_stage = trace.o2_skin != nullptr;

  std::vector<std::pair<real, ad::NodeP>> terms;
  LossBreakdown bd;
  bd.has_stage2 = two_stage;

  auto ce_term = [&](ad::NodeP pred, const Tensor& masks, const Tensor& flags) {
    auto v = bce_per_sample(g, pred, masks, cfg.epsilon);
    auto s = weighted_mean(g, v, flags);
    terms.emplace_back(1.0, s);
    return s->value[0];
  };
  auto crf_term = [&](ad::NodeP pred, const Tensor& inv_flags) {
    auto v = crf_per_sample(g, pred, targets.affinities);
    auto s = weighted_mean(g, v, inv_flags);
    terms.emplace_back(cfg.lambda1, s);
    return s->value[0];
  };
  Tensor ones({n}, 1.0);
  auto wce_term = [&](ad::NodeP x, ad::NodeP y) {
    auto v = wce_per_sample(g, x, y, cfg.epsilon);
    auto s = weighted_mean(g, v, ones);
    terms.emplace_back(cfg.lambda2, s);
    return s->value[0];
  };

  bd.ce_skin1 = ce_term(trace.o_skin, targets.skin_masks, targets.skin_flags);
  bd.ce_body1 = ce_term(trace.o_body, targets.body_masks, targets.body_flags);
  bd.crf_skin1 = crf_term(trace.o_skin, inv_skin);
  bd.crf_body1 = crf_term(trace.o_body, inv_body);
  if (two_stage) {
    bd.ce_skin2 = ce_term(trace.o2_skin, targets.skin_masks, targets.skin_flags);
    bd.ce_body2 = ce_term(trace.o2_body, targets.body_masks, targets.body_flags);
    bd.crf_skin2 = crf_term(trace.o2_skin, inv_skin);
    bd.crf_body2 = crf_term(trace.o2_body, inv_body);
  }

  if (cfg.wce_pairing == LossConfig::WcePairing::matched_stage) {
    bd.wce.push_back(wce_term(trace.o_skin, trace.o_body));
    if (two_stage) bd.wce.push_back(wce_term(trace.o2_skin, trace.o2_body));
  } else {
    bd.wce.push_back(wce_term(trace.o_skin, trace.o_body));
    if (two_stage) {
      bd.wce.push_back(wce_term(trace.o_skin, trace.o2_body));
      bd.wce.push_back(wce_term(trace.o2_skin, trace.o_body));
      bd.wce.push_back(wce_term(trace.o2_skin, trace.o2_body));
    }
  }

  TotalLoss out;
  out.node = add_scaled(g, terms);
  out.breakdown = bd;
  out.breakdown.total = out.breakdown.recombine(cfg);
  return out;
}

}  // namespace skinseg
