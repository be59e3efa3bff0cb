#include "skinseg/graph.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "skinseg/errors.hpp"

namespace skinseg::ad {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

NodeP Graph::constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  tape_.push_back(n);
  return n;
}

NodeP Graph::variable(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->needs_grad = true;
  n->ensure_grad();
  tape_.push_back(n);
  return n;
}

NodeP Graph::use(Param& p) {
  if (!per_use_param_leaves) {
    auto it = cached_.find(&p);
    if (it != cached_.end()) return it->second;
  }
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->param = &p;
  n->needs_grad = p.trainable;
  if (n->needs_grad) n->ensure_grad();
  tape_.push_back(n);
  uses_.push_back({&p, n, use_scope});
  if (!per_use_param_leaves) cached_[&p] = n;
  return n;
}

NodeP Graph::track(NodeP n) {
  tape_.push_back(n);
  return tape_.back();
}

void Graph::backward(const NodeP& root) {
  if (root->value.numel() != 1) throw ValidationError("backward root must be scalar");
  root->ensure_grad();
  root->grad.fill(0.0);
  root->grad[0] = 1.0;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (n.needs_grad && n.backward) n.backward();
  }
  for (auto& u : uses_) {
    if (u.param->trainable && u.node->grad.numel() == u.param->grad.numel()) {
      for (std::size_t i = 0; i < u.param->grad.numel(); ++i)
        u.param->grad[i] += u.node->grad[i];
    }
  }
}

namespace {

NodeP make_op(Graph& g, Tensor value, std::vector<NodeP> parents, std::function<void()> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (auto& p : parents)
    if (p->needs_grad) n->needs_grad = true;
  if (n->needs_grad) {
    n->ensure_grad();
    n->backward = std::move(bw);
  }
  return g.track(n);
}

void check4(const NodeP& x, const char* op) {
  if (x->value.shape.size() != 4) throw ValidationError(std::string(op) + ": expected NCHW input");
}

// im2col for 3x3/1x1 "same" convolutions: output is (Cin*K*K) x (N*H*W),
// row-major, batch folded into columns.
void im2col(const Tensor& x, int k, std::vector<real>& col) {
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int pad = k / 2;
  const std::size_t cols = static_cast<std::size_t>(n) * h * w;
  col.assign(static_cast<std::size_t>(cin) * k * k * cols, 0.0);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t r = (static_cast<std::size_t>(c) * k + ky) * k + kx;
        real* dst_row = col.data() + r * cols;
        for (int ni = 0; ni < n; ++ni) {
          const real* src = x.ptr() + (static_cast<std::size_t>(ni) * cin + c) * plane;
          real* dst = dst_row + static_cast<std::size_t>(ni) * plane;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            const int x_lo = pad - kx > 0 ? pad - kx : 0;
            const int x_hi = w - 1 + pad - kx < w - 1 ? w - 1 + pad - kx : w - 1;
            const real* s = src + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad);
            real* d = dst + static_cast<std::size_t>(y) * w + x_lo;
            for (int xx = x_lo; xx <= x_hi; ++xx) *d++ = *s++;
          }
        }
      }
    }
  }
}

void col2im_add(const std::vector<real>& col, int n, int cin, int h, int w, int k, Tensor& dx) {
  const int pad = k / 2;
  const std::size_t cols = static_cast<std::size_t>(n) * h * w;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const std::size_t r = (static_cast<std::size_t>(c) * k + ky) * k + kx;
        const real* src_row = col.data() + r * cols;
        for (int ni = 0; ni < n; ++ni) {
          real* dst = dx.ptr() + (static_cast<std::size_t>(ni) * cin + c) * plane;
          const real* src = src_row + static_cast<std::size_t>(ni) * plane;
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            const int x_lo = pad - kx > 0 ? pad - kx : 0;
            const int x_hi = w - 1 + pad - kx < w - 1 ? w - 1 + pad - kx : w - 1;
            real* d = dst + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad);
            const real* s = src + static_cast<std::size_t>(y) * w + x_lo;
            for (int xx = x_lo; xx <= x_hi; ++xx) *d++ += *s++;
          }
        }
      }
    }
  }
}

// Fold {N,C,H,W} into a (C x N*H*W) row-major matrix and back.
void fold_channels(const Tensor& t, std::vector<real>& out) {
  const int n = t.dim(0), c = t.dim(1);
  const std::size_t plane = static_cast<std::size_t>(t.dim(2)) * t.dim(3);
  out.resize(static_cast<std::size_t>(c) * n * plane);
  for (int ci = 0; ci < c; ++ci)
    for (int ni = 0; ni < n; ++ni)
      std::copy(t.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane,
                t.ptr() + (static_cast<std::size_t>(ni) * c + ci + 1) * plane,
                out.data() + ci * (n * plane) + static_cast<std::size_t>(ni) * plane);
}

void unfold_channels(const std::vector<real>& m, int n, int c, int h, int w, Tensor& t) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci)
    for (int ni = 0; ni < n; ++ni)
      std::copy(m.data() + ci * (n * plane) + static_cast<std::size_t>(ni) * plane,
                m.data() + ci * (n * plane) + static_cast<std::size_t>(ni + 1) * plane,
                t.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane);
}

}  // namespace

NodeP conv2d(Graph& g, NodeP x, Param& w, Param* bias) {
  check4(x, "conv2d");
  if (w.value.shape.size() != 4) throw ValidationError("conv2d: weight must be {Cout,Cin,K,K}");
  const int n = x->value.dim(0), cin = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
  const int cout = w.value.dim(0), k = w.value.dim(2);
  if (w.value.dim(1) != cin) throw ValidationError("conv2d: channel mismatch");
  NodeP wn = g.use(w);
  NodeP bn = bias ? g.use(*bias) : nullptr;

  const std::size_t cols = static_cast<std::size_t>(n) * h * wd;
  const int krows = cin * k * k;
  std::vector<real> col;
  im2col(x->value, k, col);

  Tensor out({n, cout, h, wd});
  {
    std::vector<real> y(static_cast<std::size_t>(cout) * cols);
    CMapRM wm(wn->value.ptr(), cout, krows);
    CMapRM cm(col.data(), krows, static_cast<Eigen::Index>(cols));
    MapRM ym(y.data(), cout, static_cast<Eigen::Index>(cols));
    ym.noalias() = wm * cm;
    unfold_channels(y, n, cout, h, wd, out);
  }
  if (bn) {
    const std::size_t plane = static_cast<std::size_t>(h) * wd;
    for (int ni = 0; ni < n; ++ni)
      for (int c = 0; c < cout; ++c) {
        real* p = out.ptr() + (static_cast<std::size_t>(ni) * cout + c) * plane;
        const real b = bn->value[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < plane; ++i) p[i] += b;
      }
  }

  NodeP xn = x;
  std::vector<NodeP> parents{xn, wn};
  if (bn) parents.push_back(bn);
  auto result = make_op(g, std::move(out), parents, nullptr);
  Node* rp = result.get();
  if (result->needs_grad) {
    result->backward = [rp, xn, wn, bn, n, cin, cout, h, wd, k, krows, cols]() {
      std::vector<real> dy;
      fold_channels(rp->grad, dy);
      CMapRM dym(dy.data(), cout, static_cast<Eigen::Index>(cols));
      if (wn->needs_grad) {
        std::vector<real> col;
        im2col(xn->value, k, col);
        CMapRM cm(col.data(), krows, static_cast<Eigen::Index>(cols));
        MapRM dwm(wn->grad.ptr(), cout, krows);
        dwm.noalias() += dym * cm.transpose();
      }
      if (bn && bn->needs_grad) {
        for (int c = 0; c < cout; ++c)
          bn->grad[static_cast<std::size_t>(c)] += dym.row(c).sum();
      }
      if (xn->needs_grad) {
        xn->ensure_grad();
        std::vector<real> dcol(static_cast<std::size_t>(krows) * cols);
        CMapRM wm(wn->value.ptr(), cout, krows);
        MapRM dcm(dcol.data(), krows, static_cast<Eigen::Index>(cols));
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol, n, cin, h, wd, k, xn->grad);
      }
    };
  }
  return result;
}

NodeP batchnorm(Graph& g, NodeP x, Param& gamma, Param& beta, BatchNormState& st, real momentum,
                real eps) {
  check4(x, "batchnorm");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const real m = static_cast<real>(n) * static_cast<real>(plane);
  NodeP gn = g.use(gamma);
  NodeP bn = g.use(beta);

  auto mean = std::make_shared<std::vector<real>>(c, 0.0);
  auto invstd = std::make_shared<std::vector<real>>(c, 0.0);
  if (g.training) {
    for (int ci = 0; ci < c; ++ci) {
      real s = 0.0, s2 = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const real* p = x->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          s += p[i];
          s2 += p[i] * p[i];
        }
      }
      const real mu = s / m;
      real var = s2 / m - mu * mu;
      if (var < 0) var = 0;
      (*mean)[ci] = mu;
      (*invstd)[ci] = 1.0 / std::sqrt(var + eps);
      st.running_mean[static_cast<std::size_t>(ci)] =
          momentum * st.running_mean[static_cast<std::size_t>(ci)] + (1 - momentum) * mu;
      st.running_var[static_cast<std::size_t>(ci)] =
          momentum * st.running_var[static_cast<std::size_t>(ci)] + (1 - momentum) * var;
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      (*mean)[ci] = st.running_mean[static_cast<std::size_t>(ci)];
      (*invstd)[ci] = 1.0 / std::sqrt(st.running_var[static_cast<std::size_t>(ci)] + eps);
    }
  }

  Tensor out(x->value.shape);
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const real* p = x->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      real* o = out.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      const real mu = (*mean)[ci], is = (*invstd)[ci];
      const real ga = gn->value[static_cast<std::size_t>(ci)], be = bn->value[static_cast<std::size_t>(ci)];
      for (std::size_t i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is * ga + be;
    }

  const bool train_stats = g.training;
  NodeP xn = x;
  auto result = make_op(g, std::move(out), {xn, gn, bn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad) {
    result->backward = [rp, xn, gn, bn, mean, invstd, n, c, plane, m, train_stats]() {
      for (int ci = 0; ci < c; ++ci) {
        const real mu = (*mean)[ci], is = (*invstd)[ci];
        const real ga = gn->value[static_cast<std::size_t>(ci)];
        real s1 = 0.0, s2 = 0.0;
        for (int ni = 0; ni < n; ++ni) {
          const real* dy = rp->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
          const real* xv = xn->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            s1 += dy[i];
            s2 += dy[i] * (xv[i] - mu) * is;
          }
        }
        if (gn->needs_grad) gn->grad[static_cast<std::size_t>(ci)] += s2;
        if (bn->needs_grad) bn->grad[static_cast<std::size_t>(ci)] += s1;
        if (xn->needs_grad) {
          xn->ensure_grad();
          for (int ni = 0; ni < n; ++ni) {
            const real* dy = rp->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
            const real* xv = xn->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
            real* dx = xn->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
            if (train_stats) {
              for (std::size_t i = 0; i < plane; ++i) {
                const real xhat = (xv[i] - mu) * is;
                dx[i] += ga * is * (dy[i] - s1 / m - xhat * s2 / m);
              }
            } else {
              for (std::size_t i = 0; i < plane; ++i) dx[i] += ga * is * dy[i];
            }
          }
        }
      }
    };
  }
  return result;
}

NodeP relu(Graph& g, NodeP x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x->value[i] > 0 ? x->value[i] : 0.0;
  NodeP xn = x;
  auto result = make_op(g, std::move(out), {xn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, xn]() {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < rp->grad.numel(); ++i)
        if (xn->value[i] > 0) xn->grad[i] += rp->grad[i];
    };
  return result;
}

NodeP sigmoid(Graph& g, NodeP x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  NodeP xn = x;
  auto result = make_op(g, std::move(out), {xn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, xn]() {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (std::size_t i = 0; i < rp->grad.numel(); ++i) {
        const real y = rp->value[i];
        xn->grad[i] += rp->grad[i] * y * (1.0 - y);
      }
    };
  return result;
}

NodeP maxpool2(Graph& g, NodeP x) {
  check4(x, "maxpool2");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  if (h % 2 || w % 2) throw ValidationError("maxpool2: spatial size must be even");
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.numel());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::size_t oi = 0;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const real* p = x->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx, ++oi) {
          const std::size_t base = static_cast<std::size_t>(2 * y) * w + 2 * xx;
          std::size_t best = base;
          real bv = p[base];
          const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
          for (std::size_t k = 0; k < 3; ++k)
            if (p[cand[k]] > bv) {
              bv = p[cand[k]];
              best = cand[k];
            }
          out[oi] = bv;
          (*argmax)[oi] = static_cast<std::uint32_t>(best);
        }
    }
  NodeP xn = x;
  auto result = make_op(g, std::move(out), {xn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, xn, argmax, n, c, plane, oh, ow]() {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      std::size_t oi = 0;
      const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          real* dx = xn->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
          for (std::size_t i = 0; i < oplane; ++i, ++oi) dx[(*argmax)[oi]] += rp->grad[oi];
        }
    };
  return result;
}

NodeP upsample2(Graph& g, NodeP x) {
  check4(x, "upsample2");
  const int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = plane * 4;
  for (int ni = 0; ni < n; ++ni)
    for (int ci = 0; ci < c; ++ci) {
      const real* p = x->value.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
      real* o = out.ptr() + (static_cast<std::size_t>(ni) * c + ci) * oplane;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const real v = p[static_cast<std::size_t>(y) * w + xx];
          real* q = o + static_cast<std::size_t>(2 * y) * (2 * w) + 2 * xx;
          q[0] = v;
          q[1] = v;
          q[2 * w] = v;
          q[2 * w + 1] = v;
        }
    }
  NodeP xn = x;
  auto result = make_op(g, std::move(out), {xn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, xn, n, c, h, w, plane, oplane]() {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
          real* dx = xn->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * plane;
          const real* dy = rp->grad.ptr() + (static_cast<std::size_t>(ni) * c + ci) * oplane;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              const real* q = dy + static_cast<std::size_t>(2 * y) * (2 * w) + 2 * xx;
              dx[static_cast<std::size_t>(y) * w + xx] += q[0] + q[1] + q[2 * w] + q[2 * w + 1];
            }
        }
    };
  return result;
}

NodeP concat_channels(Graph& g, NodeP a, NodeP b) {
  check4(a, "concat");
  check4(b, "concat");
  const int n = a->value.dim(0), ca = a->value.dim(1), cb = b->value.dim(1);
  const int h = a->value.dim(2), w = a->value.dim(3);
  if (b->value.dim(0) != n || b->value.dim(2) != h || b->value.dim(3) != w)
    throw ValidationError("concat: spatial/batch mismatch");
  Tensor out({n, ca + cb, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ni = 0; ni < n; ++ni) {
    std::copy(a->value.ptr() + static_cast<std::size_t>(ni) * ca * plane,
              a->value.ptr() + static_cast<std::size_t>(ni + 1) * ca * plane,
              out.ptr() + static_cast<std::size_t>(ni) * (ca + cb) * plane);
    std::copy(b->value.ptr() + static_cast<std::size_t>(ni) * cb * plane,
              b->value.ptr() + static_cast<std::size_t>(ni + 1) * cb * plane,
              out.ptr() + (static_cast<std::size_t>(ni) * (ca + cb) + ca) * plane);
  }
  NodeP an = a, bn = b;
  auto result = make_op(g, std::move(out), {an, bn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, an, bn, n, ca, cb, plane]() {
      for (int ni = 0; ni < n; ++ni) {
        if (an->needs_grad) {
          an->ensure_grad();
          const real* src = rp->grad.ptr() + static_cast<std::size_t>(ni) * (ca + cb) * plane;
          real* dst = an->grad.ptr() + static_cast<std::size_t>(ni) * ca * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(ca) * plane; ++i) dst[i] += src[i];
        }
        if (bn->needs_grad) {
          bn->ensure_grad();
          const real* src = rp->grad.ptr() + (static_cast<std::size_t>(ni) * (ca + cb) + ca) * plane;
          real* dst = bn->grad.ptr() + static_cast<std::size_t>(ni) * cb * plane;
          for (std::size_t i = 0; i < static_cast<std::size_t>(cb) * plane; ++i) dst[i] += src[i];
        }
      }
    };
  return result;
}

NodeP detach(Graph& g, NodeP x) { return g.constant(x->value); }

NodeP add_scaled(Graph& g, const std::vector<std::pair<real, NodeP>>& terms) {
  Tensor out({1});
  for (auto& [s, n] : terms) {
    if (n->value.numel() != 1) throw ValidationError("add_scaled: terms must be scalar");
    out[0] += s * n->value[0];
  }
  std::vector<NodeP> parents;
  for (auto& [s, n] : terms) parents.push_back(n);
  auto result = make_op(g, std::move(out), parents, nullptr);
  Node* rp = result.get();
  auto terms_copy = terms;
  if (result->needs_grad)
    result->backward = [rp, terms_copy]() {
      for (auto& [s, n] : terms_copy)
        if (n->needs_grad) {
          n->ensure_grad();
          n->grad[0] += s * rp->grad[0];
        }
    };
  return result;
}

NodeP mix_per_sample(Graph& g, NodeP x, Tensor replacement, Tensor flags) {
  if (x->value.shape.size() != 4) throw ValidationError("mix_per_sample: expected NCHW input");
  require_same_shape(x->value, replacement, "mix_per_sample");
  const int n = x->value.dim(0);
  if (flags.shape != std::vector<int>{n}) throw ValidationError("mix_per_sample: flags must be {N}");
  const std::size_t row = x->value.numel() / static_cast<std::size_t>(n);
  Tensor out = x->value;
  for (int i = 0; i < n; ++i)
    if (flags[static_cast<std::size_t>(i)] != 0.0)
      std::copy(replacement.ptr() + static_cast<std::size_t>(i) * row,
                replacement.ptr() + static_cast<std::size_t>(i + 1) * row,
                out.ptr() + static_cast<std::size_t>(i) * row);
  NodeP xn = x;
  auto fl = std::make_shared<Tensor>(std::move(flags));
  auto result = make_op(g, std::move(out), {xn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, xn, fl, n, row]() {
      if (!xn->needs_grad) return;
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        if ((*fl)[static_cast<std::size_t>(i)] != 0.0) continue;
        const real* s = rp->grad.ptr() + static_cast<std::size_t>(i) * row;
        real* d = xn->grad.ptr() + static_cast<std::size_t>(i) * row;
        for (std::size_t j = 0; j < row; ++j) d[j] += s[j];
      }
    };
  return result;
}

NodeP weighted_mean(Graph& g, NodeP v, Tensor weights) {
  if (v->value.shape.size() != 1 || !v->value.same_shape(weights))
    throw ValidationError("weighted_mean: expects {N} values and matching weights");
  const std::size_t n = v->value.numel();
  Tensor out({1});
  for (std::size_t i = 0; i < n; ++i) out[0] += weights[i] * v->value[i];
  out[0] /= static_cast<real>(n);
  NodeP vn = v;
  auto wts = std::make_shared<Tensor>(std::move(weights));
  auto result = make_op(g, std::move(out), {vn}, nullptr);
  Node* rp = result.get();
  if (result->needs_grad)
    result->backward = [rp, vn, wts, n]() {
      if (!vn->needs_grad) return;
      vn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        vn->grad[i] += rp->grad[0] * (*wts)[i] / static_cast<real>(n);
    };
  return result;
}

}  // namespace skinseg::ad
