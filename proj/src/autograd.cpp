#include "sslseg/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "sslseg/errors.hpp"
#include "sslseg/simd.hpp"

namespace sslseg::ag {

namespace {

std::size_t product(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ConfigError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) throw ConfigError(std::string(op) + ": unexpected tensor rank");
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (product(shape) != data_.size()) throw ConfigError("reshape: element count mismatch");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void backward(const Var& root) {
  if (root->value.numel() != 1) throw ConfigError("backward: root must be a scalar");
  if (!root->requires_grad) return;
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->grad_buffer();
      n->backward_fn(*n);
    }
  }
}

namespace {

// Unfolds one image [Ci, H, W] into [Ci*k*k, Ho*Wo].
void im2col(const double* x, int Ci, int H, int W, int k, int pad, int Ho, int Wo, double* col) {
  for (int c = 0; c < Ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + (sz(c * k + ky) * sz(k) + sz(kx)) * sz(Ho) * sz(Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy + ky - pad;
          double* dst = row + sz(oy) * sz(Wo);
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (sz(c) * sz(H) + sz(iy)) * sz(W);
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox + kx - pad;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, int Ci, int H, int W, int k, int pad, int Ho, int Wo, double* dx) {
  for (int c = 0; c < Ci; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + (sz(c * k + ky) * sz(k) + sz(kx)) * sz(Ho) * sz(Wo);
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const double* src = row + sz(oy) * sz(Wo);
          double* dst = dx + (sz(c) * sz(H) + sz(iy)) * sz(W);
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox + kx - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  const int B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int Co = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != Ci || wv.dim(3) != k) throw ConfigError("conv2d: weight shape mismatch");
  const int Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
  if (Ho <= 0 || Wo <= 0) throw ConfigError("conv2d: kernel larger than padded input");
  if (bias && bias->value.numel() != sz(Co)) throw ConfigError("conv2d: bias shape mismatch");
  const int Kc = Ci * k * k, P = Ho * Wo;
  const bool direct = (k == 1 && pad == 0);

  const auto& kern = simd::kernels();
  Tensor out({B, Co, Ho, Wo});
  std::vector<double> col(direct ? 0 : sz(Kc) * sz(P));
  for (int b = 0; b < B; ++b) {
    const double* xb = xv.data() + sz(b) * sz(Ci) * sz(H) * sz(W);
    const double* cb = xb;
    if (!direct) {
      im2col(xb, Ci, H, W, k, pad, Ho, Wo, col.data());
      cb = col.data();
    }
    double* ob = out.data() + sz(b) * sz(Co) * sz(P);
    if (bias)
      for (int c = 0; c < Co; ++c) std::fill(ob + sz(c) * sz(P), ob + sz(c + 1) * sz(P), bias->value[sz(c)]);
    kern.gemm_nn(Co, P, Kc, wv.data(), cb, ob);
  }

  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [=](Node& self) {
    const Var& xp = self.parents[0];
    const Var& wp = self.parents[1];
    const Var bp = self.parents.size() > 2 ? self.parents[2] : nullptr;
    const auto& kk = simd::kernels();
    const Tensor& g = self.grad;
    std::vector<double> colb(direct ? 0 : sz(Kc) * sz(P));
    std::vector<double> dcol(direct ? 0 : sz(Kc) * sz(P));
    for (int b = 0; b < B; ++b) {
      const double* gb = g.data() + sz(b) * sz(Co) * sz(P);
      const double* xb = xp->value.data() + sz(b) * sz(Ci) * sz(H) * sz(W);
      if (wp->requires_grad) {
        const double* cb = xb;
        if (!direct) {
          im2col(xb, Ci, H, W, k, pad, Ho, Wo, colb.data());
          cb = colb.data();
        }
        kk.gemm_nt(Co, Kc, P, gb, cb, wp->grad_buffer().data());
      }
      if (bp && bp->requires_grad) {
        double* db = bp->grad_buffer().data();
        for (int c = 0; c < Co; ++c) db[c] += std::accumulate(gb + sz(c) * sz(P), gb + sz(c + 1) * sz(P), 0.0);
      }
      if (xp->requires_grad) {
        double* dxb = xp->grad_buffer().data() + sz(b) * sz(Ci) * sz(H) * sz(W);
        if (direct) {
          kk.gemm_tn(Kc, P, Co, wp->value.data(), gb, dxb);
        } else {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          kk.gemm_tn(Kc, P, Co, wp->value.data(), gb, dcol.data());
          col2im_add(dcol.data(), Ci, H, W, k, pad, Ho, Wo, dxb);
        }
      }
    }
  });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormStats& stats, BnMode mode,
               double momentum, double eps) {
  const Tensor& xv = x->value;
  if (xv.rank() != 2 && xv.rank() != 4) throw ConfigError("batch_norm: input must be [B,C] or [B,C,H,W]");
  const int B = xv.dim(0), C = xv.dim(1);
  const std::size_t S = xv.rank() == 4 ? sz(xv.dim(2)) * sz(xv.dim(3)) : 1;
  if (gamma->value.numel() != sz(C) || beta->value.numel() != sz(C) || stats.mean.numel() != sz(C) ||
      stats.var.numel() != sz(C))
    throw ConfigError("batch_norm: parameter shape mismatch");
  const std::size_t N = sz(B) * S;
  if (mode == BnMode::train && N < 2) throw ConfigError("batch_norm: training mode needs more than one value per channel");

  auto at = [C, S](int b, int c) { return (sz(b) * sz(C) + sz(c)) * S; };
  Tensor normalized(xv.shape());
  Tensor out(xv.shape());
  std::vector<double> inv_std(sz(C));
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == BnMode::train) {
      for (int b = 0; b < B; ++b) {
        const double* p = xv.data() + at(b, c);
        for (std::size_t s = 0; s < S; ++s) mean += p[s];
      }
      mean /= static_cast<double>(N);
      for (int b = 0; b < B; ++b) {
        const double* p = xv.data() + at(b, c);
        for (std::size_t s = 0; s < S; ++s) var += (p[s] - mean) * (p[s] - mean);
      }
      const double unbiased = var / static_cast<double>(N - 1);
      var /= static_cast<double>(N);
      stats.mean[sz(c)] = (1.0 - momentum) * stats.mean[sz(c)] + momentum * mean;
      stats.var[sz(c)] = (1.0 - momentum) * stats.var[sz(c)] + momentum * unbiased;
    } else {
      mean = stats.mean[sz(c)];
      var = stats.var[sz(c)];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[sz(c)] = is;
    const double g = gamma->value[sz(c)], bt = beta->value[sz(c)];
    for (int b = 0; b < B; ++b) {
      const double* p = xv.data() + at(b, c);
      double* nh = normalized.data() + at(b, c);
      double* o = out.data() + at(b, c);
      for (std::size_t s = 0; s < S; ++s) {
        nh[s] = (p[s] - mean) * is;
        o[s] = g * nh[s] + bt;
      }
    }
  }

  return make_op(std::move(out), {x, gamma, beta},
                 [=, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
    const Var& xp = self.parents[0];
    const Var& gp = self.parents[1];
    const Var& bp = self.parents[2];
    const Tensor& dy = self.grad;
    for (int c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int b = 0; b < B; ++b) {
        const double* d = dy.data() + at(b, c);
        const double* nh = normalized.data() + at(b, c);
        for (std::size_t s = 0; s < S; ++s) {
          sum_dy += d[s];
          sum_dy_xhat += d[s] * nh[s];
        }
      }
      if (gp->requires_grad) gp->grad_buffer()[sz(c)] += sum_dy_xhat;
      if (bp->requires_grad) bp->grad_buffer()[sz(c)] += sum_dy;
      if (!xp->requires_grad) continue;
      const double g = gp->value[sz(c)] * inv_std[sz(c)];
      Tensor& dx = xp->grad_buffer();
      for (int b = 0; b < B; ++b) {
        const double* d = dy.data() + at(b, c);
        const double* nh = normalized.data() + at(b, c);
        double* o = dx.data() + at(b, c);
        if (mode == BnMode::train) {
          const double inv_n = 1.0 / static_cast<double>(N);
          for (std::size_t s = 0; s < S; ++s)
            o[s] += g * (d[s] - inv_n * sum_dy - nh[s] * inv_n * sum_dy_xhat);
        } else {
          for (std::size_t s = 0; s < S; ++s) o[s] += g * d[s];
        }
      }
    }
  });
}

Var relu(const Var& x) {
  Tensor out = x->value;
  for (double& v : out.span()) v = v > 0.0 ? v : 0.0;
  return make_op(std::move(out), {x}, [](Node& self) {
    const Var& xp = self.parents[0];
    Tensor& dx = xp->grad_buffer();
    const Tensor& xv = xp->value;
    for (std::size_t i = 0; i < xv.numel(); ++i)
      if (xv[i] > 0.0) dx[i] += self.grad[i];
  });
}

Var max_pool2(const Var& x) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "max_pool2");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % 2 || W % 2) throw ConfigError("max_pool2: spatial size must be even");
  const int Ho = H / 2, Wo = W / 2;
  Tensor out({B, C, Ho, Wo});
  std::vector<std::uint32_t> arg(out.numel());
  std::size_t o = 0;
  for (int bc = 0; bc < B * C; ++bc) {
    const std::size_t base = sz(bc) * sz(H) * sz(W);
    for (int y = 0; y < Ho; ++y) {
      for (int xx = 0; xx < Wo; ++xx, ++o) {
        std::size_t best = base + sz(2 * y) * sz(W) + sz(2 * xx);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = base + sz(2 * y + dy) * sz(W) + sz(2 * xx + dx);
            if (xv[i] > xv[best]) best = i;
          }
        out[o] = xv[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return make_op(std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < arg.size(); ++i) dx[arg[i]] += self.grad[i];
  });
}

Var upsample2(const Var& x) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "upsample2");
  const int B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({B, C, 2 * H, 2 * W});
  for (int bc = 0; bc < B * C; ++bc) {
    const double* src = xv.data() + sz(bc) * sz(H) * sz(W);
    double* dst = out.data() + sz(bc) * sz(4 * H * W);
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx) dst[sz(y) * sz(2 * W) + sz(xx)] = src[sz(y / 2) * sz(W) + sz(xx / 2)];
  }
  return make_op(std::move(out), {x}, [=](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (int bc = 0; bc < B * C; ++bc) {
      double* d = dx.data() + sz(bc) * sz(H) * sz(W);
      const double* g = self.grad.data() + sz(bc) * sz(4 * H * W);
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx) d[sz(y / 2) * sz(W) + sz(xx / 2)] += g[sz(y) * sz(2 * W) + sz(xx)];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  require_rank(av, 4, "concat_channels");
  require_rank(bv, 4, "concat_channels");
  if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3))
    throw ConfigError("concat_channels: batch/spatial mismatch");
  const int B = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
  const std::size_t S = sz(av.dim(2)) * sz(av.dim(3));
  Tensor out({B, Ca + Cb, av.dim(2), av.dim(3)});
  for (int n = 0; n < B; ++n) {
    std::copy_n(av.data() + sz(n) * sz(Ca) * S, sz(Ca) * S, out.data() + sz(n) * sz(Ca + Cb) * S);
    std::copy_n(bv.data() + sz(n) * sz(Cb) * S, sz(Cb) * S, out.data() + (sz(n) * sz(Ca + Cb) + sz(Ca)) * S);
  }
  return make_op(std::move(out), {a, b}, [=](Node& self) {
    const Var& ap = self.parents[0];
    const Var& bp = self.parents[1];
    for (int n = 0; n < B; ++n) {
      const double* g = self.grad.data() + sz(n) * sz(Ca + Cb) * S;
      if (ap->requires_grad) {
        double* d = ap->grad_buffer().data() + sz(n) * sz(Ca) * S;
        for (std::size_t i = 0; i < sz(Ca) * S; ++i) d[i] += g[i];
      }
      if (bp->requires_grad) {
        double* d = bp->grad_buffer().data() + sz(n) * sz(Cb) * S;
        for (std::size_t i = 0; i < sz(Cb) * S; ++i) d[i] += g[sz(Ca) * S + i];
      }
    }
  });
}

Var flatten(const Var& x) {
  const Tensor& xv = x->value;
  const int B = xv.dim(0);
  Tensor out = xv.reshaped({B, static_cast<int>(xv.numel() / sz(B))});
  return make_op(std::move(out), {x}, [](Node& self) {
    Tensor& dx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += self.grad[i];
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  const int B = xv.dim(0), I = xv.dim(1), O = wv.dim(0);
  if (wv.dim(1) != I) throw ConfigError("linear: weight shape mismatch");
  if (bias && bias->value.numel() != sz(O)) throw ConfigError("linear: bias shape mismatch");
  Tensor out({B, O});
  if (bias)
    for (int b = 0; b < B; ++b) std::copy_n(bias->value.data(), O, out.data() + sz(b) * sz(O));
  simd::kernels().gemm_nt(B, O, I, xv.data(), wv.data(), out.data());
  std::vector<Var> parents{x, w};
  if (bias) parents.push_back(bias);
  return make_op(std::move(out), std::move(parents), [=](Node& self) {
    const Var& xp = self.parents[0];
    const Var& wp = self.parents[1];
    const auto& kk = simd::kernels();
    if (wp->requires_grad) kk.gemm_tn(O, I, B, self.grad.data(), xp->value.data(), wp->grad_buffer().data());
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      double* db = self.parents[2]->grad_buffer().data();
      for (int b = 0; b < B; ++b)
        for (int o = 0; o < O; ++o) db[o] += self.grad[sz(b) * sz(O) + sz(o)];
    }
    if (xp->requires_grad) kk.gemm_nn(B, I, O, self.grad.data(), wp->value.data(), xp->grad_buffer().data());
  });
}

}  // namespace sslseg::ag
