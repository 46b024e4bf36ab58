#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "finet/distributions.hpp"
#include "finet/imageops.hpp"
#include "finet/tensor.hpp"

namespace finet {

inline constexpr double kCrossEntropyEps = 1e-8;
inline constexpr double kProbSumTolerance = 1e-4;

// Eager reverse-mode autodiff over a per-sample tape. Nodes are stored
// by index; backward closures look values up through the tape so vector
// reallocation is harmless.
template <typename T>
class Tape {
 public:
  using Var = int;

  Var leaf(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), {}, nullptr});
    nodes_.back().grad = Tensor<T>(nodes_.back().value.shape());
    return static_cast<Var>(nodes_.size() - 1);
  }

  void set_back(Var v, std::function<void(Tape&)> back) { nodes_[v].back = std::move(back); }

  const Tensor<T>& val(Var v) const { return nodes_[v].value; }
  Tensor<T>& grad(Var v) { return nodes_[v].grad; }
  std::size_t node_count() const { return nodes_.size(); }

  void backward(Var root) {
    if (val(root).size() != 1) throw DimensionError("backward root must be scalar");
    grad(root)[0] = T(1);
    for (Var i = root; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

namespace ops {

template <typename T>
using Var = typename Tape<T>::Var;

// ---------------------------------------------------------------------------
// Convolution. Weights are {k, k, in, out} with k in {1, 3}; 3x3 pads
// by one, 1x1 does not pad. Output spatial size is ceil(size / stride).

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride, Tensor<T>& y) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int k = w.dim(0), co = w.dim(3);
  const int pad = (k - 1) / 2;
  const int ho = y.dim(0), wo = y.dim(1);
  const T* __restrict xp = x.data();
  const T* __restrict wp = w.data();
  const T* __restrict bp = b.data();
  T* __restrict yp = y.data();
  std::vector<T> acc(co);
  for (int oy = 0; oy < ho; ++oy) {
    const int iy0 = oy * stride - pad;
    for (int ox = 0; ox < wo; ++ox) {
      const int ix0 = ox * stride - pad;
      for (int c = 0; c < co; ++c) acc[c] = bp[c];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= h) continue;
        const int kx_lo = ix0 < 0 ? -ix0 : 0;
        const int kx_hi = ix0 + k > wd ? wd - ix0 : k;
        for (int kx = kx_lo; kx < kx_hi; ++kx) {
          const T* __restrict xrow = xp + (static_cast<std::size_t>(iy) * wd + (ix0 + kx)) * ci;
          const T* __restrict wrow = wp + (static_cast<std::size_t>(ky) * k + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const T xv = xrow[c];
            const T* __restrict wr = wrow + static_cast<std::size_t>(c) * co;
            for (int o = 0; o < co; ++o) acc[o] += xv * wr[o];
          }
        }
      }
      T* __restrict yrow = yp + (static_cast<std::size_t>(oy) * wo + ox) * co;
      for (int o = 0; o < co; ++o) yrow[o] = acc[o];
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride, const Tensor<T>& gy, Tensor<T>& gx,
                     Tensor<T>& gw, Tensor<T>& gb) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int k = w.dim(0), co = w.dim(3);
  const int pad = (k - 1) / 2;
  const int ho = gy.dim(0), wo = gy.dim(1);
  const T* __restrict xp = x.data();
  const T* __restrict wp = w.data();
  const T* __restrict gyp = gy.data();
  T* __restrict gxp = gx.data();
  T* __restrict gwp = gw.data();
  T* __restrict gbp = gb.data();
  for (int oy = 0; oy < ho; ++oy) {
    const int iy0 = oy * stride - pad;
    for (int ox = 0; ox < wo; ++ox) {
      const int ix0 = ox * stride - pad;
      const T* __restrict g = gyp + (static_cast<std::size_t>(oy) * wo + ox) * co;
      for (int o = 0; o < co; ++o) gbp[o] += g[o];
      for (int ky = 0; ky < k; ++ky) {
        const int iy = iy0 + ky;
        if (iy < 0 || iy >= h) continue;
        const int kx_lo = ix0 < 0 ? -ix0 : 0;
        const int kx_hi = ix0 + k > wd ? wd - ix0 : k;
        for (int kx = kx_lo; kx < kx_hi; ++kx) {
          const std::size_t xi = (static_cast<std::size_t>(iy) * wd + (ix0 + kx)) * ci;
          const std::size_t wi = (static_cast<std::size_t>(ky) * k + kx) * ci * co;
          for (int c = 0; c < ci; ++c) {
            const T xv = xp[xi + c];
            const T* __restrict wr = wp + wi + static_cast<std::size_t>(c) * co;
            T* __restrict gwr = gwp + wi + static_cast<std::size_t>(c) * co;
            T gx_acc = 0;
            for (int o = 0; o < co; ++o) {
              const T go = g[o];
              gx_acc += go * wr[o];
              gwr[o] += go * xv;
            }
            gxp[xi + c] += gx_acc;
          }
        }
      }
    }
  }
}

template <typename T>
Var<T> conv2d(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b, int stride = 1) {
  const auto& xv = tp.val(x);
  const auto& wv = tp.val(w);
  const auto& bv = tp.val(b);
  if (wv.rank() != 4 || (wv.dim(0) != 1 && wv.dim(0) != 3) || wv.dim(0) != wv.dim(1)) {
    throw DimensionError("conv weight must be {k,k,in,out} with k 1 or 3");
  }
  if (xv.rank() != 3 || xv.dim(2) != wv.dim(2)) throw DimensionError("conv input channels mismatch");
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(3)) throw DimensionError("conv bias mismatch");
  if (stride != 1 && stride != 2) throw DimensionError("conv stride must be 1 or 2");
  const int ho = (xv.dim(0) + stride - 1) / stride;
  const int wo = (xv.dim(1) + stride - 1) / stride;
  Tensor<T> y({ho, wo, wv.dim(3)});
  conv2d_forward(xv, wv, bv, stride, y);
  const Var<T> out = tp.leaf(std::move(y));
  tp.set_back(out, [out, x, w, b, stride](Tape<T>& t) {
    conv2d_backward(t.val(x), t.val(w), stride, t.grad(out), t.grad(x), t.grad(w), t.grad(b));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Fully connected: x {in}, w {in, out}, b {out}.

template <typename T>
Var<T> fc(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b) {
  const auto& xv = tp.val(x);
  const auto& wv = tp.val(w);
  const auto& bv = tp.val(b);
  if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(0) != xv.dim(0)) throw DimensionError("fc shape mismatch");
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(1)) throw DimensionError("fc bias mismatch");
  const int in = wv.dim(0), out_dim = wv.dim(1);
  Tensor<T> y({out_dim});
  for (int o = 0; o < out_dim; ++o) y[o] = bv[o];
  for (int i = 0; i < in; ++i) {
    const T xi = xv[i];
    for (int o = 0; o < out_dim; ++o) y[o] += xi * wv.at(i, o);
  }
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, w, b, in, out_dim](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& xv2 = t.val(x);
    const auto& wv2 = t.val(w);
    auto& gx = t.grad(x);
    auto& gw = t.grad(w);
    auto& gb = t.grad(b);
    for (int o = 0; o < out_dim; ++o) gb[o] += g[o];
    for (int i = 0; i < in; ++i) {
      T acc = 0;
      for (int o = 0; o < out_dim; ++o) {
        acc += g[o] * wv2.at(i, o);
        gw.at(i, o) += g[o] * xv2[i];
      }
      gx[i] += acc;
    }
  });
  return node;
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities.

template <typename T>
Var<T> relu(Tape<T>& tp, Var<T> x) {
  Tensor<T> y = tp.val(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& xv = t.val(x);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
  return node;
}

template <typename T>
Var<T> tanh_op(Tape<T>& tp, Var<T> x) {
  Tensor<T> y = tp.val(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& yv = t.val(node);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - yv[i] * yv[i]);
  });
  return node;
}

template <typename T>
Var<T> clamp(Tape<T>& tp, Var<T> x, T lo, T hi) {
  Tensor<T> y = tp.val(x);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::min(std::max(y[i], lo), hi);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, lo, hi](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& xv = t.val(x);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
    }
  });
  return node;
}

// ---------------------------------------------------------------------------
// Per-pixel softmax over the channel axis of an HWC map.

template <typename T>
Var<T> softmax_channels(Tape<T>& tp, Var<T> x) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 3) throw DimensionError("softmax_channels expects HWC");
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> y(xv.shape());
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      T mx = xv.at(py, px, 0);
      for (int k = 1; k < c; ++k) mx = std::max(mx, xv.at(py, px, k));
      T sum = 0;
      for (int k = 0; k < c; ++k) {
        const T e = std::exp(xv.at(py, px, k) - mx);
        y.at(py, px, k) = e;
        sum += e;
      }
      for (int k = 0; k < c; ++k) y.at(py, px, k) /= sum;
    }
  }
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, h, w, c](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& yv = t.val(node);
    auto& gx = t.grad(x);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        T dot = 0;
        for (int k = 0; k < c; ++k) dot += g.at(py, px, k) * yv.at(py, px, k);
        for (int k = 0; k < c; ++k) gx.at(py, px, k) += yv.at(py, px, k) * (g.at(py, px, k) - dot);
      }
    }
  });
  return node;
}

// ---------------------------------------------------------------------------
// Spatial rearrangement.

template <typename T>
Var<T> upsample2_nearest(Tape<T>& tp, Var<T> x) {
  const auto& xv = tp.val(x);
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> y({h * 2, w * 2, c});
  for (int py = 0; py < 2 * h; ++py) {
    for (int px = 0; px < 2 * w; ++px) {
      for (int k = 0; k < c; ++k) y.at(py, px, k) = xv.at(py / 2, px / 2, k);
    }
  }
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, h, w, c](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (int py = 0; py < 2 * h; ++py) {
      for (int px = 0; px < 2 * w; ++px) {
        for (int k = 0; k < c; ++k) gx.at(py / 2, px / 2, k) += g.at(py, px, k);
      }
    }
  });
  return node;
}

template <typename T>
Var<T> avgpool2(Tape<T>& tp, Var<T> x) {
  const auto& xv = tp.val(x);
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  if (h % 2 || w % 2) throw DimensionError("avgpool2 needs even spatial dims");
  Tensor<T> y({h / 2, w / 2, c});
  for (int py = 0; py < h / 2; ++py) {
    for (int px = 0; px < w / 2; ++px) {
      for (int k = 0; k < c; ++k) {
        y.at(py, px, k) = (xv.at(2 * py, 2 * px, k) + xv.at(2 * py, 2 * px + 1, k) +
                           xv.at(2 * py + 1, 2 * px, k) + xv.at(2 * py + 1, 2 * px + 1, k)) /
                          T(4);
      }
    }
  }
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, h, w, c](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (int py = 0; py < h / 2; ++py) {
      for (int px = 0; px < w / 2; ++px) {
        for (int k = 0; k < c; ++k) {
          const T q = g.at(py, px, k) / T(4);
          gx.at(2 * py, 2 * px, k) += q;
          gx.at(2 * py, 2 * px + 1, k) += q;
          gx.at(2 * py + 1, 2 * px, k) += q;
          gx.at(2 * py + 1, 2 * px + 1, k) += q;
        }
      }
    }
  });
  return node;
}

template <typename T>
Var<T> crop_box(Tape<T>& tp, Var<T> x, Box b) {
  Tensor<T> y = crop(tp.val(x), b);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, b](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    const int c = g.dim(2);
    for (int py = 0; py < b.height(); ++py) {
      for (int px = 0; px < b.width(); ++px) {
        for (int k = 0; k < c; ++k) gx.at(b.y0 + py, b.x0 + px, k) += g.at(py, px, k);
      }
    }
  });
  return node;
}

template <typename T>
Var<T> resize_bilinear_op(Tape<T>& tp, Var<T> x, int ho, int wo) {
  const auto& xv = tp.val(x);
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> y = resize_bilinear(xv, ho, wo);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, h, w, c, ho, wo](Tape<T>& t) {
    const auto ay = bilinear_axis<T>(h, ho);
    const auto ax = bilinear_axis<T>(w, wo);
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (int py = 0; py < ho; ++py) {
      const T wy = ay.w_hi[py];
      for (int px = 0; px < wo; ++px) {
        const T wx = ax.w_hi[px];
        for (int k = 0; k < c; ++k) {
          const T gv = g.at(py, px, k);
          gx.at(ay.lo[py], ax.lo[px], k) += (T(1) - wy) * (T(1) - wx) * gv;
          gx.at(ay.lo[py], ax.hi[px], k) += (T(1) - wy) * wx * gv;
          gx.at(ay.hi[py], ax.lo[px], k) += wy * (T(1) - wx) * gv;
          gx.at(ay.hi[py], ax.hi[px], k) += wy * wx * gv;
        }
      }
    }
  });
  return node;
}

// ---------------------------------------------------------------------------
// Shape plumbing.

template <typename T>
Var<T> concat_channels_op(Tape<T>& tp, const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const int h = tp.val(parts[0]).dim(0), w = tp.val(parts[0]).dim(1);
  int c_total = 0;
  for (auto p : parts) {
    if (tp.val(p).dim(0) != h || tp.val(p).dim(1) != w) throw DimensionError("concat spatial mismatch");
    c_total += tp.val(p).dim(2);
  }
  Tensor<T> y({h, w, c_total});
  int off = 0;
  for (auto p : parts) {
    const auto& pv = tp.val(p);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        for (int k = 0; k < pv.dim(2); ++k) y.at(py, px, off + k) = pv.at(py, px, k);
      }
    }
    off += pv.dim(2);
  }
  const Var<T> node = tp.leaf(std::move(y));
  std::vector<Var<T>> parts_copy = parts;
  tp.set_back(node, [node, parts_copy, h, w](Tape<T>& t) {
    const auto& g = t.grad(node);
    int off2 = 0;
    for (auto p : parts_copy) {
      auto& gp = t.grad(p);
      const int pc = gp.dim(2);
      for (int py = 0; py < h; ++py) {
        for (int px = 0; px < w; ++px) {
          for (int k = 0; k < pc; ++k) gp.at(py, px, k) += g.at(py, px, off2 + k);
        }
      }
      off2 += pc;
    }
  });
  return node;
}

// Latent vector tiled over a spatial grid.
template <typename T>
Var<T> broadcast_latent(Tape<T>& tp, Var<T> z, int h, int w) {
  const auto& zv = tp.val(z);
  if (zv.rank() != 1) throw DimensionError("broadcast_latent expects a vector");
  const int c = zv.dim(0);
  Tensor<T> y({h, w, c});
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      for (int k = 0; k < c; ++k) y.at(py, px, k) = zv[k];
    }
  }
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, z, h, w, c](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gz = t.grad(z);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        for (int k = 0; k < c; ++k) gz[k] += g.at(py, px, k);
      }
    }
  });
  return node;
}

template <typename T>
Var<T> flatten(Tape<T>& tp, Var<T> x) {
  Tensor<T> y({static_cast<int>(tp.val(x).size())});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = tp.val(x)[i];
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return node;
}

template <typename T>
Var<T> slice_vec(Tape<T>& tp, Var<T> x, int offset, int len) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 1 || offset < 0 || offset + len > xv.dim(0)) throw DimensionError("bad slice");
  Tensor<T> y({len});
  for (int i = 0; i < len; ++i) y[i] = xv[offset + i];
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, offset, len](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (int i = 0; i < len; ++i) gx[offset + i] += g[i];
  });
  return node;
}

// ---------------------------------------------------------------------------
// Scalar arithmetic (tensors of any matching shape work too).

template <typename T>
Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b) {
  if (!tp.val(a).same_shape(tp.val(b))) throw DimensionError("add shape mismatch");
  Tensor<T> y = tp.val(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += tp.val(b)[i];
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a, b](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
  return node;
}

template <typename T>
Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b) {
  if (!tp.val(a).same_shape(tp.val(b))) throw DimensionError("sub shape mismatch");
  Tensor<T> y = tp.val(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= tp.val(b)[i];
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a, b](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
  return node;
}

template <typename T>
Var<T> scale(Tape<T>& tp, Var<T> a, T c) {
  Tensor<T> y = tp.val(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a, c](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
  return node;
}

// Elementwise sqrt(x + eps); the epsilon keeps the gradient finite at
// zero.
template <typename T>
Var<T> sqrt_eps(Tape<T>& tp, Var<T> a, T eps = T(1e-12)) {
  Tensor<T> y = tp.val(a);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::sqrt(y[i] + eps);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& yv = t.val(node);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (T(2) * yv[i]);
  });
  return node;
}

template <typename T>
Var<T> dot(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& av = tp.val(a);
  const auto& bv = tp.val(b);
  if (!av.same_shape(bv)) throw DimensionError("dot shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  Tensor<T> y({1});
  y[0] = acc;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a, b](Tape<T>& t) {
    const T g = t.grad(node)[0];
    const auto& av2 = t.val(a);
    const auto& bv2 = t.val(b);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (std::size_t i = 0; i < av2.size(); ++i) {
      ga[i] += g * bv2[i];
      gb[i] += g * av2[i];
    }
  });
  return node;
}

// Sum of absolute differences against a constant target.
template <typename T>
Var<T> l1_to_const(Tape<T>& tp, Var<T> a, const Tensor<T>& target) {
  const auto& av = tp.val(a);
  if (!av.same_shape(target)) throw DimensionError("l1_to_const shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(av[i] - target[i]);
  Tensor<T> y({1});
  y[0] = acc;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, a, target](Tape<T>& t) {
    const T g = t.grad(node)[0];
    const auto& av2 = t.val(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < av2.size(); ++i) {
      const T d = av2[i] - target[i];
      if (d > T(0)) ga[i] += g;
      if (d < T(0)) ga[i] -= g;
    }
  });
  return node;
}

// Gram matrix of an HWC feature map: G[i][j] = sum_px f_i * f_j.
template <typename T>
Var<T> gram_hwc(Tape<T>& tp, Var<T> f) {
  const auto& fv = tp.val(f);
  if (fv.rank() != 3) throw DimensionError("gram_hwc expects HWC");
  const int h = fv.dim(0), w = fv.dim(1), c = fv.dim(2);
  Tensor<T> g({c, c});
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      const T* row = fv.data() + (static_cast<std::size_t>(py) * w + px) * c;
      for (int i = 0; i < c; ++i) {
        const T fi = row[i];
        for (int j = 0; j < c; ++j) g.at(i, j) += fi * row[j];
      }
    }
  }
  const Var<T> node = tp.leaf(std::move(g));
  tp.set_back(node, [node, f, h, w, c](Tape<T>& t) {
    const auto& gg = t.grad(node);
    const auto& fv2 = t.val(f);
    auto& gf = t.grad(f);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const T* row = fv2.data() + (static_cast<std::size_t>(py) * w + px) * c;
        T* grow = gf.data() + (static_cast<std::size_t>(py) * w + px) * c;
        for (int i = 0; i < c; ++i) {
          T acc = 0;
          for (int j = 0; j < c; ++j) acc += (gg.at(i, j) + gg.at(j, i)) * row[j];
          grow[i] += acc;
        }
      }
    }
  });
  return node;
}

// Global average over the spatial grid, one value per channel.
template <typename T>
Var<T> global_avgpool(Tape<T>& tp, Var<T> x) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 3) throw DimensionError("global_avgpool expects HWC");
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  Tensor<T> y({c});
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      for (int k = 0; k < c; ++k) y[k] += xv.at(py, px, k);
    }
  }
  const T inv = T(1) / static_cast<T>(h * w);
  for (int k = 0; k < c; ++k) y[k] *= inv;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, h, w, c, inv](Tape<T>& t) {
    const auto& g = t.grad(node);
    auto& gx = t.grad(x);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        for (int k = 0; k < c; ++k) gx.at(py, px, k) += g[k] * inv;
      }
    }
  });
  return node;
}

template <typename T>
Var<T> l2_normalize(Tape<T>& tp, Var<T> x, T eps = T(1e-8)) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 1) throw DimensionError("l2_normalize expects a vector");
  T norm_sq = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) norm_sq += xv[i] * xv[i];
  const T norm = std::max(std::sqrt(norm_sq), eps);
  Tensor<T> y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= norm;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, x, norm](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& yv = t.val(node);
    auto& gx = t.grad(x);
    T ydotg = 0;
    for (std::size_t i = 0; i < g.size(); ++i) ydotg += yv[i] * g[i];
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - yv[i] * ydotg) / norm;
  });
  return node;
}

// ---------------------------------------------------------------------------
// Losses.

// Mean cross-entropy between a per-pixel probability map and a one-hot
// truth map. Probabilities must sum to one per pixel and the truth must
// be one-hot; both are checked.
template <typename T>
Var<T> cross_entropy_map(Tape<T>& tp, Var<T> probs, const Tensor<T>& truth) {
  const auto& pv = tp.val(probs);
  if (!pv.same_shape(truth)) throw DimensionError("cross_entropy_map shape mismatch");
  const int h = pv.dim(0), w = pv.dim(1), c = pv.dim(2);
  const T eps = static_cast<T>(kCrossEntropyEps);
  T acc = 0;
  for (int py = 0; py < h; ++py) {
    for (int px = 0; px < w; ++px) {
      T psum = 0, tsum = 0;
      for (int k = 0; k < c; ++k) {
        const T p = pv.at(py, px, k);
        const T tr = truth.at(py, px, k);
        if (tr != T(0) && tr != T(1)) throw ContractError("truth map is not one-hot");
        psum += p;
        tsum += tr;
        if (tr == T(1)) acc -= std::log(std::max(p, eps));
      }
      if (std::abs(psum - T(1)) > static_cast<T>(kProbSumTolerance)) {
        throw ContractError("probability map does not sum to one per pixel");
      }
      if (tsum != T(1)) throw ContractError("truth map is not one-hot");
    }
  }
  Tensor<T> y({1});
  y[0] = acc / static_cast<T>(h * w);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, probs, truth, h, w, c, eps](Tape<T>& t) {
    const T g = t.grad(node)[0] / static_cast<T>(h * w);
    const auto& pv2 = t.val(probs);
    auto& gp = t.grad(probs);
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        for (int k = 0; k < c; ++k) {
          if (truth.at(py, px, k) == T(1) && pv2.at(py, px, k) > eps) {
            gp.at(py, px, k) -= g / pv2.at(py, px, k);
          }
        }
      }
    }
  });
  return node;
}

// z = mean + exp(log_var / 2) * noise with fixed noise.
template <typename T>
Var<T> reparam(Tape<T>& tp, Var<T> mean, Var<T> log_var, const std::vector<T>& noise) {
  const auto& mv = tp.val(mean);
  const auto& lv = tp.val(log_var);
  if (mv.rank() != 1 || !mv.same_shape(lv)) throw DimensionError("reparam shape mismatch");
  if (noise.size() != mv.size()) throw DimensionError("reparam noise length mismatch");
  Tensor<T> y = mv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += std::exp(lv[i] / T(2)) * noise[i];
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, mean, log_var, noise](Tape<T>& t) {
    const auto& g = t.grad(node);
    const auto& lv2 = t.val(log_var);
    auto& gm = t.grad(mean);
    auto& gl = t.grad(log_var);
    for (std::size_t i = 0; i < g.size(); ++i) {
      gm[i] += g[i];
      gl[i] += g[i] * std::exp(lv2[i] / T(2)) * noise[i] / T(2);
    }
  });
  return node;
}

// KL between two diagonal Gaussians given as (mean, log_var) vectors.
template <typename T>
Var<T> kl_between_op(Tape<T>& tp, Var<T> mq, Var<T> lq, Var<T> mp, Var<T> lp) {
  auto vec = [&](Var<T> v) {
    const auto& t = tp.val(v);
    return std::vector<T>(t.data(), t.data() + t.size());
  };
  // Raw parameters, no clamping here: the encoder clamps before this op.
  DiagonalGaussian<T> q;
  q.mean = vec(mq);
  q.log_var = vec(lq);
  DiagonalGaussian<T> p;
  p.mean = vec(mp);
  p.log_var = vec(lp);
  if (q.mean.size() != p.mean.size() || q.mean.size() != q.log_var.size() ||
      p.mean.size() != p.log_var.size()) {
    throw DimensionError("kl_between_op shape mismatch");
  }
  Tensor<T> y({1});
  y[0] = kl_between(q, p);
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, mq, lq, mp, lp](Tape<T>& t) {
    const T g = t.grad(node)[0];
    DiagonalGaussian<T> q2, p2;
    auto vec2 = [&](Var<T> v) {
      const auto& tv = t.val(v);
      return std::vector<T>(tv.data(), tv.data() + tv.size());
    };
    q2.mean = vec2(mq);
    q2.log_var = vec2(lq);
    p2.mean = vec2(mp);
    p2.log_var = vec2(lp);
    std::vector<T> d_mq, d_lq, d_mp, d_lp;
    kl_between_grad(q2, p2, d_mq, d_lq, d_mp, d_lp);
    for (std::size_t i = 0; i < d_mq.size(); ++i) {
      t.grad(mq)[i] += g * d_mq[i];
      t.grad(lq)[i] += g * d_lq[i];
      t.grad(mp)[i] += g * d_mp[i];
      t.grad(lp)[i] += g * d_lp[i];
    }
  });
  return node;
}

// KL against the standard normal.
template <typename T>
Var<T> kl_to_standard_op(Tape<T>& tp, Var<T> mq, Var<T> lq) {
  const auto& mv = tp.val(mq);
  const auto& lv = tp.val(lq);
  if (!mv.same_shape(lv)) throw DimensionError("kl_to_standard_op shape mismatch");
  T acc = 0;
  for (std::size_t i = 0; i < mv.size(); ++i) {
    acc += (std::exp(lv[i]) + mv[i] * mv[i] - T(1) - lv[i]) / T(2);
  }
  Tensor<T> y({1});
  y[0] = acc;
  const Var<T> node = tp.leaf(std::move(y));
  tp.set_back(node, [node, mq, lq](Tape<T>& t) {
    const T g = t.grad(node)[0];
    const auto& mv2 = t.val(mq);
    const auto& lv2 = t.val(lq);
    for (std::size_t i = 0; i < mv2.size(); ++i) {
      t.grad(mq)[i] += g * mv2[i];
      t.grad(lq)[i] += g * (std::exp(lv2[i]) - T(1)) / T(2);
    }
  });
  return node;
}

}  // namespace ops

}  // namespace finet
