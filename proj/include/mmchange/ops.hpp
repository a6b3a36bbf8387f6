// Copyright 2026 The MMChange Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable primitives over NCHW tensors. Every op returns a Var whose
// node carries the matching vector-Jacobian product.

#ifndef MMCHANGE_OPS_HPP_
#define MMCHANGE_OPS_HPP_

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "mmchange/autograd.hpp"

namespace mmchange {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
Tensor<T>* grad_of(Node<T>& n, std::size_t i) {
  auto& in = *n.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

inline int broadcast_dim(int a, int b, const char* what) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(std::string(what) + ": incompatible broadcast extents " + std::to_string(a) +
                   " vs " + std::to_string(b));
}

/// Element offsets of a possibly-broadcast operand.
struct BroadcastIndex {
  std::size_t sn, sc, sh, sw;
  explicit BroadcastIndex(const Shape& s)
      : sn(s.n == 1 ? 0 : static_cast<std::size_t>(s.c) * s.h * s.w),
        sc(s.c == 1 ? 0 : static_cast<std::size_t>(s.h) * s.w),
        sh(s.h == 1 ? 0 : static_cast<std::size_t>(s.w)),
        sw(s.w == 1 ? 0 : 1) {}
  std::size_t operator()(int n, int c, int y, int x) const { return n * sn + c * sc + y * sh + x * sw; }
};

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryKind kind, const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  Shape so{broadcast_dim(sa.n, sb.n, name), broadcast_dim(sa.c, sb.c, name),
           broadcast_dim(sa.h, sb.h, name), broadcast_dim(sa.w, sb.w, name)};
  Tensor<T> out(so);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool same = sa == sb;
  auto apply = [kind](T x, T y) {
    switch (kind) {
      case BinaryKind::kAdd: return x + y;
      case BinaryKind::kSub: return x - y;
      default: return x * y;
    }
  };
  BroadcastIndex ia(sa), ib(sb);
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    std::size_t o = 0;
    for (int n = 0; n < so.n; ++n)
      for (int c = 0; c < so.c; ++c)
        for (int y = 0; y < so.h; ++y)
          for (int x = 0; x < so.w; ++x, ++o) out[o] = apply(av[ia(n, c, y, x)], bv[ib(n, c, y, x)]);
  }
  return make_result<T>(std::move(out), {a, b}, [kind, same, so, ia, ib](Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    Tensor<T>* ga = grad_of(self, 0);
    Tensor<T>* gb = grad_of(self, 1);
    auto step = [&](std::size_t o, std::size_t pa, std::size_t pb) {
      T gv = g[o];
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) (*ga)[pa] += gv;
          if (gb) (*gb)[pb] += gv;
          break;
        case BinaryKind::kSub:
          if (ga) (*ga)[pa] += gv;
          if (gb) (*gb)[pb] -= gv;
          break;
        case BinaryKind::kMul:
          if (ga) (*ga)[pa] += gv * bv[pb];
          if (gb) (*gb)[pb] += gv * av[pa];
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      std::size_t o = 0;
      for (int n = 0; n < so.n; ++n)
        for (int c = 0; c < so.c; ++c)
          for (int y = 0; y < so.h; ++y)
            for (int x = 0; x < so.w; ++x, ++o) step(o, ia(n, c, y, x), ib(n, c, y, x));
    }
  });
}

/// Reflection about the border samples; valid for any offset and any n >= 1.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kAdd, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kSub, "sub");
}
/// Element-wise product with NCHW broadcasting (gates of extent 1 along any axis).
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return detail::binary(a, b, detail::BinaryKind::kMul, "mul");
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v *= s;
  return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    const auto& xv = self.inputs[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xv[i] > T(0)) (*gx)[i] += self.grad[i];
  });
}

template <typename T>
T sigmoid_scalar(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = sigmoid_scalar(v);
  auto saved = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [saved](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    const auto& y = *saved;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gx)[i] += self.grad[i] * y[i] * (T(1) - y[i]);
  });
}

enum class SoftmaxAxis { kChannel, kSpatial };

/// Numerically stable softmax over channels (per pixel) or over the H*W
/// positions (per channel).
template <typename T>
Var<T> softmax(const Var<T>& x, SoftmaxAxis axis) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  const auto& xv = x.value();
  const std::size_t plane = s.plane();
  if (axis == SoftmaxAxis::kChannel) {
    for (int n = 0; n < s.n; ++n) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
        T m = -std::numeric_limits<T>::infinity();
        for (int c = 0; c < s.c; ++c) m = std::max(m, xv[base + c * plane]);
        T z = 0;
        for (int c = 0; c < s.c; ++c) z += (out[base + c * plane] = std::exp(xv[base + c * plane] - m));
        for (int c = 0; c < s.c; ++c) out[base + c * plane] /= z;
      }
    }
  } else {
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const T* in = xv.plane(n, c);
        T* o = out.plane(n, c);
        T m = *std::max_element(in, in + plane);
        T z = 0;
        for (std::size_t p = 0; p < plane; ++p) z += (o[p] = std::exp(in[p] - m));
        for (std::size_t p = 0; p < plane; ++p) o[p] /= z;
      }
    }
  }
  auto saved = std::make_shared<Tensor<T>>(out);
  return make_result<T>(std::move(out), {x}, [saved, axis, s, plane](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    const auto& y = *saved;
    const auto& g = self.grad;
    if (axis == SoftmaxAxis::kChannel) {
      for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
          const std::size_t base = static_cast<std::size_t>(n) * s.c * plane + p;
          T dot = 0;
          for (int c = 0; c < s.c; ++c) dot += g[base + c * plane] * y[base + c * plane];
          for (int c = 0; c < s.c; ++c) {
            const std::size_t i = base + c * plane;
            (*gx)[i] += y[i] * (g[i] - dot);
          }
        }
      }
    } else {
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const std::size_t base = y.index(n, c, 0, 0);
          T dot = 0;
          for (std::size_t p = 0; p < plane; ++p) dot += g[base + p] * y[base + p];
          for (std::size_t p = 0; p < plane; ++p) (*gx)[base + p] += y[base + p] * (g[base + p] - dot);
        }
      }
    }
  });
}

/// Concatenate along channels.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
          "concat_channels shape mismatch " + sa.str() + " vs " + sb.str());
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t pa = static_cast<std::size_t>(sa.c) * sa.plane();
  const std::size_t pb = static_cast<std::size_t>(sb.c) * sb.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy_n(a.value().data() + n * pa, pa, out.data() + n * (pa + pb));
    std::copy_n(b.value().data() + n * pb, pb, out.data() + n * (pa + pb) + pa);
  }
  return make_result<T>(std::move(out), {a, b}, [sa, pa, pb](Node<T>& self) {
    auto* ga = detail::grad_of(self, 0);
    auto* gb = detail::grad_of(self, 1);
    for (int n = 0; n < sa.n; ++n) {
      const T* g = self.grad.data() + n * (pa + pb);
      if (ga)
        for (std::size_t i = 0; i < pa; ++i) (*ga)[n * pa + i] += g[i];
      if (gb)
        for (std::size_t i = 0; i < pb; ++i) (*gb)[n * pb + i] += g[pa + i];
    }
  });
}

struct ConvOptions {
  int stride = 1;
  int groups = 1;
};

/// 2-D convolution, weight [Cout, Cin/groups, k, k], odd k, reflection
/// padding of k/2. Output extent is ceil(H / stride). No bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, ConvOptions opt = {}) {
  const Shape s = x.shape();
  const Shape ws = weight.shape();
  const int k = ws.h;
  const int groups = opt.groups;
  require(ws.h == ws.w && k % 2 == 1, "conv2d needs an odd square kernel, got " + ws.str());
  require(groups >= 1 && s.c % groups == 0 && ws.n % groups == 0,
          "conv2d channels not divisible by groups");
  require(ws.c * groups == s.c, "conv2d input channels " + std::to_string(s.c) +
                                    " do not match weight " + ws.str());
  require(opt.stride >= 1, "conv2d stride must be positive");
  const int pad = k / 2;
  const int stride = opt.stride;
  const int oh = (s.h + 2 * pad - k) / stride + 1;
  const int ow = (s.w + 2 * pad - k) / stride + 1;
  const int cin_g = s.c / groups;
  const int cout_g = ws.n / groups;
  const int kdim = cin_g * k * k;
  const int L = oh * ow;
  const bool pointwise = k == 1 && stride == 1;

  // Source row/col for every (kernel offset, output position).
  auto rows = std::make_shared<std::vector<int>>(static_cast<std::size_t>(k) * oh);
  auto cols = std::make_shared<std::vector<int>>(static_cast<std::size_t>(k) * ow);
  for (int ky = 0; ky < k; ++ky)
    for (int oy = 0; oy < oh; ++oy) (*rows)[ky * oh + oy] = detail::reflect_index(oy * stride + ky - pad, s.h);
  for (int kx = 0; kx < k; ++kx)
    for (int ox = 0; ox < ow; ++ox) (*cols)[kx * ow + ox] = detail::reflect_index(ox * stride + kx - pad, s.w);

  auto im2col = [=](const T* in, T* col) {
    for (int c = 0; c < cin_g; ++c) {
      const T* plane = in + static_cast<std::size_t>(c) * s.h * s.w;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* dst = col + static_cast<std::size_t>((c * k + ky) * k + kx) * L;
          const int* rr = rows->data() + ky * oh;
          const int* cc = cols->data() + kx * ow;
          for (int oy = 0; oy < oh; ++oy) {
            const T* src = plane + static_cast<std::size_t>(rr[oy]) * s.w;
            for (int ox = 0; ox < ow; ++ox) *dst++ = src[cc[ox]];
          }
        }
    }
  };

  Tensor<T> out(Shape{s.n, ws.n, oh, ow});
  auto colbuf = std::make_shared<AlignedVector<T>>();
  if (!pointwise) colbuf->resize(static_cast<std::size_t>(s.n) * groups * kdim * L);
  const auto& xv = x.value();
  const auto& wv = weight.value();
  for (int n = 0; n < s.n; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* in = xv.plane(n, g * cin_g);
      ConstMatMap<T> W(wv.data() + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);
      MatMap<T> O(out.plane(n, g * cout_g), cout_g, L);
      if (pointwise) {
        O.noalias() = W * ConstMatMap<T>(in, kdim, L);
      } else {
        T* col = colbuf->data() + (static_cast<std::size_t>(n) * groups + g) * kdim * L;
        im2col(in, col);
        O.noalias() = W * ConstMatMap<T>(col, kdim, L);
      }
    }
  }
  return make_result<T>(std::move(out), {x, weight}, [=](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    auto* gw = detail::grad_of(self, 1);
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    AlignedVector<T> dcol(pointwise ? 0 : static_cast<std::size_t>(kdim) * L);
    for (int n = 0; n < s.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        ConstMatMap<T> G(self.grad.plane(n, g * cout_g), cout_g, L);
        const T* colp = pointwise ? xv.plane(n, g * cin_g)
                                  : colbuf->data() + (static_cast<std::size_t>(n) * groups + g) * kdim * L;
        ConstMatMap<T> C(colp, kdim, L);
        if (gw) {
          MatMap<T> GW(gw->data() + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);
          GW.noalias() += G * C.transpose();
        }
        if (!gx) continue;
        ConstMatMap<T> W(wv.data() + static_cast<std::size_t>(g) * cout_g * kdim, cout_g, kdim);
        if (pointwise) {
          MatMap<T> GX(gx->plane(n, g * cin_g), kdim, L);
          GX.noalias() += W.transpose() * G;
          continue;
        }
        MatMap<T> DC(dcol.data(), kdim, L);
        DC.noalias() = W.transpose() * G;
        T* base = gx->plane(n, g * cin_g);
        for (int c = 0; c < cin_g; ++c) {
          T* plane = base + static_cast<std::size_t>(c) * s.h * s.w;
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const T* src = dcol.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * L;
              const int* rr = rows->data() + ky * oh;
              const int* cc = cols->data() + kx * ow;
              for (int oy = 0; oy < oh; ++oy) {
                T* dst = plane + static_cast<std::size_t>(rr[oy]) * s.w;
                for (int ox = 0; ox < ow; ++ox) dst[cc[ox]] += *src++;
              }
            }
        }
      }
    }
  });
}

/// Running statistics and hyper-parameters of a batch-norm layer. The
/// learnable scale and shift live next to it as parameters.
template <typename T>
struct NormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T epsilon = T(1e-5);
  bool training = false;

  explicit NormStats(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

/// Batch normalisation. Train mode normalises with batch statistics over
/// (N, H, W) and updates `stats`; eval mode uses the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, NormStats<T>& stats) {
  const Shape s = x.shape();
  const bool training = stats.training;
  require(gamma.value().size() == static_cast<std::size_t>(s.c) &&
              beta.value().size() == static_cast<std::size_t>(s.c) &&
              stats.running_mean.size() == static_cast<std::size_t>(s.c),
          "batch_norm channel mismatch for input " + s.str());
  require(stats.epsilon > T(0), "batch_norm epsilon must be positive");
  const std::size_t plane = s.plane();
  const std::size_t count = static_cast<std::size_t>(s.n) * plane;
  if (training) require(count >= 2, "batch_norm in train mode needs >= 2 elements per channel");
  auto xhat = std::make_shared<Tensor<T>>(s);
  auto invstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.c));
  Tensor<T> out(s);
  const auto& xv = x.value();
  for (int c = 0; c < s.c; ++c) {
    T mean, var;
    if (training) {
      double sum = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = static_cast<T>(sum / count);
      double sq = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = static_cast<T>(sq / count);
      const T m = stats.momentum;
      stats.running_mean[c] = (T(1) - m) * stats.running_mean[c] + m * mean;
      stats.running_var[c] = (T(1) - m) * stats.running_var[c] + m * static_cast<T>(sq / (count - 1));
    } else {
      mean = stats.running_mean[c];
      var = stats.running_var[c];
    }
    const T is = T(1) / std::sqrt(var + stats.epsilon);
    (*invstd)[c] = is;
    const T gm = gamma.value()[c];
    const T bt = beta.value()[c];
    for (int n = 0; n < s.n; ++n) {
      const T* p = xv.plane(n, c);
      T* xh = xhat->plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (p[i] - mean) * is;
        o[i] = gm * xh[i] + bt;
      }
    }
  }
  return make_result<T>(std::move(out), {x, gamma, beta}, [=](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    auto* gg = detail::grad_of(self, 1);
    auto* gb = detail::grad_of(self, 2);
    const auto& g = self.grad;
    const auto& gmv = self.inputs[1]->value;
    for (int c = 0; c < s.c; ++c) {
      T sum_g = 0, sum_gx = 0;
      for (int n = 0; n < s.n; ++n) {
        const T* gp = g.plane(n, c);
        const T* xh = xhat->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * xh[i];
        }
      }
      if (gg) (*gg)[c] += sum_gx;
      if (gb) (*gb)[c] += sum_g;
      if (!gx) continue;
      const T k = gmv[c] * (*invstd)[c];
      for (int n = 0; n < s.n; ++n) {
        const T* gp = g.plane(n, c);
        const T* xh = xhat->plane(n, c);
        T* dx = gx->plane(n, c);
        if (training) {
          const T inv_m = T(1) / static_cast<T>(count);
          for (std::size_t i = 0; i < plane; ++i) dx[i] += k * (gp[i] - inv_m * sum_g - xh[i] * inv_m * sum_gx);
        } else {
          for (std::size_t i = 0; i < plane; ++i) dx[i] += k * gp[i];
        }
      }
    }
  });
}

/// Bilinear resize to a larger (or equal) grid, half-pixel centres
/// (corners not aligned), source coordinates clamped at the borders.
template <typename T>
Var<T> upsample(const Var<T>& x, int target_h, int target_w) {
  const Shape s = x.shape();
  require(target_h >= s.h && target_w >= s.w,
          "upsample target " + std::to_string(target_h) + "x" + std::to_string(target_w) +
              " is smaller than source " + s.str());
  struct Tap {
    int i0, i1;
    T l1;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double sc = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      double src = std::max(0.0, (o + 0.5) * sc - 0.5);
      int i0 = std::min(static_cast<int>(src), in - 1);
      int i1 = std::min(i0 + 1, in - 1);
      t[o] = Tap{i0, i1, static_cast<T>(src - i0)};
    }
    return t;
  };
  auto ty = std::make_shared<std::vector<Tap>>(taps(s.h, target_h));
  auto tx = std::make_shared<std::vector<Tap>>(taps(s.w, target_w));
  Tensor<T> out(Shape{s.n, s.c, target_h, target_w});
  const auto& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* in = xv.plane(n, c);
      T* o = out.plane(n, c);
      for (int y = 0; y < target_h; ++y) {
        const Tap& a = (*ty)[y];
        const T* r0 = in + static_cast<std::size_t>(a.i0) * s.w;
        const T* r1 = in + static_cast<std::size_t>(a.i1) * s.w;
        for (int xx = 0; xx < target_w; ++xx) {
          const Tap& b = (*tx)[xx];
          T top = r0[b.i0] + (r0[b.i1] - r0[b.i0]) * b.l1;
          T bot = r1[b.i0] + (r1[b.i1] - r1[b.i0]) * b.l1;
          *o++ = top + (bot - top) * a.l1;
        }
      }
    }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T* d = gx->plane(n, c);
        for (int y = 0; y < target_h; ++y) {
          const Tap& a = (*ty)[y];
          for (int xx = 0; xx < target_w; ++xx) {
            const Tap& b = (*tx)[xx];
            const T gv = *g++;
            const T wy0 = T(1) - a.l1, wx0 = T(1) - b.l1;
            d[a.i0 * s.w + b.i0] += gv * wy0 * wx0;
            d[a.i0 * s.w + b.i1] += gv * wy0 * b.l1;
            d[a.i1 * s.w + b.i0] += gv * a.l1 * wx0;
            d[a.i1 * s.w + b.i1] += gv * a.l1 * b.l1;
          }
        }
      }
  });
}

/// Spatial mean per channel -> [N, C, 1, 1].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out(n, c, 0, 0) = acc / static_cast<T>(plane);
    }
  return make_result<T>(std::move(out), {x}, [s, plane](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T gv = self.grad(n, c, 0, 0) / static_cast<T>(plane);
        T* d = gx->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += gv;
      }
  });
}

/// Mean over channels -> [N, 1, H, W].
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    T* o = out.plane(n, 0);
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] += p[i];
    }
    for (std::size_t i = 0; i < plane; ++i) o[i] /= static_cast<T>(s.c);
  }
  return make_result<T>(std::move(out), {x}, [s, plane](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (int n = 0; n < s.n; ++n) {
      const T* g = self.grad.plane(n, 0);
      for (int c = 0; c < s.c; ++c) {
        T* d = gx->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] / static_cast<T>(s.c);
      }
    }
  });
}

/// Max over channels -> [N, 1, H, W]; the gradient goes to the first argmax.
template <typename T>
Var<T> channel_max(const Var<T>& x) {
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  auto arg = std::make_shared<std::vector<int>>(static_cast<std::size_t>(s.n) * plane, 0);
  for (int n = 0; n < s.n; ++n) {
    T* o = out.plane(n, 0);
    std::copy_n(x.value().plane(n, 0), plane, o);
    for (int c = 1; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      for (std::size_t i = 0; i < plane; ++i)
        if (p[i] > o[i]) {
          o[i] = p[i];
          (*arg)[n * plane + i] = c;
        }
    }
  }
  return make_result<T>(std::move(out), {x}, [s, plane, arg](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (int n = 0; n < s.n; ++n) {
      const T* g = self.grad.plane(n, 0);
      for (std::size_t i = 0; i < plane; ++i) gx->plane(n, (*arg)[n * plane + i])[i] += g[i];
    }
  });
}

/// Broadcast [N, C, 1, 1] over an h x w grid.
template <typename T>
Var<T> expand_spatial(const Var<T>& x, int h, int w) {
  const Shape s = x.shape();
  require(s.h == 1 && s.w == 1, "expand_spatial expects a [N,C,1,1] input, got " + s.str());
  Tensor<T> out(Shape{s.n, s.c, h, w});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) std::fill_n(out.plane(n, c), out.shape().plane(), x.value()(n, c, 0, 0));
  return make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    const std::size_t plane = self.grad.shape().plane();
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c) {
        const T* g = self.grad.plane(n, c);
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += g[i];
        (*gx)(n, c, 0, 0) += acc;
      }
  });
}

/// Single-head scaled dot-product self-attention over spatial positions:
/// tokens are the H*W columns, Q = K = V = x, out = V softmax(QᵀK/√C)ᵀ.
template <typename T>
Var<T> sdpa(const Var<T>& x) {
  const Shape s = x.shape();
  const int C = s.c;
  const int L = static_cast<int>(s.plane());
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(C));
  auto probs = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(s.n) * L * L);
  Tensor<T> out(s);
  for (int n = 0; n < s.n; ++n) {
    ConstMatMap<T> X(x.value().plane(n, 0), C, L);
    MatMap<T> P(probs->data() + static_cast<std::size_t>(n) * L * L, L, L);
    P.noalias() = (X.transpose() * X) * inv_sqrt;
    for (int i = 0; i < L; ++i) {
      auto row = P.row(i);
      const T m = row.maxCoeff();
      row = (row.array() - m).exp();
      row /= row.sum();
    }
    MatMap<T>(out.plane(n, 0), C, L).noalias() = X * P.transpose();
  }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    RowMat<T> dP(L, L), dS(L, L);
    for (int n = 0; n < s.n; ++n) {
      ConstMatMap<T> X(self.inputs[0]->value.plane(n, 0), C, L);
      ConstMatMap<T> P(probs->data() + static_cast<std::size_t>(n) * L * L, L, L);
      ConstMatMap<T> G(self.grad.plane(n, 0), C, L);
      MatMap<T> DX(gx->plane(n, 0), C, L);
      DX.noalias() += G * P;
      dP.noalias() = G.transpose() * X;
      Eigen::Matrix<T, Eigen::Dynamic, 1> rs = (dP.array() * P.array()).rowwise().sum();
      dS = P.array() * (dP.array().colwise() - rs.array());
      DX.noalias() += (X * (dS + dS.transpose())) * inv_sqrt;
    }
  });
}

/// Mean over the batch of per-pixel two-class cross-entropy. `labels` holds
/// N*H*W entries in {0, 1}; class 1 (channel 1) is "change".
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::uint8_t> labels) {
  const Shape s = logits.shape();
  require(s.c == 2, "cross_entropy expects 2 logit channels, got " + s.str());
  const std::size_t plane = s.plane();
  require(labels.size() == static_cast<std::size_t>(s.n) * plane, "cross_entropy label count mismatch");
  auto lab = std::make_shared<std::vector<std::uint8_t>>(labels.begin(), labels.end());
  auto p1 = std::make_shared<std::vector<T>>(labels.size());
  double total = 0;
  for (int n = 0; n < s.n; ++n) {
    const T* l0 = logits.value().plane(n, 0);
    const T* l1 = logits.value().plane(n, 1);
    for (std::size_t i = 0; i < plane; ++i) {
      const T a = l0[i], b = l1[i];
      const T m = std::max(a, b);
      const T lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      const std::uint8_t t = (*lab)[n * plane + i];
      require(t <= 1, "cross_entropy labels must be 0 or 1");
      total += lse - (t ? b : a);
      (*p1)[n * plane + i] = sigmoid_scalar(b - a);
    }
  }
  const T count = static_cast<T>(labels.size());
  Tensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(total / labels.size()));
  return make_result<T>(std::move(out), {logits}, [=](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    const T gs = self.grad[0] / count;
    for (int n = 0; n < s.n; ++n) {
      T* d0 = gx->plane(n, 0);
      T* d1 = gx->plane(n, 1);
      for (std::size_t i = 0; i < plane; ++i) {
        const T q = (*p1)[n * plane + i];
        const T t = static_cast<T>((*lab)[n * plane + i]);
        d1[i] += gs * (q - t);
        d0[i] += gs * ((T(1) - q) - (T(1) - t));
      }
    }
  });
}

/// Batch elements [start, start + count) -> [count, C, H, W].
template <typename T>
Var<T> slice_batch(const Var<T>& x, int start, int count) {
  const Shape s = x.shape();
  require(start >= 0 && count > 0 && start + count <= s.n, "slice_batch range out of bounds for " + s.str());
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  Tensor<T> out(Shape{count, s.c, s.h, s.w});
  std::copy_n(x.value().data() + start * per, count * per, out.data());
  return make_result<T>(std::move(out), {x}, [start, per](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    T* dst = gx->data() + start * per;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
  });
}

/// Sum of all entries -> [1, 1, 1, 1].
template <typename T>
Var<T> sum(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().vec()) acc += v;
  return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, acc), {x}, [](Node<T>& self) {
    auto* gx = detail::grad_of(self, 0);
    for (auto& v : gx->vec()) v += self.grad[0];
  });
}

/// Mean-pooled embedding rows. `table` is [V, D, 1, 1]; one id list per
/// batch element; result [N, D, 1, 1].
template <typename T>
Var<T> embedding_mean(const Var<T>& table, const std::vector<std::vector<std::uint32_t>>& ids) {
  const Shape s = table.shape();
  require(!ids.empty(), "embedding_mean needs at least one sequence");
  const int D = s.c;
  Tensor<T> out(Shape{static_cast<int>(ids.size()), D, 1, 1});
  for (std::size_t n = 0; n < ids.size(); ++n) {
    require(!ids[n].empty(), "embedding_mean sequence must not be empty");
    for (auto id : ids[n]) {
      require(id < static_cast<std::uint32_t>(s.n), "embedding id out of range");
      for (int d = 0; d < D; ++d) out[n * D + d] += table.value()[static_cast<std::size_t>(id) * D + d];
    }
    for (int d = 0; d < D; ++d) out[n * D + d] /= static_cast<T>(ids[n].size());
  }
  return make_result<T>(std::move(out), {table}, [ids, D](Node<T>& self) {
    auto* gt = detail::grad_of(self, 0);
    for (std::size_t n = 0; n < ids.size(); ++n) {
      const T inv = T(1) / static_cast<T>(ids[n].size());
      for (auto id : ids[n])
        for (int d = 0; d < D; ++d) (*gt)[static_cast<std::size_t>(id) * D + d] += inv * self.grad[n * D + d];
    }
  });
}

}  // namespace mmchange

#endif  // MMCHANGE_OPS_HPP_
