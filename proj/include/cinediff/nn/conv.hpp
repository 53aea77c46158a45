#pragma once

#include "../tensor.hpp"
#include "fastmath.hpp"

#include <array>

namespace cinediff::nn {

/// Geometry of a "same"-padded, stride-1 convolution over (t, y, x).
/// Weights are stored as {out, in, kt, k * k}; a purely spatial 2D convolution is kt = 1.
struct ConvGeometry
{
  int kt = 1;
  int k = 3;
  int pad_t() const { return kt / 2; }
  int pad_s() const { return k / 2; }
  int taps() const { return kt * k * k; }
};

namespace detail {

template <typename Real>
Tensor<Real> pad(Tensor<Real> const &x, int pt, int ps)
{
  auto const s = x.shape();
  if (pt == 0 && ps == 0) { return x; }
  Tensor<Real> p({s.c, s.t + 2 * pt, s.h + 2 * ps, s.w + 2 * ps});
  for (int c = 0; c < s.c; ++c) {
    for (int t = 0; t < s.t; ++t) {
      for (int y = 0; y < s.h; ++y) { std::copy_n(x.row(c, t, y), s.w, p.row(c, t + pt, y + ps) + ps); }
    }
  }
  return p;
}

constexpr int kBlock = 4;

// Row kernels. `Width` is the compile-time row length, or 0 for a runtime length; the compile-time
// variants let the accumulators live in vector registers.
template <typename Real, int Width>
inline void accumulate_rows(Real *__restrict acc, Real const *__restrict in, Real const *wv, int nb, int w_rt)
{
  int const W = Width > 0 ? Width : w_rt;
  if (Width > 0 && nb == kBlock) {
    for (int j = 0; j < kBlock; ++j) {
      Real const wj = wv[j];
      for (int x = 0; x < Width; ++x) { acc[j * Width + x] += wj * in[x]; }
    }
    return;
  }
  for (int j = 0; j < nb; ++j) {
    Real const wj = wv[j];
    for (int x = 0; x < W; ++x) { acc[j * W + x] += wj * in[x]; }
  }
}

// Weights regrouped as [co / kBlock][ci][tap][co % kBlock] so the inner loop reads them contiguously.
template <typename Real>
std::vector<Real> block_weights(Tensor<Real> const &w, int taps)
{
  int const co_n = w.shape().c, ci_n = w.shape().t;
  int const nblk = (co_n + kBlock - 1) / kBlock;
  std::vector<Real> out(std::size_t(nblk) * ci_n * taps * kBlock, Real(0));
  for (int co = 0; co < co_n; ++co) {
    for (int ci = 0; ci < ci_n; ++ci) {
      for (int q = 0; q < taps; ++q) {
        out[((std::size_t(co / kBlock) * ci_n + ci) * taps + q) * kBlock + co % kBlock] =
          w[(std::size_t(co) * ci_n + ci) * taps + q];
      }
    }
  }
  return out;
}

template <typename Real, int Width>
void conv_rows(Tensor<Real> const &padded,
               std::vector<Real> const &wblk,
               Tensor<Real> const &b,
               ConvGeometry g,
               Tensor<Real> &out)
{
  auto const s = out.shape();
  int const co_n = s.c, ci_n = padded.shape().c, W = s.w, kt = g.kt, k = g.k, taps = g.taps();
  // A fixed-size local buffer lets the compiler keep the accumulators in registers.
  constexpr std::size_t local_n = Width > 0 ? std::size_t(kBlock) * Width : 1;
  alignas(64) Real acc_local[local_n];
  std::vector<Real> acc_heap(Width > 0 ? 0 : std::size_t(kBlock) * W);
  Real *acc = Width > 0 ? acc_local : acc_heap.data();
  for (int co0 = 0; co0 < co_n; co0 += kBlock) {
    int const nb = std::min(kBlock, co_n - co0);
    Real const *wbase = wblk.data() + std::size_t(co0 / kBlock) * ci_n * taps * kBlock;
    for (int t = 0; t < s.t; ++t) {
      for (int y = 0; y < s.h; ++y) {
        for (int j = 0; j < nb; ++j) { std::fill_n(acc + j * W, W, b[co0 + j]); }
        Real const *wp = wbase;
        for (int ci = 0; ci < ci_n; ++ci) {
          for (int dt = 0; dt < kt; ++dt) {
            for (int dy = 0; dy < k; ++dy) {
              Real const *prow = padded.row(ci, t + dt, y + dy);
              for (int dx = 0; dx < k; ++dx) {
                accumulate_rows<Real, Width>(acc, prow + dx, wp, nb, W);
                wp += kBlock;
              }
            }
          }
        }
        for (int j = 0; j < nb; ++j) { std::copy_n(acc + j * W, W, out.row(co0 + j, t, y)); }
      }
    }
  }
}

// dw[co, ci, tap] = sum over (t, y, x) of padded[ci, t+dt, y+dy, x+dx] * dout[co, t, y, x].
// Products are accumulated per lane and reduced once at the end, which keeps the loop vectorizable
// and the summation order fixed.
template <typename Real, int Width>
void weight_grad_rows(Tensor<Real> const &padded, Tensor<Real> const &dout, ConvGeometry g, Tensor<Real> &dw)
{
  auto const s = dout.shape();
  int const co_n = s.c, ci_n = padded.shape().c, W = Width > 0 ? Width : s.w, kt = g.kt, k = g.k;
  int const taps = g.taps();
  std::vector<Real> lanes(std::size_t(taps) * W);
  for (int co = 0; co < co_n; ++co) {
    for (int ci = 0; ci < ci_n; ++ci) {
      std::fill(lanes.begin(), lanes.end(), Real(0));
      for (int t = 0; t < s.t; ++t) {
        for (int y = 0; y < s.h; ++y) {
          Real const *__restrict gr = dout.row(co, t, y);
          for (int dt = 0; dt < kt; ++dt) {
            for (int dy = 0; dy < k; ++dy) {
              Real const *prow = padded.row(ci, t + dt, y + dy);
              for (int dx = 0; dx < k; ++dx) {
                Real *__restrict l = lanes.data() + std::size_t((dt * k + dy) * k + dx) * W;
                Real const *__restrict pr = prow + dx;
                for (int x = 0; x < W; ++x) { l[x] += pr[x] * gr[x]; }
              }
            }
          }
        }
      }
      for (int q = 0; q < taps; ++q) {
        Real sum = 0;
        Real const *l = lanes.data() + std::size_t(q) * W;
        for (int x = 0; x < W; ++x) { sum += l[x]; }
        dw[(std::size_t(co) * ci_n + ci) * taps + q] += sum;
      }
    }
  }
}

template <typename F>
void dispatch_width(int w, F &&f)
{
  switch (w) {
  case 32: f(std::integral_constant<int, 32>{}); break;
  case 64: f(std::integral_constant<int, 64>{}); break;
  case 128: f(std::integral_constant<int, 128>{}); break;
  default: f(std::integral_constant<int, 0>{}); break;
  }
}

} // namespace detail

template <typename Real>
void check_conv_shapes(Shape const &x, Tensor<Real> const &w, Tensor<Real> const &b, ConvGeometry g)
{
  auto const ws = w.shape();
  require(g.kt % 2 == 1 && g.k % 2 == 1, "convolution kernel sizes must be odd");
  require(ws.c >= 1 && ws.h == g.kt && ws.w == g.k * g.k,
          "convolution weight shape " + to_string(ws) + " does not match geometry");
  require(ws.t == x.c,
          "convolution expects " + std::to_string(ws.t) + " input channels, got " + std::to_string(x.c));
  require(b.size() == std::size_t(ws.c), "convolution bias size mismatch");
}

/// out[o,t,y,x] = b[o] + sum_{i,dt,dy,dx} w[o,i,dt,dy*k+dx] * x[i, t+dt-pt, y+dy-ps, x+dx-ps], zero outside.
template <typename Real>
Tensor<Real> conv_forward(Tensor<Real> const &x, Tensor<Real> const &w, Tensor<Real> const &b, ConvGeometry g)
{
  auto const s = x.shape();
  check_conv_shapes(s, w, b, g);
  auto const padded = detail::pad(x, g.pad_t(), g.pad_s());
  auto const wblk = detail::block_weights(w, g.taps());
  Tensor<Real> out({w.shape().c, s.t, s.h, s.w});
  detail::dispatch_width(s.w, [&](auto width) {
    detail::conv_rows<Real, decltype(width)::value>(padded, wblk, b, g, out);
  });
  return out;
}

template <typename Real>
struct ConvGrads
{
  Tensor<Real> dx, dw, db;
};

/// Gradients of conv_forward for upstream gradient `dout`. The input gradient is the forward
/// convolution of `dout` with the spatially flipped, channel-transposed kernel.
template <typename Real>
ConvGrads<Real> conv_backward(Tensor<Real> const &x,
                              Tensor<Real> const &w,
                              Tensor<Real> const &dout,
                              ConvGeometry g,
                              bool want_dx = true,
                              bool want_dw = true)
{
  auto const s = x.shape();
  int const co_n = w.shape().c, ci_n = s.c, taps = g.taps();
  ConvGrads<Real> out;
  out.db = Tensor<Real>({co_n, 1, 1, 1});
  for (int co = 0; co < co_n; ++co) {
    out.db[co] = Real(lane_sum(dout.channel(co), s.volume()));
  }
  if (want_dx) {
    Tensor<Real> wt({ci_n, co_n, g.kt, g.k * g.k});
    for (int co = 0; co < co_n; ++co) {
      for (int ci = 0; ci < ci_n; ++ci) {
        for (int q = 0; q < taps; ++q) {
          wt[(std::size_t(ci) * co_n + co) * taps + (taps - 1 - q)] = w[(std::size_t(co) * ci_n + ci) * taps + q];
        }
      }
    }
    out.dx = conv_forward(dout, wt, Tensor<Real>({ci_n, 1, 1, 1}), g);
  }
  out.dw = Tensor<Real>(w.shape());
  if (want_dw) {
    auto const padded = detail::pad(x, g.pad_t(), g.pad_s());
    detail::dispatch_width(s.w, [&](auto width) {
      detail::weight_grad_rows<Real, decltype(width)::value>(padded, dout, g, out.dw);
    });
  }
  return out;
}

} // namespace cinediff::nn
