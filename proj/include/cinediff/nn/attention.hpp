#pragma once

#include "fastmath.hpp"
#include "ops.hpp"

#include <limits>

namespace cinediff::nn {

namespace detail {

template <typename Real>
struct AttentionLayout
{
  int C, T, heads, d;
  std::size_t HW;
  Real scale;

  explicit AttentionLayout(Shape const &s, int h)
    : C(s.c)
    , T(s.t)
    , heads(h)
    , d(s.c / h)
    , HW(s.plane())
    , scale(Real(1) / std::sqrt(Real(s.c / h)))
  {
    require(h >= 1 && s.c % h == 0, "attention heads must divide the channel count");
  }
};

// Pixels processed together; every inner loop runs over this contiguous block.
constexpr std::size_t kAttnBlock = 64;

// One head's channels over a block of pixels, copied out of the strided tensor into
// buf[(c * T + t) * kAttnBlock + p]. Rows of a {C,T,H,W} tensor sit a power of two apart,
// so working on them in place thrashes the L1 sets.
template <typename Real>
struct AttentionBlock
{
  AttentionLayout<Real> const &L;
  std::size_t p0, np;

  std::size_t buffer_size() const { return std::size_t(L.d) * L.T * kAttnBlock; }

  void gather(Tensor<Real> const &x, int h, Real *buf) const
  {
    for (int c = 0; c < L.d; ++c) {
      for (int t = 0; t < L.T; ++t) {
        std::copy_n(x.data() + (std::size_t(h * L.d + c) * L.T + t) * L.HW + p0, np,
                    buf + (std::size_t(c) * L.T + t) * kAttnBlock);
      }
    }
  }

  void scatter(Real const *buf, int h, Tensor<Real> &x) const
  {
    for (int c = 0; c < L.d; ++c) {
      for (int t = 0; t < L.T; ++t) {
        std::copy_n(buf + (std::size_t(c) * L.T + t) * kAttnBlock, np,
                    x.data() + (std::size_t(h * L.d + c) * L.T + t) * L.HW + p0);
      }
    }
  }

  static Real const *row(Real const *buf, int T, int c, int t) { return buf + (std::size_t(c) * T + t) * kAttnBlock; }
  static Real *row(Real *buf, int T, int c, int t) { return buf + (std::size_t(c) * T + t) * kAttnBlock; }

  // a[(i*T + j) * kAttnBlock + p]: softmax over j of scaled q_i . k_j, from gathered q and k.
  void weights(Real const *qb, Real const *kb, Real *a) const
  {
    int const T = L.T;
    std::size_t const P = kAttnBlock;
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j < T; ++j) {
        Real *__restrict s = a + (i * T + j) * P;
        std::fill_n(s, P, Real(0));
        for (int c = 0; c < L.d; ++c) {
          Real const *__restrict qr = row(qb, T, c, i);
          Real const *__restrict kr = row(kb, T, c, j);
          for (std::size_t p = 0; p < P; ++p) { s[p] += qr[p] * kr[p]; }
        }
        for (std::size_t p = 0; p < P; ++p) { s[p] *= L.scale; }
      }
      Real mx[kAttnBlock], z[kAttnBlock];
      std::fill_n(mx, P, -std::numeric_limits<Real>::infinity());
      std::fill_n(z, P, Real(0));
      for (int j = 0; j < T; ++j) {
        Real const *s = a + (i * T + j) * P;
        for (std::size_t p = 0; p < P; ++p) { mx[p] = s[p] > mx[p] ? s[p] : mx[p]; }
      }
      for (int j = 0; j < T; ++j) {
        Real *s = a + (i * T + j) * P;
        for (std::size_t p = 0; p < P; ++p) { s[p] -= mx[p]; }
        exp_inplace(s, P);
        for (std::size_t p = 0; p < P; ++p) { z[p] += s[p]; }
      }
      for (std::size_t p = 0; p < P; ++p) { z[p] = Real(1) / z[p]; }
      for (int j = 0; j < T; ++j) {
        Real *s = a + (i * T + j) * P;
        for (std::size_t p = 0; p < P; ++p) { s[p] *= z[p]; }
      }
    }
  }
};

// Scratch space for one block. Slots past np in a partial block hold stale finite values; they are
// computed on but never scattered.
template <typename Real>
struct AttentionScratch
{
  std::vector<Real> q, k, v, g, o, dq, dk, dv, a, da;

  explicit AttentionScratch(AttentionBlock<Real> const &B, bool backward)
  {
    std::size_t const n = B.buffer_size(), na = std::size_t(B.L.T) * B.L.T * kAttnBlock;
    for (auto *b : {&q, &k, &v, &o}) { b->assign(n, Real(0)); }
    a.assign(na, Real(0));
    if (backward) {
      for (auto *b : {&g, &dq, &dk, &dv}) { b->assign(n, Real(0)); }
      da.assign(na, Real(0));
    }
  }
};

} // namespace detail

/// Multi-head self-attention along the time axis, independently at every spatial location.
/// q, k, v are {C,T,H,W}; channels are split into `heads` contiguous groups.
template <typename Real>
Var<Real> temporal_attention_core(Var<Real> const &q, Var<Real> const &k, Var<Real> const &v, int heads)
{
  q.value().check_same(k.value());
  q.value().check_same(v.value());
  detail::AttentionLayout<Real> const L(q.shape(), heads);
  int const T = L.T;
  std::size_t const P = detail::kAttnBlock;
  using Block = detail::AttentionBlock<Real>;
  Tensor<Real> out(q.shape());
  detail::AttentionScratch<Real> S(Block{L, 0, P}, false);
  for (std::size_t p0 = 0; p0 < L.HW; p0 += P) {
    Block const B{L, p0, std::min(P, L.HW - p0)};
    for (int h = 0; h < heads; ++h) {
      B.gather(q.value(), h, S.q.data());
      B.gather(k.value(), h, S.k.data());
      B.gather(v.value(), h, S.v.data());
      B.weights(S.q.data(), S.k.data(), S.a.data());
      std::fill(S.o.begin(), S.o.end(), Real(0));
      for (int c = 0; c < L.d; ++c) {
        for (int i = 0; i < T; ++i) {
          Real *__restrict o = Block::row(S.o.data(), T, c, i);
          for (int j = 0; j < T; ++j) {
            Real const *__restrict w = S.a.data() + (i * T + j) * P;
            Real const *__restrict vr = Block::row(S.v.data(), T, c, j);
            for (std::size_t p = 0; p < P; ++p) { o[p] += w[p] * vr[p]; }
          }
        }
      }
      B.scatter(S.o.data(), h, out);
    }
  }
  return make_result(std::move(out), {q, k, v}, [q, k, v, heads] {
    return [pq = q.node().get(), pk = k.node().get(), pv = v.node().get(), heads](Tensor<Real> const &g) {
      detail::AttentionLayout<Real> const L(pq->value.shape(), heads);
      int const T = L.T;
      std::size_t const P = detail::kAttnBlock;
      Tensor<Real> dq(pq->value.shape()), dk(dq.shape()), dv(dq.shape());
      detail::AttentionScratch<Real> S(Block{L, 0, P}, true);
      for (std::size_t p0 = 0; p0 < L.HW; p0 += P) {
        Block const B{L, p0, std::min(P, L.HW - p0)};
        for (int h = 0; h < heads; ++h) {
          B.gather(pq->value, h, S.q.data());
          B.gather(pk->value, h, S.k.data());
          B.gather(pv->value, h, S.v.data());
          B.gather(g, h, S.g.data());
          B.weights(S.q.data(), S.k.data(), S.a.data());
          for (auto *b : {&S.dq, &S.dk, &S.dv, &S.da}) { std::fill(b->begin(), b->end(), Real(0)); }
          for (int c = 0; c < L.d; ++c) {
            for (int i = 0; i < T; ++i) {
              Real const *__restrict gr = Block::row(S.g.data(), T, c, i);
              for (int j = 0; j < T; ++j) {
                Real const *__restrict w = S.a.data() + (i * T + j) * P;
                Real const *__restrict vr = Block::row(S.v.data(), T, c, j);
                Real *__restrict dvr = Block::row(S.dv.data(), T, c, j);
                Real *__restrict dar = S.da.data() + (i * T + j) * P;
                for (std::size_t p = 0; p < P; ++p) {
                  dvr[p] += w[p] * gr[p];
                  dar[p] += gr[p] * vr[p];
                }
              }
            }
          }
          // da <- dS = A * (dA - sum_k A dA) * scale, in place.
          for (int i = 0; i < T; ++i) {
            Real dot[detail::kAttnBlock];
            std::fill_n(dot, P, Real(0));
            for (int j = 0; j < T; ++j) {
              Real const *w = S.a.data() + (i * T + j) * P, *dar = S.da.data() + (i * T + j) * P;
              for (std::size_t p = 0; p < P; ++p) { dot[p] += w[p] * dar[p]; }
            }
            for (int j = 0; j < T; ++j) {
              Real const *w = S.a.data() + (i * T + j) * P;
              Real *dar = S.da.data() + (i * T + j) * P;
              for (std::size_t p = 0; p < P; ++p) { dar[p] = w[p] * (dar[p] - dot[p]) * L.scale; }
            }
          }
          for (int c = 0; c < L.d; ++c) {
            for (int i = 0; i < T; ++i) {
              Real const *__restrict qr = Block::row(S.q.data(), T, c, i);
              Real *__restrict dqr = Block::row(S.dq.data(), T, c, i);
              for (int j = 0; j < T; ++j) {
                Real const *__restrict ds = S.da.data() + (i * T + j) * P;
                Real const *__restrict kr = Block::row(S.k.data(), T, c, j);
                Real *__restrict dkr = Block::row(S.dk.data(), T, c, j);
                for (std::size_t p = 0; p < P; ++p) {
                  dqr[p] += ds[p] * kr[p];
                  dkr[p] += ds[p] * qr[p];
                }
              }
            }
          }
          B.scatter(S.dq.data(), h, dq);
          B.scatter(S.dk.data(), h, dk);
          B.scatter(S.dv.data(), h, dv);
        }
      }
      if (pq->requires_grad) { pq->accumulate(dq); }
      if (pk->requires_grad) { pk->accumulate(dk); }
      if (pv->requires_grad) { pv->accumulate(dv); }
    };
  });
}

/// Attention maps for inspection: {heads * T, T, H, W}, entry [h*T + i, j, y, x] is the weight query
/// frame i places on key frame j at pixel (y, x).
template <typename Real>
Tensor<Real> temporal_attention_weights(Tensor<Real> const &q, Tensor<Real> const &k, int heads)
{
  q.check_same(k);
  detail::AttentionLayout<Real> const L(q.shape(), heads);
  auto const s = q.shape();
  int const T = L.T;
  std::size_t const P = detail::kAttnBlock;
  using Block = detail::AttentionBlock<Real>;
  Tensor<Real> out({heads * T, T, s.h, s.w});
  detail::AttentionScratch<Real> S(Block{L, 0, P}, false);
  for (std::size_t p0 = 0; p0 < L.HW; p0 += P) {
    Block const B{L, p0, std::min(P, L.HW - p0)};
    for (int h = 0; h < heads; ++h) {
      B.gather(q, h, S.q.data());
      B.gather(k, h, S.k.data());
      B.weights(S.q.data(), S.k.data(), S.a.data());
      for (int i = 0; i < T; ++i) {
        for (int j = 0; j < T; ++j) {
          std::copy_n(S.a.data() + (i * T + j) * P, B.np, out.data() + (std::size_t(h * T + i) * T + j) * L.HW + p0);
        }
      }
    }
  }
  return out;
}

} // namespace cinediff::nn
