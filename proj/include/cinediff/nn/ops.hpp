#pragma once

#include "conv.hpp"
#include "fastmath.hpp"
#include "graph.hpp"

#include <cmath>

namespace cinediff::nn {

template <typename Real>
Var<Real> add(Var<Real> const &a, Var<Real> const &b)
{
  a.value().check_same(b.value());
  return make_result(a.value() + b.value(), {a, b}, [a, b] {
    return [pa = a.node().get(), pb = b.node().get()](Tensor<Real> const &g) {
      if (pa->requires_grad) { pa->accumulate(g); }
      if (pb->requires_grad) { pb->accumulate(g); }
    };
  });
}

template <typename Real>
Var<Real> scale(Var<Real> const &a, Real s)
{
  return make_result(a.value() * s, {a}, [a, s] {
    return [pa = a.node().get(), s](Tensor<Real> const &g) { pa->accumulate(g * s); };
  });
}

/// x[c, ...] + v[c] for a {C,1,1,1} vector v.
template <typename Real>
Var<Real> add_channel_bias(Var<Real> const &x, Var<Real> const &v)
{
  auto const s = x.shape();
  require(v.value().size() == std::size_t(s.c), "channel bias size mismatch");
  Tensor<Real> out = x.value();
  for (int c = 0; c < s.c; ++c) {
    Real *p = out.channel(c);
    Real const b = v.value()[c];
    for (std::size_t i = 0; i < s.volume(); ++i) { p[i] += b; }
  }
  return make_result(std::move(out), {x, v}, [x, v, s] {
    return [px = x.node().get(), pv = v.node().get(), s](Tensor<Real> const &g) {
      if (px->requires_grad) { px->accumulate(g); }
      if (pv->requires_grad) {
        Tensor<Real> gv({s.c, 1, 1, 1});
        for (int c = 0; c < s.c; ++c) {
          gv[c] = Real(lane_sum(g.channel(c), s.volume()));
        }
        pv->accumulate(gv);
      }
    };
  });
}

/// x[c, t, y, x] + pos[c, t] for a {C,T,1,1} table, broadcast over space.
template <typename Real>
Var<Real> add_time_table(Var<Real> const &x, Var<Real> const &pos)
{
  auto const s = x.shape();
  auto const ps = pos.shape();
  require(ps.c == s.c && ps.t >= s.t && ps.h == 1 && ps.w == 1, "time table shape mismatch");
  Tensor<Real> out = x.value();
  for (int c = 0; c < s.c; ++c) {
    for (int t = 0; t < s.t; ++t) {
      Real const b = pos.value()(c, t, 0, 0);
      Real *p = out.row(c, t, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) { p[i] += b; }
    }
  }
  return make_result(std::move(out), {x, pos}, [x, pos, s, ps] {
    return [px = x.node().get(), pp = pos.node().get(), s, ps](Tensor<Real> const &g) {
      if (px->requires_grad) { px->accumulate(g); }
      if (pp->requires_grad) {
        Tensor<Real> gp(ps);
        for (int c = 0; c < s.c; ++c) {
          for (int t = 0; t < s.t; ++t) {
            gp(c, t, 0, 0) = Real(lane_sum(g.row(c, t, 0), s.plane()));
          }
        }
        pp->accumulate(gp);
      }
    };
  });
}

template <typename Real>
Var<Real> conv(Var<Real> const &x, Var<Real> const &w, Var<Real> const &b, ConvGeometry g)
{
  auto out = conv_forward(x.value(), w.value(), b.value(), g);
  return make_result(std::move(out), {x, w, b}, [x, w, b, g] {
    return [px = x.node().get(), pw = w.node().get(), pb = b.node().get(), g](Tensor<Real> const &d) {
      auto grads = conv_backward(px->value, pw->value, d, g, px->requires_grad, pw->requires_grad);
      if (px->requires_grad) { px->accumulate(grads.dx); }
      if (pw->requires_grad) { pw->accumulate(grads.dw); }
      if (pb->requires_grad) { pb->accumulate(grads.db); }
    };
  });
}

namespace detail {

// 1 / (1 + exp(-x)) over a whole tensor.
template <typename Real>
std::vector<Real> sigmoid(Tensor<Real> const &x)
{
  std::vector<Real> e(x.size());
  for (std::size_t i = 0; i < e.size(); ++i) { e[i] = -x[i]; }
  exp_inplace(e.data(), e.size());
  for (auto &v : e) { v = Real(1) / (Real(1) + v); }
  return e;
}

} // namespace detail

template <typename Real>
Var<Real> silu(Var<Real> const &x)
{
  auto const &v = x.value();
  auto const sg = detail::sigmoid(v);
  Tensor<Real> out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) { out[i] = v[i] * sg[i]; }
  return make_result(std::move(out), {x}, [x] {
    return [px = x.node().get()](Tensor<Real> const &g) {
      auto const &v = px->value;
      auto const sg = detail::sigmoid(v);
      Tensor<Real> d(v.shape());
      for (std::size_t i = 0; i < v.size(); ++i) { d[i] = g[i] * sg[i] * (Real(1) + v[i] * (Real(1) - sg[i])); }
      px->accumulate(d);
    };
  });
}

template <typename Real>
Var<Real> leaky_relu(Var<Real> const &x, Real slope = Real(0.1))
{
  Tensor<Real> out = x.value();
  for (auto &v : out.vec()) { v = v > 0 ? v : slope * v; }
  return make_result(std::move(out), {x}, [x, slope] {
    return [px = x.node().get(), slope](Tensor<Real> const &g) {
      Tensor<Real> d = g;
      auto const &v = px->value;
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0)) { d[i] *= slope; }
      }
      px->accumulate(d);
    };
  });
}

/// Group normalization over (channels-in-group, t, y, x) with per-channel affine gamma/beta ({C,1,1,1}).
template <typename Real>
Var<Real> group_norm(Var<Real> const &x, Var<Real> const &gamma, Var<Real> const &beta, int groups, Real eps = Real(1e-5))
{
  auto const s = x.shape();
  require(groups >= 1 && s.c % groups == 0, "group count must divide channel count");
  int const cg = s.c / groups;
  std::size_t const n = std::size_t(cg) * s.volume();
  auto const &v = x.value();
  Tensor<Real> xhat(s);
  std::vector<Real> inv_std(groups);
  for (int gi = 0; gi < groups; ++gi) {
    Real const *p = v.channel(gi * cg);
    double const mean = lane_sum(p, n) / double(n);
    double const is = 1.0 / std::sqrt(lane_sum_sq_dev(p, n, mean) / double(n) + double(eps));
    inv_std[gi] = Real(is);
    Real *q = xhat.channel(gi * cg);
    Real const m = Real(mean), isr = Real(is);
    for (std::size_t i = 0; i < n; ++i) { q[i] = (p[i] - m) * isr; }
  }
  Tensor<Real> out(s);
  for (int c = 0; c < s.c; ++c) {
    Real const gm = gamma.value()[c], bt = beta.value()[c];
    Real const *q = xhat.channel(c);
    Real *o = out.channel(c);
    for (std::size_t i = 0; i < s.volume(); ++i) { o[i] = gm * q[i] + bt; }
  }
  return make_result(std::move(out), {x, gamma, beta}, [=, xhat = std::move(xhat), inv_std = std::move(inv_std)]() mutable {
    return [px = x.node().get(), pg = gamma.node().get(), pb = beta.node().get(), xhat = std::move(xhat),
            inv_std = std::move(inv_std), s, groups, cg, n](Tensor<Real> const &g) {
      if (pg->requires_grad || pb->requires_grad) {
        Tensor<Real> dg({s.c, 1, 1, 1}), db({s.c, 1, 1, 1});
        for (int c = 0; c < s.c; ++c) {
          Real const *gp = g.channel(c), *q = xhat.channel(c);
          dg[c] = Real(lane_dot(gp, q, s.volume()));
          db[c] = Real(lane_sum(gp, s.volume()));
        }
        if (pg->requires_grad) { pg->accumulate(dg); }
        if (pb->requires_grad) { pb->accumulate(db); }
      }
      if (px->requires_grad) {
        Tensor<Real> dx(s);
        auto const &gm = pg->value;
        for (int gi = 0; gi < groups; ++gi) {
          double s1 = 0, s2 = 0;
          for (int c = gi * cg; c < (gi + 1) * cg; ++c) {
            Real const *gp = g.channel(c), *q = xhat.channel(c);
            s1 += double(gm[c]) * lane_sum(gp, s.volume());
            s2 += double(gm[c]) * lane_dot(gp, q, s.volume());
          }
          Real const m1 = Real(s1 / double(n)), m2 = Real(s2 / double(n)), is = inv_std[gi];
          for (int c = gi * cg; c < (gi + 1) * cg; ++c) {
            Real const *gp = g.channel(c), *q = xhat.channel(c);
            Real *d = dx.channel(c);
            Real const gmc = gm[c];
            for (std::size_t i = 0; i < s.volume(); ++i) { d[i] = is * (gp[i] * gmc - m1 - q[i] * m2); }
          }
        }
        px->accumulate(dx);
      }
    };
  });
}

template <typename Real>
Var<Real> concat_channels(Var<Real> const &a, Var<Real> const &b)
{
  auto const sa = a.shape(), sb = b.shape();
  require(sa.t == sb.t && sa.h == sb.h && sa.w == sb.w, "concat extent mismatch");
  Tensor<Real> out({sa.c + sb.c, sa.t, sa.h, sa.w});
  std::copy(a.value().vec().begin(), a.value().vec().end(), out.data());
  std::copy(b.value().vec().begin(), b.value().vec().end(), out.data() + sa.size());
  return make_result(std::move(out), {a, b}, [a, b, sa, sb] {
    return [pa = a.node().get(), pb = b.node().get(), sa, sb](Tensor<Real> const &g) {
      if (pa->requires_grad) {
        pa->accumulate(Tensor<Real>(sa, std::vector<Real>(g.data(), g.data() + sa.size())));
      }
      if (pb->requires_grad) {
        pb->accumulate(Tensor<Real>(sb, std::vector<Real>(g.data() + sa.size(), g.data() + sa.size() + sb.size())));
      }
    };
  });
}

/// Channel range [c0, c0 + n).
template <typename Real>
Var<Real> slice_channels(Var<Real> const &x, int c0, int n)
{
  auto const s = x.shape();
  require(c0 >= 0 && n >= 1 && c0 + n <= s.c, "channel slice out of range");
  Shape const os{n, s.t, s.h, s.w};
  Tensor<Real> out(os, std::vector<Real>(x.value().channel(c0), x.value().channel(c0) + os.size()));
  return make_result(std::move(out), {x}, [x, s, c0, os] {
    return [px = x.node().get(), s, c0, os](Tensor<Real> const &g) {
      Tensor<Real> d(s);
      std::copy(g.vec().begin(), g.vec().end(), d.channel(c0));
      px->accumulate(d);
    };
  });
}

/// 2x2 spatial average pooling; time is untouched.
template <typename Real>
Var<Real> avg_pool2(Var<Real> const &x)
{
  auto const s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "pooling requires even spatial extent");
  Shape const os{s.c, s.t, s.h / 2, s.w / 2};
  Tensor<Real> out(os);
  auto const &v = x.value();
  for (int c = 0; c < s.c; ++c) {
    for (int t = 0; t < s.t; ++t) {
      for (int y = 0; y < os.h; ++y) {
        Real const *r0 = v.row(c, t, 2 * y), *r1 = v.row(c, t, 2 * y + 1);
        Real *o = out.row(c, t, y);
        for (int xx = 0; xx < os.w; ++xx) {
          o[xx] = Real(0.25) * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
        }
      }
    }
  }
  return make_result(std::move(out), {x}, [x, s, os] {
    return [px = x.node().get(), s, os](Tensor<Real> const &g) {
      Tensor<Real> d(s);
      for (int c = 0; c < s.c; ++c) {
        for (int t = 0; t < s.t; ++t) {
          for (int y = 0; y < os.h; ++y) {
            Real const *gr = g.row(c, t, y);
            Real *d0 = d.row(c, t, 2 * y), *d1 = d.row(c, t, 2 * y + 1);
            for (int xx = 0; xx < os.w; ++xx) {
              Real const q = Real(0.25) * gr[xx];
              d0[2 * xx] = d0[2 * xx + 1] = d1[2 * xx] = d1[2 * xx + 1] = q;
            }
          }
        }
      }
      px->accumulate(d);
    };
  });
}

/// Nearest-neighbour 2x spatial upsampling.
template <typename Real>
Var<Real> upsample2(Var<Real> const &x)
{
  auto const s = x.shape();
  Shape const os{s.c, s.t, s.h * 2, s.w * 2};
  Tensor<Real> out(os);
  auto const &v = x.value();
  for (int c = 0; c < s.c; ++c) {
    for (int t = 0; t < s.t; ++t) {
      for (int y = 0; y < os.h; ++y) {
        Real const *r = v.row(c, t, y / 2);
        Real *o = out.row(c, t, y);
        for (int xx = 0; xx < os.w; ++xx) { o[xx] = r[xx / 2]; }
      }
    }
  }
  return make_result(std::move(out), {x}, [x, s, os] {
    return [px = x.node().get(), s, os](Tensor<Real> const &g) {
      Tensor<Real> d(s);
      for (int c = 0; c < s.c; ++c) {
        for (int t = 0; t < s.t; ++t) {
          for (int y = 0; y < os.h; ++y) {
            Real const *gr = g.row(c, t, y);
            Real *dr = d.row(c, t, y / 2);
            for (int xx = 0; xx < s.w; ++xx) { dr[xx] += gr[2 * xx] + gr[2 * xx + 1]; }
          }
        }
      }
      px->accumulate(d);
    };
  });
}

/// Dense layer on a {in,1,1,1} vector with weights {out,in,1,1} and bias {out,1,1,1}.
template <typename Real>
Var<Real> linear(Var<Real> const &v, Var<Real> const &w, Var<Real> const &b)
{
  int const n_in = v.shape().c, n_out = w.shape().c;
  require(w.shape().t == n_in && v.value().size() == std::size_t(n_in), "linear layer shape mismatch");
  Tensor<Real> out({n_out, 1, 1, 1});
  for (int o = 0; o < n_out; ++o) {
    Real acc = b.value()[o];
    for (int i = 0; i < n_in; ++i) { acc += w.value()[std::size_t(o) * n_in + i] * v.value()[i]; }
    out[o] = acc;
  }
  return make_result(std::move(out), {v, w, b}, [v, w, b, n_in, n_out] {
    return [pv = v.node().get(), pw = w.node().get(), pb = b.node().get(), n_in, n_out](Tensor<Real> const &g) {
      if (pb->requires_grad) { pb->accumulate(g); }
      if (pw->requires_grad) {
        Tensor<Real> dw(pw->value.shape());
        for (int o = 0; o < n_out; ++o) {
          for (int i = 0; i < n_in; ++i) { dw[std::size_t(o) * n_in + i] = g[o] * pv->value[i]; }
        }
        pw->accumulate(dw);
      }
      if (pv->requires_grad) {
        Tensor<Real> dv(pv->value.shape());
        for (int o = 0; o < n_out; ++o) {
          for (int i = 0; i < n_in; ++i) { dv[i] += g[o] * pw->value[std::size_t(o) * n_in + i]; }
        }
        pv->accumulate(dv);
      }
    };
  });
}

/// Mean of squared differences, as a {1,1,1,1} scalar. `target` is treated as a constant.
template <typename Real>
Var<Real> mse(Var<Real> const &pred, Tensor<Real> const &target)
{
  pred.value().check_same(target);
  double sum = 0;
  auto const &p = pred.value();
  for (std::size_t i = 0; i < p.size(); ++i) {
    double const d = double(p[i]) - double(target[i]);
    sum += d * d;
  }
  Tensor<Real> out({1, 1, 1, 1}, Real(sum / double(p.size())));
  return make_result(std::move(out), {pred}, [pred, target] {
    return [pp = pred.node().get(), target](Tensor<Real> const &g) {
      auto const &p = pp->value;
      Real const k = Real(2) * g[0] / Real(p.size());
      Tensor<Real> d(p.shape());
      for (std::size_t i = 0; i < p.size(); ++i) { d[i] = k * (p[i] - target[i]); }
      pp->accumulate(d);
    };
  });
}

} // namespace cinediff::nn
