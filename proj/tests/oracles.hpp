#pragma once

// Independent brute-force reference implementations used by the tests.

#include "cinediff/cine.hpp"
#include "cinediff/nn/graph.hpp"
#include "cinediff/nn/params.hpp"
#include "cinediff/rng.hpp"

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

using cinediff::ComplexStack;

template <typename Real>
ComplexStack<Real> random_stack(int T, int H, int W, std::uint64_t seed, double scale = 1.0)
{
  cinediff::Rng rng(seed);
  ComplexStack<Real> z(T, H, W);
  for (auto &v : z.vec()) { v = {Real(scale * rng.normal()), Real(scale * rng.normal())}; }
  return z;
}

/// Centered orthonormal DFT by direct summation: frequency index k and spatial index n are both
/// measured from floor(N/2).
inline ComplexStack<double> centered_dft(ComplexStack<double> const &x, bool inverse = false)
{
  int const H = x.rows(), W = x.cols();
  double const sign = inverse ? 1.0 : -1.0;
  ComplexStack<double> out(x.frames(), H, W);
  for (int t = 0; t < x.frames(); ++t) {
    for (int ky = 0; ky < H; ++ky) {
      for (int kx = 0; kx < W; ++kx) {
        std::complex<double> s = 0;
        for (int y = 0; y < H; ++y) {
          for (int c = 0; c < W; ++c) {
            double const ph = 2 * std::numbers::pi *
                              (double(ky - H / 2) * (y - H / 2) / H + double(kx - W / 2) * (c - W / 2) / W);
            s += x(t, y, c) * std::polar(1.0, sign * ph);
          }
        }
        out(t, ky, kx) = s / std::sqrt(double(H) * W);
      }
    }
  }
  return out;
}

template <typename Real>
std::complex<double> inner(ComplexStack<Real> const &a, ComplexStack<Real> const &b)
{
  std::complex<double> s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { s += std::conj(std::complex<double>(a[i])) * std::complex<double>(b[i]); }
  return s;
}

template <typename Real>
double max_abs_diff(ComplexStack<Real> const &a, ComplexStack<Real> const &b)
{
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { m = std::max(m, std::abs(std::complex<double>(a[i]) - std::complex<double>(b[i]))); }
  return m;
}

// Metrics written out straight from their definitions.

template <typename Real>
double nmse(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  double num = 0, den = 0;
  for (int t = 0; t < x.frames(); ++t) {
    for (int y = 0; y < x.rows(); ++y) {
      for (int c = 0; c < x.cols(); ++c) {
        double const a = std::hypot(double(x(t, y, c).real()), double(x(t, y, c).imag()));
        double const b = std::hypot(double(ref(t, y, c).real()), double(ref(t, y, c).imag()));
        num += (a - b) * (a - b);
        den += b * b;
      }
    }
  }
  return num / den;
}

template <typename Real>
double psnr(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  double peak = 0, se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const a = std::hypot(double(x[i].real()), double(x[i].imag()));
    double const b = std::hypot(double(ref[i].real()), double(ref[i].imag()));
    peak = std::max(peak, b);
    se += (a - b) * (a - b);
  }
  return 20 * std::log10(peak) - 10 * std::log10(se / double(x.size()));
}

/// SSIM with a full 2D Gaussian window (no separability), sample moments computed per window position.
template <typename Real>
double ssim(ComplexStack<Real> const &x, ComplexStack<Real> const &ref, int n = 7, double sigma = 1.5)
{
  int const H = x.rows(), W = x.cols();
  std::vector<double> w2(std::size_t(n) * n);
  double wsum = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double const di = i - (n - 1) / 2.0, dj = j - (n - 1) / 2.0;
      w2[i * n + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      wsum += w2[i * n + j];
    }
  }
  for (auto &v : w2) { v /= wsum; }
  double L = 0;
  for (auto const &v : ref.vec()) { L = std::max(L, double(std::abs(v))); }
  double const c1 = std::pow(0.01 * L, 2), c2 = std::pow(0.03 * L, 2);
  double total = 0;
  for (int t = 0; t < x.frames(); ++t) {
    double fsum = 0;
    int cnt = 0;
    for (int y0 = 0; y0 + n <= H; ++y0) {
      for (int x0 = 0; x0 + n <= W; ++x0) {
        double mx = 0, my = 0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            mx += w2[i * n + j] * std::abs(std::complex<double>(x(t, y0 + i, x0 + j)));
            my += w2[i * n + j] * std::abs(std::complex<double>(ref(t, y0 + i, x0 + j)));
          }
        }
        double vx = 0, vy = 0, cxy = 0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            double const a = std::abs(std::complex<double>(x(t, y0 + i, x0 + j))) - mx;
            double const b = std::abs(std::complex<double>(ref(t, y0 + i, x0 + j))) - my;
            vx += w2[i * n + j] * a * a;
            vy += w2[i * n + j] * b * b;
            cxy += w2[i * n + j] * a * b;
          }
        }
        fsum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++cnt;
      }
    }
    total += fsum / cnt;
  }
  return total / x.frames();
}

/// Two-sided signed-rank p-value by enumerating all 2^n sign assignments of the observed ranks.
inline double wilcoxon_enumerated_p(std::vector<double> const &a, std::vector<double> const &b, double *w_plus_out = nullptr)
{
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) { d.push_back(a[i] - b[i]); }
  }
  int const n = int(d.size());
  std::vector<double> rank(n);
  for (int i = 0; i < n; ++i) {
    int less = 0, equal = 0;
    for (int j = 0; j < n; ++j) {
      if (std::abs(d[j]) < std::abs(d[i])) { ++less; }
      if (std::abs(d[j]) == std::abs(d[i])) { ++equal; }
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  double w = 0;
  for (int i = 0; i < n; ++i) {
    if (d[i] > 0) { w += rank[i]; }
  }
  if (w_plus_out != nullptr) { *w_plus_out = w; }
  long le = 0, ge = 0;
  for (long mask = 0; mask < (1L << n); ++mask) {
    double s = 0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1L << i)) { s += rank[i]; }
    }
    if (s <= w + 1e-9) { ++le; }
    if (s >= w - 1e-9) { ++ge; }
  }
  return std::min(1.0, 2.0 * double(std::min(le, ge)) / double(1L << n));
}

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per parameter tensor, using
/// central differences on up to `per_tensor` entries of each tensor.
struct GradCheck
{
  std::string name;
  double rel_error = 0;
  double norm = 0;
  int checked = 0;
};

template <typename Real>
std::vector<GradCheck> check_gradients(cinediff::nn::ParamSet<Real> &params,
                                       std::function<cinediff::nn::Var<Real>()> const &loss,
                                       int per_tensor,
                                       double h,
                                       std::uint64_t seed)
{
  params.set_trainable(true);
  params.zero_grad();
  cinediff::nn::backward(loss());
  cinediff::Rng rng(seed);
  std::vector<GradCheck> out;
  for (std::size_t p = 0; p < params.tensors(); ++p) {
    auto &var = params.vars()[p];
    auto const grad = var.grad();
    std::size_t const n = var.value().size();
    std::vector<std::size_t> idx;
    if (int(n) <= per_tensor) {
      for (std::size_t i = 0; i < n; ++i) { idx.push_back(i); }
    } else {
      for (int k = 0; k < per_tensor; ++k) { idx.push_back(rng.below(n)); }
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    for (auto i : idx) {
      Real const orig = var.value()[i];
      var.mutable_value()[i] = orig + Real(h);
      double const lp = loss().value()[0];
      var.mutable_value()[i] = orig - Real(h);
      double const lm = loss().value()[0];
      var.mutable_value()[i] = orig;
      double const num = (lp - lm) / (2 * h);
      double const ana = grad.empty() ? 0.0 : double(grad[i]);
      diff2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
    }
    double const scale = std::sqrt(std::max(a2, n2));
    out.push_back({params.names()[p], scale > 1e-10 ? std::sqrt(diff2) / scale : 0.0, scale, int(idx.size())});
  }
  params.set_trainable(false);
  return out;
}

} // namespace oracle
