#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>

namespace cinediff::nn {

/// exp over an array. The float path is a branch-free Cephes-style range reduction + polynomial
/// (about 2 ulp) that the compiler vectorizes; double uses std::exp.
inline void exp_inplace(float *x, std::size_t n)
{
  for (std::size_t i = 0; i < n; ++i) {
    float v = x[i] < -87.0f ? -87.0f : x[i];
    v = v > 88.0f ? 88.0f : v;
    float const k = (v * 1.44269504088896341f + 12582912.0f) - 12582912.0f;
    float r = v - k * 0.693359375f;
    r = r - k * -2.12194440e-4f;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    auto const bits = std::uint32_t(std::int32_t(k) + 127) << 23;
    x[i] = p * std::bit_cast<float>(bits);
  }
}

inline void exp_inplace(double *x, std::size_t n)
{
  for (std::size_t i = 0; i < n; ++i) { x[i] = std::exp(x[i]); }
}

// Reductions accumulate in double across a fixed set of lanes, so they vectorize and the summation
// order does not depend on the compiler.
constexpr std::size_t kLanes = 8;

template <typename Real, typename F>
double lane_reduce(std::size_t n, F &&term)
{
  double l[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t j = 0; j < kLanes; ++j) { l[j] += term(i + j); }
  }
  double s = 0;
  for (; i < n; ++i) { s += term(i); }
  for (std::size_t j = 0; j < kLanes; ++j) { s += l[j]; }
  return s;
}

template <typename Real>
double lane_sum(Real const *p, std::size_t n)
{
  return lane_reduce<Real>(n, [p](std::size_t i) { return double(p[i]); });
}

template <typename Real>
double lane_dot(Real const *a, Real const *b, std::size_t n)
{
  return lane_reduce<Real>(n, [a, b](std::size_t i) { return double(a[i]) * double(b[i]); });
}

template <typename Real>
double lane_sum_sq_dev(Real const *p, std::size_t n, double mean)
{
  return lane_reduce<Real>(n, [p, mean](std::size_t i) {
    double const d = double(p[i]) - mean;
    return d * d;
  });
}

} // namespace cinediff::nn
