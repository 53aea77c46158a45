#pragma once

#include "diffusion.hpp"

#include <optional>

namespace cinediff {

/// One antithetic pair. x_pos is driven by the trajectory drawn from trajectory_seed, x_neg by its
/// full negation (initial draw and every injection).
template <typename Real>
struct PairedSample
{
  Tensor<Real> x_pos, x_neg, x_pair, half_difference;
  std::uint64_t trajectory_seed = 0;
};

/// (a + b) / 2 elementwise. Symmetric in its arguments bit for bit.
template <typename Real>
Tensor<Real> mean_of(Tensor<Real> const &a, Tensor<Real> const &b)
{
  a.check_same(b);
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) { out[i] = (a[i] + b[i]) / Real(2); }
  return out;
}

template <typename Real, Denoiser<Real> D>
Tensor<Real> sample_single(D const &denoiser, Condition<Real> const &cond, NoiseSchedule const &s, std::uint64_t seed)
{
  auto const z = NoiseTrajectory<Real>::draw(seed, cond.image_shape(), s.n_steps);
  return ancestral_sample(denoiser, cond, s, z);
}

/// Mean of two independent samplings.
template <typename Real, Denoiser<Real> D>
Tensor<Real> sample_avg(D const &denoiser,
                        Condition<Real> const &cond,
                        NoiseSchedule const &s,
                        std::uint64_t seed_a,
                        std::uint64_t seed_b)
{
  require(seed_a != seed_b, "sample_avg needs two distinct seeds");
  return mean_of(sample_single(denoiser, cond, s, seed_a), sample_single(denoiser, cond, s, seed_b));
}

/// Pair from an already computed x_pos.
template <typename Real>
PairedSample<Real> make_pair(Tensor<Real> x_pos, Tensor<Real> x_neg, std::uint64_t seed)
{
  PairedSample<Real> p;
  p.trajectory_seed = seed;
  p.x_pair = mean_of(x_pos, x_neg);
  p.half_difference = Tensor<Real>(x_pos.shape());
  for (std::size_t i = 0; i < x_pos.size(); ++i) { p.half_difference[i] = (x_pos[i] - x_neg[i]) / Real(2); }
  p.x_pos = std::move(x_pos);
  p.x_neg = std::move(x_neg);
  return p;
}

template <typename Real, Denoiser<Real> D>
PairedSample<Real> sample_paired(D const &denoiser, Condition<Real> const &cond, NoiseSchedule const &s, std::uint64_t seed)
{
  auto const z = NoiseTrajectory<Real>::draw(seed, cond.image_shape(), s.n_steps);
  auto x_pos = ancestral_sample(denoiser, cond, s, z);
  auto x_neg = ancestral_sample(denoiser, cond, s, z.negate());
  return make_pair(std::move(x_pos), std::move(x_neg), seed);
}

/// Pearson correlation. Two identical vectors correlate at exactly 1 even when constant.
inline double pearson(std::vector<double> const &a, std::vector<double> const &b)
{
  require(a.size() == b.size() && !a.empty(), "pearson needs two equally long nonempty samples");
  if (a == b) { return 1.0; }
  double const n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double const da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0 && sbb > 0)) { return 0.0; }
  return sab / std::sqrt(saa * sbb);
}

namespace detail {

// (x - c) and -(y - c) in double.
template <typename Real>
std::pair<std::vector<double>, std::vector<double>> opposed(Tensor<Real> const &x, Tensor<Real> const &y, Tensor<Real> const &c)
{
  x.check_same(c);
  y.check_same(c);
  std::vector<double> a(x.size()), b(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    a[i] = double(x[i]) - double(c[i]);
    b[i] = -(double(y[i]) - double(c[i]));
  }
  return {std::move(a), std::move(b)};
}

} // namespace detail

struct NoiseCorrelation
{
  double construction = 0;              // (x_pos - x_pair) vs -(x_neg - x_pair); 1 by construction
  std::optional<double> vs_reference;   // (x_pos - ref) vs -(x_neg - ref)
};

/// Mean over pairs of the two opposition correlations.
template <typename Real>
NoiseCorrelation noise_component_correlation(std::vector<PairedSample<Real>> const &pairs,
                                             Tensor<Real> const *reference = nullptr)
{
  require(!pairs.empty(), "noise_component_correlation needs at least one paired sample");
  NoiseCorrelation out;
  double sum_c = 0, sum_r = 0;
  for (auto const &p : pairs) {
    auto const [a, b] = detail::opposed(p.x_pos, p.x_neg, p.x_pair);
    sum_c += pearson(a, b);
    if (reference != nullptr) {
      auto const [ar, br] = detail::opposed(p.x_pos, p.x_neg, *reference);
      sum_r += pearson(ar, br);
    }
  }
  out.construction = sum_c / double(pairs.size());
  if (reference != nullptr) { out.vs_reference = sum_r / double(pairs.size()); }
  return out;
}

/// Per-element sample standard deviation (n - 1 denominator) across an ensemble.
template <typename Real>
std::vector<double> pixelwise_std(std::vector<Tensor<Real>> const &ensemble)
{
  require(ensemble.size() >= 2, "pixelwise_std needs at least two members");
  std::size_t const n = ensemble.front().size();
  for (auto const &e : ensemble) { e.check_same(ensemble.front()); }
  std::vector<double> out(n);
  double const m = double(ensemble.size());
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0;
    for (auto const &e : ensemble) { mean += e[i]; }
    mean /= m;
    double ss = 0;
    for (auto const &e : ensemble) { ss += (e[i] - mean) * (e[i] - mean); }
    out[i] = std::sqrt(ss / (m - 1));
  }
  return out;
}

inline double median(std::vector<double> v)
{
  require(!v.empty(), "median of an empty sample");
  return percentile(std::move(v), 0.5);
}

} // namespace cinediff
