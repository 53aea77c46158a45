#pragma once

#include "kspace.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <concepts>
#include <cstdint>

namespace cinediff {

/// Discrete DDPM noise schedule. Index i = 0 .. n_steps-1 is diffusion step t = i + 1.
struct NoiseSchedule
{
  int n_steps = 0;
  double beta_min = 0, beta_max = 0;
  std::vector<double> beta, alpha, alpha_bar, posterior_sigma;

  /// Endpoint conditions a sampling schedule must meet: nearly clean first step, nearly pure noise last.
  bool suitable_for_sampling() const { return alpha_bar.front() > 0.9 && alpha_bar.back() < 0.05; }
};

/// Linear beta ramp from beta_min to beta_max. Structural invariants (0 < beta < 1, alpha_bar strictly
/// decreasing) are enforced here; the endpoint conditions are reported by suitable_for_sampling().
inline NoiseSchedule make_schedule(int n_steps, double beta_min, double beta_max)
{
  require(n_steps >= 2, "schedule needs at least 2 steps");
  require(beta_min > 0 && beta_min < beta_max && beta_max < 1, "schedule requires 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.n_steps = n_steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  double prod = 1;
  for (int i = 0; i < n_steps; ++i) {
    double const b = beta_min + (beta_max - beta_min) * double(i) / double(n_steps - 1);
    s.beta.push_back(b);
    s.alpha.push_back(1 - b);
    prod *= 1 - b;
    s.alpha_bar.push_back(prod);
    // The final reverse step (t = 1) is deterministic.
    s.posterior_sigma.push_back(i == 0 ? 0.0 : std::sqrt(b));
  }
  for (int i = 1; i < n_steps; ++i) {
    require(s.alpha_bar[i] < s.alpha_bar[i - 1], "alpha_bar must be strictly decreasing");
  }
  return s;
}

/// Step-count-scaled defaults: beta from 1e-4 * 1000/n to 0.02 * 1000/n.
inline NoiseSchedule default_schedule(int n_steps)
{
  require(n_steps > 20, "the scaled default schedule needs more than 20 steps");
  double const k = 1000.0 / n_steps;
  return make_schedule(n_steps, 1e-4 * k, 0.02 * k);
}

template <typename Real>
Tensor<Real> normal_tensor(Shape s, Rng &rng)
{
  Tensor<Real> t(s);
  for (auto &v : t.vec()) { v = Real(rng.normal()); }
  return t;
}

/// sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
template <typename Real>
Tensor<Real> q_sample(Tensor<Real> const &x0, int t, Tensor<Real> const &eps, NoiseSchedule const &s)
{
  require(t >= 0 && t < s.n_steps, "diffusion step " + std::to_string(t) + " out of range");
  x0.check_same(eps);
  Real const a = Real(std::sqrt(s.alpha_bar[t])), b = Real(std::sqrt(1 - s.alpha_bar[t]));
  Tensor<Real> out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) { out[i] = a * x0[i] + b * eps[i]; }
  return out;
}

/// Every random draw one sampling run consumes: the x_T draw and one injection field per noisy step.
/// per_step[i - 1] is the injection of reverse step i (i = 1 .. n_steps-1); step 0 injects nothing.
template <typename Real>
struct NoiseTrajectory
{
  std::uint64_t seed = 0;
  bool negated = false;
  Tensor<Real> initial;
  std::vector<Tensor<Real>> per_step;

  static NoiseTrajectory draw(std::uint64_t seed, Shape shape, int n_steps)
  {
    NoiseTrajectory z;
    z.seed = seed;
    Rng rng(seed);
    z.initial = normal_tensor<Real>(shape, rng);
    for (int i = 1; i < n_steps; ++i) { z.per_step.push_back(normal_tensor<Real>(shape, rng)); }
    return z;
  }

  NoiseTrajectory negate() const
  {
    NoiseTrajectory z = *this;
    z.negated = !negated;
    z.initial = -initial;
    for (auto &f : z.per_step) { f = -f; }
    return z;
  }
};

/// Conditioning channels: real/imag of the zero-filled acquisition, then real/imag of the baseline
/// reconstruction, all divided by normalization_scale.
template <typename Real>
struct Condition
{
  Tensor<Real> channels; // {4, T, H, W}
  double normalization_scale = 1;

  Shape image_shape() const
  {
    auto s = channels.shape();
    return {2, s.t, s.h, s.w};
  }
};

/// Linear-interpolated percentile (q in [0, 1]) of a sample.
inline double percentile(std::vector<double> v, double q)
{
  require(!v.empty(), "percentile of an empty sample");
  std::sort(v.begin(), v.end());
  double const pos = q * double(v.size() - 1);
  auto const lo = std::size_t(std::floor(pos));
  auto const hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

template <typename Real, typename In>
Condition<Real> build_condition(BasicKSpaceData<In> const &k, ComplexStack<In> const &baseline)
{
  k.samples.check_same(baseline);
  double const scale = percentile(magnitudes(baseline), 0.95);
  if (!(scale > 0) || !std::isfinite(scale)) {
    throw NormalizationError("baseline reconstruction has no energy to normalize by");
  }
  auto const zf = zero_filled(k);
  Condition<Real> c;
  c.normalization_scale = scale;
  c.channels = Tensor<Real>({4, baseline.frames(), baseline.rows(), baseline.cols()});
  std::size_t const n = baseline.size();
  for (std::size_t i = 0; i < n; ++i) {
    c.channels[i] = Real(double(zf[i].real()) / scale);
    c.channels[n + i] = Real(double(zf[i].imag()) / scale);
    c.channels[2 * n + i] = Real(double(baseline[i].real()) / scale);
    c.channels[3 * n + i] = Real(double(baseline[i].imag()) / scale);
  }
  return c;
}

/// Anything that predicts the injected noise from (x_t, step index, condition).
template <typename D, typename Real>
concept Denoiser = requires(D const &d, Tensor<Real> const &x, int t, Condition<Real> const &c) {
  { d(x, t, c) } -> std::convertible_to<Tensor<Real>>;
};

/// Mean squared error between eps and the prediction at q_sample(x0, t, eps).
template <typename Real, Denoiser<Real> D>
double diffusion_loss(D const &denoiser,
                      Tensor<Real> const &x0,
                      Condition<Real> const &cond,
                      int t,
                      Tensor<Real> const &eps,
                      NoiseSchedule const &s)
{
  auto const xt = q_sample(x0, t, eps, s);
  Tensor<Real> const pred = denoiser(xt, t, cond);
  pred.check_same(eps);
  double sum = 0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    double const d = double(pred[i]) - double(eps[i]);
    sum += d * d;
  }
  double const loss = sum / double(eps.size());
  if (!std::isfinite(loss)) { throw TrainingDivergence(t, "non-finite diffusion loss"); }
  return loss;
}

/// One reverse-process step from index t: mean update plus posterior_sigma[t] * injection.
template <typename Real>
void reverse_step(Tensor<Real> &x, Tensor<Real> const &eps_hat, int t, NoiseSchedule const &s, Tensor<Real> const *noise)
{
  Real const inv_sqrt_alpha = Real(1.0 / std::sqrt(s.alpha[t]));
  Real const coef = Real(s.beta[t] / std::sqrt(1 - s.alpha_bar[t]));
  Real const sigma = Real(s.posterior_sigma[t]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    Real v = inv_sqrt_alpha * (x[i] - coef * eps_hat[i]);
    if (noise != nullptr) { v += sigma * (*noise)[i]; }
    x[i] = v;
  }
}

/// Ancestral DDPM sampling driven entirely by the supplied trajectory.
template <typename Real, Denoiser<Real> D>
Tensor<Real> ancestral_sample(D const &denoiser,
                              Condition<Real> const &cond,
                              NoiseSchedule const &s,
                              NoiseTrajectory<Real> const &z)
{
  auto const shape = cond.image_shape();
  require(z.initial.shape() == shape, "trajectory shape does not match the condition");
  require(int(z.per_step.size()) == s.n_steps - 1, "trajectory length does not match the schedule");
  Tensor<Real> x = z.initial;
  for (int t = s.n_steps - 1; t >= 0; --t) {
    Tensor<Real> const eps_hat = denoiser(x, t, cond);
    require(eps_hat.shape() == shape, "denoiser output shape mismatch");
    reverse_step(x, eps_hat, t, s, t > 0 ? &z.per_step[t - 1] : nullptr);
    if (!x.all_finite()) { throw SamplingDivergence(t, "non-finite sampler state"); }
  }
  return x;
}

/// Undoes the condition normalization and returns the sample as a complex stack.
template <typename Out, typename Real>
ComplexStack<Out> denormalize(Tensor<Real> const &x, Condition<Real> const &cond)
{
  auto z = from_channels<Out>(x);
  z *= Out(cond.normalization_scale);
  return z;
}

} // namespace cinediff
