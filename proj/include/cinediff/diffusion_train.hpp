#pragma once

#include "stunet.hpp"
#include "training_log.hpp"

namespace cinediff {

/// What the network output regresses: the injected noise, or v = sqrt(ab) eps - sqrt(1 - ab) x0.
enum class Prediction
{
  Epsilon,
  Velocity
};

inline std::string to_string(Prediction p) { return p == Prediction::Epsilon ? "epsilon" : "velocity"; }

inline Prediction parse_prediction(std::string const &s)
{
  if (s == "epsilon") { return Prediction::Epsilon; }
  if (s == "velocity") { return Prediction::Velocity; }
  throw ParameterError("unknown prediction '" + s + "'");
}

struct DiffusionTrainConfig
{
  Prediction prediction = Prediction::Velocity;
  bool residual = true; // x0 is the reference minus the baseline, restored after sampling
  int steps = 2000;
  double learning_rate = 2e-3;
  int crop = 32;       // square spatial crop per step; 0 trains on full frames
  int log_every = 100; // steps per loss_history entry
  int probe_count = 32;
  std::uint64_t seed = 0;

  void validate() const
  {
    require(steps >= 0 && log_every >= 1 && probe_count >= 1, "diffusion training counts must be positive");
    require(learning_rate > 0, "diffusion learning_rate must be positive");
    require(crop >= 0, "crop must be nonnegative");
  }
};

/// Clean target x0 = reference / scale (minus the normalized baseline when residual) with the
/// matching condition.
template <typename Real>
struct DiffusionExample
{
  Tensor<Real> x0;
  Condition<Real> cond;
};

/// Baseline channels of a condition: {2, T, H, W}.
template <typename Real>
Tensor<Real> baseline_channels(Condition<Real> const &cond)
{
  Tensor<Real> b(cond.image_shape());
  std::copy_n(cond.channels.data() + b.size(), b.size(), b.data());
  return b;
}

template <typename Real, typename In>
DiffusionExample<Real> make_diffusion_example(BasicKSpaceData<In> const &k,
                                              ComplexStack<In> const &baseline,
                                              ComplexStack<In> const &reference,
                                              bool residual = false)
{
  DiffusionExample<Real> ex;
  ex.cond = build_condition<Real>(k, baseline);
  ex.x0 = to_channels<Real>(reference);
  ex.x0 *= Real(1.0 / ex.cond.normalization_scale);
  if (residual) { ex.x0 -= baseline_channels(ex.cond); }
  return ex;
}

/// Sample in normalized units back to an image: adds the baseline for residual models, then undoes
/// the normalization.
template <typename Out, typename Real>
ComplexStack<Out> restore_image(Tensor<Real> x, Condition<Real> const &cond, bool residual)
{
  if (residual) { x += baseline_channels(cond); }
  return denormalize<Out>(x, cond);
}

/// Regression target of the network output.
template <typename Real>
Tensor<Real> prediction_target(Prediction p, Tensor<Real> const &x0, Tensor<Real> const &eps, int t, NoiseSchedule const &s)
{
  if (p == Prediction::Epsilon) { return eps; }
  Real const a = Real(std::sqrt(s.alpha_bar[t])), b = Real(std::sqrt(1 - s.alpha_bar[t]));
  Tensor<Real> v(eps.shape());
  for (std::size_t i = 0; i < v.size(); ++i) { v[i] = a * eps[i] - b * x0[i]; }
  return v;
}

/// eps = sqrt(ab) v + sqrt(1 - ab) x_t, exact whenever x_t = q_sample(x0, t, eps).
template <typename Real>
Tensor<Real> epsilon_from_velocity(Tensor<Real> v, Tensor<Real> const &x_t, int t, NoiseSchedule const &s)
{
  v.check_same(x_t);
  Real const a = Real(std::sqrt(s.alpha_bar[t])), b = Real(std::sqrt(1 - s.alpha_bar[t]));
  for (std::size_t i = 0; i < v.size(); ++i) { v[i] = a * v[i] + b * x_t[i]; }
  return v;
}

/// Noise predictor seen by the sampler: the network output itself, or
/// eps_hat = sqrt(ab) v_hat + sqrt(1 - ab) x_t for velocity models.
template <typename Real>
struct ModelDenoiser
{
  STUNet<Real> const *net = nullptr;
  NoiseSchedule const *schedule = nullptr;
  Prediction prediction = Prediction::Epsilon;

  Tensor<Real> operator()(Tensor<Real> const &x_t, int t, Condition<Real> const &cond) const
  {
    auto out = (*net)(x_t, t, cond);
    if (prediction == Prediction::Epsilon) { return out; }
    return epsilon_from_velocity(std::move(out), x_t, t, *schedule);
  }
};

/// Spatial window [y0, y0 + size) x [x0, x0 + size) of every channel and frame.
template <typename Real>
Tensor<Real> crop_tensor(Tensor<Real> const &t, int y0, int x0, int size)
{
  auto const s = t.shape();
  require(y0 >= 0 && x0 >= 0 && y0 + size <= s.h && x0 + size <= s.w, "crop outside the frame");
  Tensor<Real> out({s.c, s.t, size, size});
  for (int c = 0; c < s.c; ++c) {
    for (int f = 0; f < s.t; ++f) {
      for (int y = 0; y < size; ++y) { std::copy_n(t.row(c, f, y0 + y) + x0, size, out.row(c, f, y)); }
    }
  }
  return out;
}

namespace detail {

// One training draw: which example, which step, where to crop, and the corruption noise.
template <typename Real>
struct DiffusionDraw
{
  Tensor<Real> x0, cond, eps;
  int t = 0;
};

template <typename Real>
DiffusionDraw<Real> draw_training_case(std::vector<DiffusionExample<Real>> const &data, int n_steps, int crop, Rng &rng)
{
  auto const &ex = data[rng.below(data.size())];
  DiffusionDraw<Real> d;
  d.t = int(rng.below(std::uint64_t(n_steps)));
  auto const s = ex.x0.shape();
  if (crop > 0 && (crop < s.h || crop < s.w)) {
    int const y0 = int(rng.below(std::uint64_t(s.h - crop + 1))), x0 = int(rng.below(std::uint64_t(s.w - crop + 1)));
    d.x0 = crop_tensor(ex.x0, y0, x0, crop);
    d.cond = crop_tensor(ex.cond.channels, y0, x0, crop);
  } else {
    d.x0 = ex.x0;
    d.cond = ex.cond.channels;
  }
  d.eps = normal_tensor<Real>(d.x0.shape(), rng);
  return d;
}

template <typename Real>
nn::Var<Real> draw_loss(STUNet<Real> const &net, DiffusionDraw<Real> const &d, NoiseSchedule const &s, Prediction p)
{
  auto const xt = q_sample(d.x0, d.t, d.eps, s);
  return nn::mse(net.forward(nn::Var<Real>(xt), d.t, nn::Var<Real>(d.cond)), prediction_target(p, d.x0, d.eps, d.t, s));
}

} // namespace detail

/// Mean training loss over `count` draws from a fixed seed, so values before and after training are
/// directly comparable.
template <typename Real>
double diffusion_probe_loss(STUNet<Real> const &net,
                            std::vector<DiffusionExample<Real>> const &data,
                            NoiseSchedule const &s,
                            Prediction p,
                            int crop,
                            int count,
                            std::uint64_t seed)
{
  Rng rng(seed);
  double sum = 0;
  for (int i = 0; i < count; ++i) {
    auto const d = detail::draw_training_case(data, s.n_steps, crop, rng);
    sum += double(detail::draw_loss(net, d, s, p).value()[0]);
  }
  return sum / count;
}

/// Adam on the prediction loss, one random (example, step, crop, noise) draw per update.
template <typename Real>
TrainingLog train_diffusion(STUNet<Real> &net,
                            std::vector<DiffusionExample<Real>> const &data,
                            NoiseSchedule const &s,
                            DiffusionTrainConfig const &cfg,
                            nn::AdamConfig adam = {})
{
  cfg.validate();
  require(!data.empty(), "diffusion training needs at least one example");
  for (auto const &ex : data) { net.check_input(ex.x0.shape(), ex.cond.channels.shape()); }
  adam.learning_rate = cfg.learning_rate;
  nn::Adam<Real> opt(adam);
  TrainingLog log;
  log.optimizer = "adam(lr=" + std::to_string(adam.learning_rate) + ",clip=" + std::to_string(adam.clip_norm) + ")";
  std::uint64_t const probe_seed = derive_seed(cfg.seed, 7);
  log.probe_before = diffusion_probe_loss(net, data, s, cfg.prediction, cfg.crop, cfg.probe_count, probe_seed);
  log.loss_history.push_back(log.probe_before);
  Rng rng(derive_seed(cfg.seed, 3));
  net.params().set_trainable(true);
  double chunk = 0;
  int in_chunk = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    auto const d = detail::draw_training_case(data, s.n_steps, cfg.crop, rng);
    auto const loss = detail::draw_loss(net, d, s, cfg.prediction);
    double const l = loss.value()[0];
    if (!std::isfinite(l)) {
      net.params().set_trainable(false);
      throw TrainingDivergence(step, "non-finite diffusion loss");
    }
    nn::backward(loss);
    opt.step(net.params());
    ++log.steps;
    if (!net.params().all_finite()) {
      net.params().set_trainable(false);
      throw TrainingDivergence(step, "non-finite denoiser parameters");
    }
    chunk += l;
    if (++in_chunk == cfg.log_every || step + 1 == cfg.steps) {
      log.loss_history.push_back(chunk / in_chunk);
      chunk = 0;
      in_chunk = 0;
    }
  }
  net.params().set_trainable(false);
  log.probe_after = diffusion_probe_loss(net, data, s, cfg.prediction, cfg.crop, cfg.probe_count, probe_seed);
  return log;
}

} // namespace cinediff
