#pragma once

#include "kspace.hpp"
#include "nn/ops.hpp"
#include "nn/params.hpp"
#include "training_log.hpp"

#include <numeric>
#include <sstream>

namespace cinediff {

struct CRNNConfig
{
  int n_iterations = 4;
  int hidden_channels = 16;
  int spatial_kernel = 3;
  int temporal_kernel = 3;
  double learning_rate = 1e-3;
  int epochs = 10;
  int batch_size = 1;
  std::uint64_t seed = 0;

  void validate() const
  {
    require(n_iterations >= 1, "n_iterations must be at least 1");
    require(hidden_channels >= 1, "hidden_channels must be at least 1");
    require(spatial_kernel >= 1 && spatial_kernel % 2 == 1, "spatial_kernel must be odd");
    require(temporal_kernel >= 1 && temporal_kernel % 2 == 1, "temporal_kernel must be odd");
    require(learning_rate > 0, "learning_rate must be positive");
    require(epochs >= 0 && batch_size >= 1, "epochs must be nonnegative and batch_size positive");
  }

  std::string fingerprint() const
  {
    std::ostringstream os;
    os << "crnn:n" << n_iterations << ":h" << hidden_channels << ":k" << spatial_kernel << ":kt" << temporal_kernel;
    return os.str();
  }
};

namespace nn {

/// Hard data consistency as a graph op on a {2,T,H,W} image. The map is affine in the image and its
/// linear part is an orthogonal projection, so the backward pass applies the same projection.
template <typename Real>
Var<Real> data_consistency(Var<Real> const &x, BasicKSpaceData<Real> const &k)
{
  auto out = to_channels<Real>(cinediff::data_consistency(from_channels<Real>(x.value()), k));
  return make_result(std::move(out), {x}, [x, mask = k.mask] {
    return [px = x.node().get(), mask](Tensor<Real> const &g) {
      px->accumulate(to_channels<Real>(data_consistency_adjoint(from_channels<Real>(g), mask)));
    };
  });
}

} // namespace nn

/// Unrolled recurrent reconstructor. Each iteration updates a hidden state from the current image,
/// the zero-filled image and the previous hidden state with two spatiotemporal convolutions, adds a
/// residual predicted from the hidden state, and enforces data consistency. Weights are shared
/// across iterations; the residual head starts at zero.
template <typename Real>
class CRNN
{
public:
  explicit CRNN(CRNNConfig cfg)
    : cfg_(cfg)
  {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int const hc = cfg_.hidden_channels;
    nn::ConvGeometry const st{cfg_.temporal_kernel, cfg_.spatial_kernel}, sp{1, cfg_.spatial_kernel};
    in_ = conv(4 + hc, hc, st, rng, "hidden.in");
    mid_ = conv(hc, hc, st, rng, "hidden.mid");
    out_ = conv(hc, 2, sp, rng, "residual");
    out_.w.mutable_value().fill(Real(0));
  }

  CRNNConfig const &config() const { return cfg_; }
  nn::ParamSet<Real> &params() { return params_; }
  nn::ParamSet<Real> const &params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  /// Differentiable reconstruction as a {2,T,H,W} tensor.
  nn::Var<Real> forward(BasicKSpaceData<Real> const &k) const
  {
    auto const zf = to_channels<Real>(zero_filled(k));
    auto const s = zf.shape();
    nn::Var<Real> const zf_v(zf);
    nn::Var<Real> x = zf_v;
    nn::Var<Real> h(Tensor<Real>({cfg_.hidden_channels, s.t, s.h, s.w}));
    for (int n = 0; n < cfg_.n_iterations; ++n) {
      h = nn::leaky_relu(apply(in_, nn::concat_channels(nn::concat_channels(x, zf_v), h)));
      auto const r = apply(out_, nn::leaky_relu(apply(mid_, h)));
      x = nn::data_consistency(nn::add(x, r), k);
    }
    return x;
  }

  BasicCineSequence<Real> reconstruct(BasicKSpaceData<Real> const &k, BasicCineSequence<Real> geometry = {}) const
  {
    geometry.images = from_channels<Real>(forward(k).value());
    return geometry;
  }

private:
  struct Layer
  {
    nn::Var<Real> w, b;
    nn::ConvGeometry g;
  };

  Layer conv(int in, int out, nn::ConvGeometry g, Rng &rng, std::string const &name)
  {
    double const fan_in = double(in) * g.taps();
    return {params_.add(name + ".w", nn::normal_init<Real>({out, in, g.kt, g.k * g.k}, std::sqrt(2.0 / fan_in), rng)),
            params_.add(name + ".b", Tensor<Real>({out, 1, 1, 1})), g};
  }

  static nn::Var<Real> apply(Layer const &l, nn::Var<Real> const &x) { return nn::conv(x, l.w, l.b, l.g); }

  CRNNConfig cfg_;
  nn::ParamSet<Real> params_;
  Layer in_, mid_, out_;
};

template <typename Real>
struct CRNNExample
{
  BasicKSpaceData<Real> k;
  BasicCineSequence<Real> reference;
};

/// Loss of one example: mean squared error over real/imaginary channels.
template <typename Real>
nn::Var<Real> crnn_loss(CRNN<Real> const &net, CRNNExample<Real> const &ex)
{
  return nn::mse(net.forward(ex.k), to_channels<Real>(ex.reference.images));
}

template <typename Real>
double crnn_dataset_loss(CRNN<Real> const &net, std::vector<CRNNExample<Real>> const &data)
{
  double sum = 0;
  for (auto const &ex : data) { sum += double(crnn_loss(net, ex).value()[0]); }
  return sum / double(data.size());
}

/// Adam on the per-example MSE, `batch_size` examples per update, examples visited in a seeded
/// shuffle each epoch. loss_history holds the dataset loss before training and the mean training loss
/// of each epoch.
template <typename Real>
TrainingLog crnn_train(CRNN<Real> &net, std::vector<CRNNExample<Real>> const &data, nn::AdamConfig adam = {})
{
  require(!data.empty(), "CRNN training needs at least one example");
  auto const &cfg = net.config();
  for (auto const &ex : data) {
    ex.k.samples.check_same(ex.reference.images);
    ex.k.samples.check_same(data.front().k.samples);
  }
  adam.learning_rate = cfg.learning_rate;
  nn::Adam<Real> opt(adam);
  TrainingLog log;
  log.optimizer = "adam(lr=" + std::to_string(adam.learning_rate) + ",clip=" + std::to_string(adam.clip_norm) + ")";
  log.loss_history.push_back(crnn_dataset_loss(net, data));
  if (!std::isfinite(log.loss_history.back())) { throw TrainingDivergence(0, "non-finite initial CRNN loss"); }
  net.params().set_trainable(true);
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(data.size());
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_sum = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += std::size_t(cfg.batch_size)) {
      std::size_t const b1 = std::min(order.size(), b0 + std::size_t(cfg.batch_size));
      Real const w = Real(1) / Real(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) {
        auto const loss = crnn_loss(net, data[order[i]]);
        double const l = loss.value()[0];
        if (!std::isfinite(l)) {
          net.params().set_trainable(false);
          throw TrainingDivergence(log.steps, "non-finite CRNN loss");
        }
        epoch_sum += l;
        nn::backward(loss, Tensor<Real>({1, 1, 1, 1}, w));
      }
      opt.step(net.params());
      ++log.steps;
      if (!net.params().all_finite()) {
        net.params().set_trainable(false);
        throw TrainingDivergence(log.steps, "non-finite CRNN parameters");
      }
    }
    log.loss_history.push_back(epoch_sum / double(data.size()));
  }
  net.params().set_trainable(false);
  return log;
}

} // namespace cinediff
