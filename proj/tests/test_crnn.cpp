#include "cinediff/crnn.hpp"
#include "cinediff/phantom.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace cinediff;

namespace {

template <typename Real>
CRNNExample<Real> tiny_example(std::uint64_t seed, int T = 4, int H = 8, int W = 8)
{
  PhantomSpec p;
  p.seed = seed;
  p.frames = T;
  p.height = H;
  p.width = W;
  p.cardiac_period = T;
  auto const truth = generate_phantom(p);
  BasicCineSequence<Real> ref;
  ref.images = add_reference_noise(truth, 0.02, seed + 1).images.template cast<Real>();
  auto const m = make_mask(T, H, 2.0, 2, MaskPattern::UniformInterleaved, seed);
  return {undersample(ref, m, 0.0, 0), ref};
}

template <typename Real>
void randomize(nn::ParamSet<Real> &params, std::uint64_t seed, double std)
{
  Rng rng(seed);
  auto flat = params.flatten();
  for (auto &v : flat) { v += Real(std * rng.normal()); }
  params.assign(std::span<Real const>(flat));
}

} // namespace

TEST_CASE("CRNN parameter gradients match central differences", "[crnn][grad]")
{
  CRNNConfig c;
  c.n_iterations = 2;
  c.hidden_channels = 3;
  c.seed = 5;
  CRNN<double> net(c);
  randomize(net.params(), 9, 0.05); // the residual head starts at zero; move off it
  auto const ex = tiny_example<double>(3);
  // Step small enough that no leaky-ReLU input crosses zero inside the stencil.
  auto const checks =
    oracle::check_gradients<double>(net.params(), [&] { return crnn_loss(net, ex); }, 12, 1e-7, 1);
  for (auto const &g : checks) {
    INFO(g.name << " rel " << g.rel_error << " norm " << g.norm);
    CHECK(g.rel_error < 1e-3);
  }
}

TEST_CASE("CRNN output is data consistent", "[crnn]")
{
  CRNNConfig c;
  c.n_iterations = 2;
  c.hidden_channels = 4;
  CRNN<double> net(c);
  randomize(net.params(), 1, 0.1);
  auto const ex = tiny_example<double>(11);
  auto const out = net.reconstruct(ex.k);
  auto const spec = fft2c(out.images);
  double err = 0;
  for (int t = 0; t < spec.frames(); ++t) {
    for (int y = 0; y < spec.rows(); ++y) {
      if (!ex.k.mask.sampled(t, y)) { continue; }
      for (int x = 0; x < spec.cols(); ++x) { err = std::max(err, std::abs(spec(t, y, x) - ex.k.samples(t, y, x))); }
    }
  }
  CHECK(err < 1e-10);
}

TEST_CASE("untrained CRNN returns the zero-filled image", "[crnn]")
{
  CRNN<float> net(CRNNConfig{});
  auto const ex = tiny_example<float>(2, 4, 16, 16);
  CHECK(oracle::max_abs_diff(net.reconstruct(ex.k).images, zero_filled(ex.k)) < 1e-5);
}

TEST_CASE("CRNN training lowers the loss and is deterministic", "[crnn]")
{
  std::vector<CRNNExample<float>> data;
  for (std::uint64_t s = 0; s < 4; ++s) { data.push_back(tiny_example<float>(20 + s, 4, 16, 16)); }
  CRNNConfig c;
  c.n_iterations = 2;
  c.hidden_channels = 6;
  c.epochs = 6;
  c.learning_rate = 3e-3;
  c.seed = 4;
  CRNN<float> a(c), b(c);
  auto const la = crnn_train(a, data);
  auto const lb = crnn_train(b, data);
  REQUIRE(la.loss_history.size() == 7);
  CHECK(la.loss_history.back() < la.loss_history.front());
  CHECK(crnn_dataset_loss(a, data) < la.loss_history.front());
  CHECK(la.loss_history == lb.loss_history);
  CHECK(a.params().flatten() == b.params().flatten());
}

TEST_CASE("CRNN configuration validation", "[crnn]")
{
  CRNNConfig c;
  c.spatial_kernel = 4;
  CHECK_THROWS_AS(CRNN<float>(c), ParameterError);
  c = {};
  c.n_iterations = 0;
  CHECK_THROWS_AS(CRNN<float>(c), ParameterError);
  c = {};
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  CRNN<float> net(CRNNConfig{});
  CHECK_THROWS_AS(crnn_train(net, {}), ParameterError);
}
