#include "cinediff/stunet.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace cinediff;

namespace {

STUNetConfig tiny_config()
{
  STUNetConfig c;
  c.base_channels = 4;
  c.depth = 1;
  c.attention_heads = 2;
  c.groups = 2;
  c.time_embedding_dim = 8;
  c.max_frames = 4;
  c.seed = 12;
  return c;
}

template <typename Real>
void perturb(nn::ParamSet<Real> &params, std::uint64_t seed, double std)
{
  Rng rng(seed);
  auto flat = params.flatten();
  for (auto &v : flat) { v += Real(std * rng.normal()); }
  params.assign(std::span<Real const>(flat));
}

template <typename Real>
Tensor<Real> permute_frames(Tensor<Real> const &x, std::vector<int> const &perm)
{
  Tensor<Real> out(x.shape());
  auto const s = x.shape();
  for (int c = 0; c < s.c; ++c) {
    for (int t = 0; t < s.t; ++t) {
      std::copy_n(x.row(c, perm[t], 0), s.plane(), out.row(c, t, 0));
    }
  }
  return out;
}

} // namespace

TEST_CASE("STUNet parameter gradients match central differences", "[stunet][grad]")
{
  STUNet<double> net(tiny_config());
  perturb(net.params(), 3, 0.05);
  Rng rng(4);
  auto const x = normal_tensor<double>({2, 4, 8, 8}, rng), cond = normal_tensor<double>({4, 4, 8, 8}, rng);
  auto const target = normal_tensor<double>({2, 4, 8, 8}, rng);
  auto const checks = oracle::check_gradients<double>(
    net.params(), [&] { return nn::mse(net.forward(nn::Var<double>(x), 5, nn::Var<double>(cond)), target); }, 8,
    1e-5, 2);
  int nonzero = 0;
  for (auto const &g : checks) {
    INFO(g.name << " rel " << g.rel_error << " norm " << g.norm);
    CHECK(g.rel_error < 1e-3);
    nonzero += g.norm > 0;
  }
  CHECK(nonzero > int(checks.size()) / 2);
}

TEST_CASE("fresh STUNet predicts zero noise and is seeded", "[stunet]")
{
  STUNet<float> a(tiny_config()), b(tiny_config());
  CHECK(a.params().flatten() == b.params().flatten());
  Rng rng(1);
  Condition<float> cond;
  cond.channels = normal_tensor<float>({4, 4, 8, 8}, rng);
  auto const x = normal_tensor<float>({2, 4, 8, 8}, rng);
  auto const out = a(x, 3, cond);
  CHECK(out.shape() == x.shape());
  CHECK(sum_squares(out) == 0.0);
  auto c = tiny_config();
  c.seed = 13;
  CHECK(STUNet<float>(c).params().flatten() != a.params().flatten());
}

TEST_CASE("STUNet input validation", "[stunet]")
{
  STUNet<float> net(tiny_config());
  CHECK_THROWS_AS(net.check_input({3, 4, 8, 8}, {4, 4, 8, 8}), ParameterError);
  CHECK_THROWS_AS(net.check_input({2, 4, 7, 8}, {4, 4, 7, 8}), ParameterError);
  CHECK_THROWS_AS(net.check_input({2, 5, 8, 8}, {4, 5, 8, 8}), ParameterError);
  CHECK_THROWS_AS(net.check_input({2, 4, 8, 8}, {4, 3, 8, 8}), ParameterError);
  auto bad = tiny_config();
  bad.base_channels = 3;
  CHECK_THROWS_AS(STUNet<float>(bad), ParameterError);
  bad = tiny_config();
  bad.time_embedding_dim = 7;
  CHECK_THROWS_AS(STUNet<float>(bad), ParameterError);
}

TEST_CASE("temporal attention weights are distributions over frames", "[attention]")
{
  STUNet<double> net(tiny_config());
  perturb(net.params(), 1, 0.3);
  Rng rng(2);
  auto const f = normal_tensor<double>({4, 4, 6, 6}, rng);
  auto const a = net.attention_weights(0, f);
  auto const s = a.shape();
  REQUIRE(s.c == 2 * 4);
  REQUIRE(s.t == 4);
  for (int q = 0; q < s.c; ++q) {
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        double sum = 0;
        for (int k = 0; k < s.t; ++k) {
          CHECK(a(q, k, y, x) >= 0);
          sum += a(q, k, y, x);
        }
        CHECK(std::abs(sum - 1) < 1e-12);
      }
    }
  }
}

TEST_CASE("temporal attention mixes frames only at the same pixel", "[attention]")
{
  STUNet<double> net(tiny_config());
  perturb(net.params(), 5, 0.3);
  Rng rng(6);
  auto f = normal_tensor<double>({4, 4, 6, 6}, rng);
  auto const base = net.attention(0, nn::Var<double>(f)).value();
  f(1, 2, 4, 4) += 1.0;
  auto const moved = net.attention(0, nn::Var<double>(f)).value();
  double other = 0, same = 0;
  for (int c = 0; c < 4; ++c) {
    for (int t = 0; t < 4; ++t) {
      same += std::abs(moved(c, t, 4, 4) - base(c, t, 4, 4));
      other += std::abs(moved(c, t, 1, 2) - base(c, t, 1, 2));
    }
  }
  CHECK(same > 1e-6);
  // Group norm statistics couple pixels weakly; the attention path itself does not.
  CHECK(other < 0.05 * same);
}

TEST_CASE("without position tables attention is frame-permutation equivariant", "[attention]")
{
  STUNet<double> net(tiny_config());
  perturb(net.params(), 7, 0.3);
  Rng rng(8);
  auto const f = normal_tensor<double>({4, 4, 4, 4}, rng);
  std::vector<int> const perm{2, 0, 3, 1};
  auto const with_pos = net.attention(0, nn::Var<double>(permute_frames(f, perm))).value();
  auto const with_pos_ref = permute_frames(net.attention(0, nn::Var<double>(f)).value(), perm);
  CHECK(max_abs_diff(with_pos, with_pos_ref) > 1e-6);
  net.disable_position_embedding();
  auto const lhs = net.attention(0, nn::Var<double>(permute_frames(f, perm))).value();
  auto const rhs = permute_frames(net.attention(0, nn::Var<double>(f)).value(), perm);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("step embedding", "[stunet]")
{
  auto const e0 = step_embedding<double>(0, 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e0[k] == 0.0);
    CHECK(e0[4 + k] == 1.0);
  }
  auto const a = step_embedding<double>(3, 8), b = step_embedding<double>(4, 8);
  CHECK(max_abs_diff(a, b) > 0.1);
}
