#pragma once

#include "diffusion.hpp"
#include "nn/attention.hpp"
#include "nn/params.hpp"

#include <cstdint>
#include <sstream>

namespace cinediff {

struct STUNetConfig
{
  int base_channels = 16;
  int depth = 2;
  int temporal_kernel = 3;
  int attention_heads = 2;
  int time_embedding_dim = 64;
  int input_channels = 6;
  int output_channels = 2;
  int groups = 4;
  int max_frames = 64;
  bool position_embedding = true;
  std::uint64_t seed = 0;

  int channels(int level) const { return base_channels << level; }

  void validate() const
  {
    require(base_channels >= 1 && depth >= 0, "base_channels must be positive and depth nonnegative");
    require(temporal_kernel >= 1 && temporal_kernel % 2 == 1, "temporal_kernel must be odd");
    require(time_embedding_dim >= 2 && time_embedding_dim % 2 == 0, "time_embedding_dim must be even");
    require(input_channels == 6 && output_channels == 2, "the denoiser maps 2 image + 4 condition channels to 2");
    require(max_frames >= 1, "max_frames must be positive");
    for (int l = 0; l <= depth; ++l) {
      require(channels(l) % attention_heads == 0, "attention heads must divide the width of every level");
      require(channels(l) % groups == 0, "group count must divide the width of every level");
    }
  }

  std::string fingerprint() const
  {
    std::ostringstream os;
    os << "stunet:c" << base_channels << ":d" << depth << ":kt" << temporal_kernel << ":h" << attention_heads
       << ":e" << time_embedding_dim << ":g" << groups << ":f" << max_frames << ":p" << position_embedding;
    return os.str();
  }
};

/// Sinusoidal embedding of a diffusion step index.
template <typename Real>
Tensor<Real> step_embedding(int t, int dim)
{
  Tensor<Real> e({dim, 1, 1, 1});
  int const half = dim / 2;
  for (int k = 0; k < half; ++k) {
    double const f = std::exp(-std::log(10000.0) * k / half);
    e[k] = Real(std::sin(t * f));
    e[half + k] = Real(std::cos(t * f));
  }
  return e;
}

namespace detail {

template <typename Real>
struct Norm
{
  nn::Var<Real> gamma, beta;
};

template <typename Real>
struct ConvLayer
{
  nn::Var<Real> w, b;
  nn::ConvGeometry g;
};

template <typename Real>
struct ResBlock2D
{
  Norm<Real> n1, n2;
  ConvLayer<Real> c1, c2;
  nn::Var<Real> temb_w, temb_b;
};

template <typename Real>
struct TemporalAttention
{
  Norm<Real> norm;
  ConvLayer<Real> qkv, out;
  nn::Var<Real> position;
};

template <typename Real>
struct Level
{
  ResBlock2D<Real> res;
  Norm<Real> st_norm;
  ConvLayer<Real> st_conv;
  TemporalAttention<Real> attn;
};

} // namespace detail

/// Spatiotemporal U-Net noise predictor. Each resolution level runs a per-frame 2D residual block
/// (with the step embedding added), a residual kt x 3 x 3 spatiotemporal convolution, and residual
/// temporal self-attention. Down/upsampling is spatial only. The last convolution starts at zero,
/// so a fresh network predicts zero noise.
template <typename Real>
class STUNet
{
public:
  explicit STUNet(STUNetConfig cfg)
    : cfg_(cfg)
  {
    cfg_.validate();
    Rng rng(cfg_.seed);
    int const E = cfg_.time_embedding_dim;
    temb_w_ = dense(E, E, rng, "temb.w");
    temb_b_ = params_.add("temb.b", Tensor<Real>({E, 1, 1, 1}));
    in_conv_ = conv(cfg_.input_channels, cfg_.channels(0), {1, 3}, rng, "in");
    for (int l = 0; l <= cfg_.depth; ++l) {
      levels_.push_back(make_level(cfg_.channels(l), rng, "down" + std::to_string(l)));
      if (l < cfg_.depth) {
        down_.push_back(conv(cfg_.channels(l), cfg_.channels(l + 1), {1, 3}, rng, "pool" + std::to_string(l)));
      }
    }
    for (int l = cfg_.depth - 1; l >= 0; --l) {
      int const c = cfg_.channels(l);
      merge_.push_back(conv(cfg_.channels(l + 1) + c, c, {1, 3}, rng, "merge" + std::to_string(l)));
      up_.push_back(make_res(c, rng, "up" + std::to_string(l)));
    }
    out_norm_ = norm(cfg_.channels(0), "out.norm");
    out_conv_ = conv(cfg_.channels(0), cfg_.output_channels, {1, 3}, rng, "out");
    out_conv_.w.mutable_value().fill(Real(0));
  }

  STUNetConfig const &config() const { return cfg_; }
  nn::ParamSet<Real> &params() { return params_; }
  nn::ParamSet<Real> const &params() const { return params_; }
  std::size_t parameter_count() const { return params_.count(); }

  void check_input(Shape const &x, Shape const &cond) const
  {
    int const f = 1 << cfg_.depth;
    require(x.c == 2 && cond.c == 4, "denoiser expects 2 image channels and 4 condition channels");
    require(x.t == cond.t && x.h == cond.h && x.w == cond.w, "image and condition extents differ");
    require(x.h % f == 0 && x.w % f == 0, "H and W must be divisible by 2^depth");
    require(x.t <= cfg_.max_frames, "sequence longer than the position table");
  }

  /// Differentiable forward pass on a noisy image {2,T,H,W} and condition channels {4,T,H,W}.
  nn::Var<Real> forward(nn::Var<Real> const &x_t, int t, nn::Var<Real> const &cond) const
  {
    check_input(x_t.shape(), cond.shape());
    auto temb = nn::silu(nn::linear(nn::Var<Real>(step_embedding<Real>(t, cfg_.time_embedding_dim)), temb_w_, temb_b_));
    auto h = apply(in_conv_, nn::concat_channels(x_t, cond));
    std::vector<nn::Var<Real>> skips;
    for (int l = 0; l <= cfg_.depth; ++l) {
      h = level(levels_[l], h, temb);
      if (l < cfg_.depth) {
        skips.push_back(h);
        h = apply(down_[l], nn::avg_pool2(h));
      }
    }
    for (int i = 0; i < cfg_.depth; ++i) {
      int const l = cfg_.depth - 1 - i;
      h = apply(merge_[i], nn::concat_channels(nn::upsample2(h), skips[l]));
      h = res_block(up_[i], h, temb);
    }
    return apply(out_conv_, act(out_norm_, h));
  }

  /// Network output without recording a graph.
  Tensor<Real> operator()(Tensor<Real> const &x_t, int t, Condition<Real> const &cond) const
  {
    return forward(nn::Var<Real>(x_t), t, nn::Var<Real>(cond.channels)).value();
  }

  /// Temporal attention of level `l` applied on its own, for inspection and testing.
  nn::Var<Real> attention(int l, nn::Var<Real> const &features) const { return temporal_attention(levels_[l].attn, features); }

  /// Attention maps of level `l` for the given features: {heads*T, T, H, W}.
  Tensor<Real> attention_weights(int l, Tensor<Real> const &features) const
  {
    auto const &a = levels_[l].attn;
    auto const qkv = attention_qkv(a, nn::Var<Real>(features));
    int const C = features.shape().c;
    return nn::temporal_attention_weights(nn::slice_channels(qkv, 0, C).value(), nn::slice_channels(qkv, C, C).value(),
                                          cfg_.attention_heads);
  }

  /// Zeroes and freezes every temporal position table (frame-permutation-equivariant mode).
  void disable_position_embedding()
  {
    cfg_.position_embedding = false;
    for (auto &lv : levels_) { lv.attn.position.mutable_value().fill(Real(0)); }
  }

private:
  nn::Var<Real> dense(int n_out, int n_in, Rng &rng, std::string const &name)
  {
    return params_.add(name, nn::normal_init<Real>({n_out, n_in, 1, 1}, 1.0 / std::sqrt(double(n_in)), rng));
  }

  detail::ConvLayer<Real> conv(int in, int out, nn::ConvGeometry g, Rng &rng, std::string const &name)
  {
    double const fan_in = double(in) * g.taps();
    return {params_.add(name + ".w", nn::normal_init<Real>({out, in, g.kt, g.k * g.k}, 1.0 / std::sqrt(fan_in), rng)),
            params_.add(name + ".b", Tensor<Real>({out, 1, 1, 1})), g};
  }

  detail::Norm<Real> norm(int c, std::string const &name)
  {
    return {params_.add(name + ".gamma", Tensor<Real>({c, 1, 1, 1}, Real(1))),
            params_.add(name + ".beta", Tensor<Real>({c, 1, 1, 1}))};
  }

  detail::ResBlock2D<Real> make_res(int c, Rng &rng, std::string const &name)
  {
    detail::ResBlock2D<Real> r;
    r.n1 = norm(c, name + ".n1");
    r.c1 = conv(c, c, {1, 3}, rng, name + ".c1");
    r.temb_w = dense(c, cfg_.time_embedding_dim, rng, name + ".temb.w");
    r.temb_b = params_.add(name + ".temb.b", Tensor<Real>({c, 1, 1, 1}));
    r.n2 = norm(c, name + ".n2");
    r.c2 = conv(c, c, {1, 3}, rng, name + ".c2");
    return r;
  }

  detail::Level<Real> make_level(int c, Rng &rng, std::string const &name)
  {
    detail::Level<Real> lv;
    lv.res = make_res(c, rng, name + ".res");
    lv.st_norm = norm(c, name + ".st.norm");
    lv.st_conv = conv(c, c, {cfg_.temporal_kernel, 3}, rng, name + ".st");
    lv.attn.norm = norm(c, name + ".attn.norm");
    lv.attn.qkv = conv(c, 3 * c, {1, 1}, rng, name + ".attn.qkv");
    lv.attn.out = conv(c, c, {1, 1}, rng, name + ".attn.out");
    lv.attn.position = params_.add(name + ".attn.pos", nn::normal_init<Real>({c, cfg_.max_frames, 1, 1}, 0.02, rng));
    return lv;
  }

  static nn::Var<Real> apply(detail::ConvLayer<Real> const &c, nn::Var<Real> const &x)
  {
    return nn::conv(x, c.w, c.b, c.g);
  }

  nn::Var<Real> act(detail::Norm<Real> const &n, nn::Var<Real> const &x) const
  {
    return nn::silu(nn::group_norm(x, n.gamma, n.beta, cfg_.groups));
  }

  nn::Var<Real> res_block(detail::ResBlock2D<Real> const &r, nn::Var<Real> const &x, nn::Var<Real> const &temb) const
  {
    auto a = apply(r.c1, act(r.n1, x));
    a = nn::add_channel_bias(a, nn::linear(temb, r.temb_w, r.temb_b));
    a = apply(r.c2, act(r.n2, a));
    return nn::add(x, a);
  }

  nn::Var<Real> attention_qkv(detail::TemporalAttention<Real> const &a, nn::Var<Real> const &x) const
  {
    auto h = nn::group_norm(x, a.norm.gamma, a.norm.beta, cfg_.groups);
    if (cfg_.position_embedding) { h = nn::add_time_table(h, a.position); }
    return apply(a.qkv, h);
  }

  nn::Var<Real> temporal_attention(detail::TemporalAttention<Real> const &a, nn::Var<Real> const &x) const
  {
    int const C = x.shape().c;
    auto const qkv = attention_qkv(a, x);
    auto const o = nn::temporal_attention_core(nn::slice_channels(qkv, 0, C), nn::slice_channels(qkv, C, C),
                                               nn::slice_channels(qkv, 2 * C, C), cfg_.attention_heads);
    return nn::add(x, apply(a.out, o));
  }

  nn::Var<Real> level(detail::Level<Real> const &lv, nn::Var<Real> const &x, nn::Var<Real> const &temb) const
  {
    auto h = res_block(lv.res, x, temb);
    h = nn::add(h, apply(lv.st_conv, act(lv.st_norm, h)));
    return temporal_attention(lv.attn, h);
  }

  STUNetConfig cfg_;
  nn::ParamSet<Real> params_;
  nn::Var<Real> temb_w_, temb_b_;
  detail::ConvLayer<Real> in_conv_;
  std::vector<detail::Level<Real>> levels_;
  std::vector<detail::ConvLayer<Real>> down_, merge_;
  std::vector<detail::ResBlock2D<Real>> up_;
  detail::Norm<Real> out_norm_;
  detail::ConvLayer<Real> out_conv_;
};

} // namespace cinediff
