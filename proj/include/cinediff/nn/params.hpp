#pragma once

#include "../rng.hpp"
#include "graph.hpp"

#include <cmath>
#include <span>
#include <string>

namespace cinediff::nn {

/// Named collection of trainable leaves. Models keep Var handles into it, so a ParamSet and the
/// model that created it share storage.
template <typename Real>
class ParamSet
{
public:
  Var<Real> add(std::string name, Tensor<Real> init)
  {
    names_.push_back(std::move(name));
    vars_.emplace_back(std::move(init), trainable_);
    return vars_.back();
  }

  std::size_t tensors() const { return vars_.size(); }
  std::size_t count() const
  {
    std::size_t n = 0;
    for (auto const &v : vars_) { n += v.value().size(); }
    return n;
  }
  std::vector<Var<Real>> &vars() { return vars_; }
  std::vector<Var<Real>> const &vars() const { return vars_; }
  std::vector<std::string> const &names() const { return names_; }

  /// Whether forward passes record a graph back to these leaves.
  void set_trainable(bool on)
  {
    trainable_ = on;
    for (auto &v : vars_) { v.set_requires_grad(on); }
  }
  void zero_grad()
  {
    for (auto &v : vars_) { v.zero_grad(); }
  }

  std::vector<Real> flatten() const
  {
    std::vector<Real> out;
    out.reserve(count());
    for (auto const &v : vars_) { out.insert(out.end(), v.value().vec().begin(), v.value().vec().end()); }
    return out;
  }

  template <typename Src>
  void assign(std::span<Src const> flat)
  {
    require(flat.size() == count(), "parameter blob has " + std::to_string(flat.size()) + " values, expected " +
                                      std::to_string(count()));
    std::size_t off = 0;
    for (auto &v : vars_) {
      auto &t = v.mutable_value();
      for (std::size_t i = 0; i < t.size(); ++i) { t[i] = Real(flat[off + i]); }
      off += t.size();
    }
  }

  bool all_finite() const
  {
    for (auto const &v : vars_) {
      if (!v.value().all_finite()) { return false; }
    }
    return true;
  }

private:
  std::vector<std::string> names_;
  std::vector<Var<Real>> vars_;
  bool trainable_ = false;
};

/// N(0, std^2) initial values, drawn in double so float and double models built from the same seed agree.
template <typename Real>
Tensor<Real> normal_init(Shape s, double std, Rng &rng)
{
  Tensor<Real> t(s);
  for (auto &v : t.vec()) { v = Real(std * rng.normal()); }
  return t;
}

struct AdamConfig
{
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0; // global gradient-norm clip; 0 disables
};

template <typename Real>
class Adam
{
public:
  explicit Adam(AdamConfig cfg)
    : cfg_(cfg)
  {
  }

  /// Applies one update from the gradients currently held by `params`, then clears them.
  /// Returns the pre-clip global gradient norm.
  double step(ParamSet<Real> &params)
  {
    auto &vars = params.vars();
    if (m_.empty()) {
      for (auto const &v : vars) {
        m_.emplace_back(v.shape());
        v_.emplace_back(v.shape());
      }
    }
    double norm2 = 0;
    for (auto const &v : vars) {
      if (!v.grad().empty()) { norm2 += sum_squares(v.grad()); }
    }
    double const norm = std::sqrt(norm2);
    double const clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    double const bc1 = 1 - std::pow(cfg_.beta1, double(t_));
    double const bc2 = 1 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t k = 0; k < vars.size(); ++k) {
      auto const &g = vars[k].grad();
      if (g.empty()) { continue; }
      auto &w = vars[k].mutable_value();
      auto &m = m_[k];
      auto &s = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        double const gi = double(g[i]) * clip;
        m[i] = Real(cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi);
        s[i] = Real(cfg_.beta2 * s[i] + (1 - cfg_.beta2) * gi * gi);
        double const mh = m[i] / bc1, vh = s[i] / bc2;
        w[i] = Real(w[i] - cfg_.learning_rate * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
    params.zero_grad();
    return norm;
  }

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  long steps() const { return t_; }

private:
  AdamConfig cfg_;
  std::vector<Tensor<Real>> m_, v_;
  long t_ = 0;
};

} // namespace cinediff::nn
