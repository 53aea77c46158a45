#pragma once

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cinediff {

/// Dense 4D extent in channel, time, row, column order. Vectors use {n, 1, 1, 1}.
struct Shape
{
  int c = 0, t = 0, h = 0, w = 0;

  std::size_t size() const
  {
    return std::size_t(c) * std::size_t(t) * std::size_t(h) * std::size_t(w);
  }
  std::size_t plane() const { return std::size_t(h) * std::size_t(w); }
  std::size_t volume() const { return std::size_t(t) * plane(); }

  friend bool operator==(Shape const &, Shape const &) = default;
};

inline std::string to_string(Shape const &s)
{
  return "[" + std::to_string(s.c) + "x" + std::to_string(s.t) + "x" + std::to_string(s.h) + "x" +
         std::to_string(s.w) + "]";
}

template <typename Real>
class Tensor
{
public:
  using value_type = Real;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = Real(0))
    : shape_(s)
    , data_(s.size(), fill)
  {
  }
  Tensor(Shape s, std::vector<Real> data)
    : shape_(s)
    , data_(std::move(data))
  {
    require(data_.size() == s.size(), "tensor data does not match shape " + to_string(s));
  }

  Shape const &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real *data() { return data_.data(); }
  Real const *data() const { return data_.data(); }
  std::span<Real> span() { return data_; }
  std::span<Real const> span() const { return data_; }
  std::vector<Real> &vec() { return data_; }
  std::vector<Real> const &vec() const { return data_; }

  Real &operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Real &operator()(int c, int t, int y, int x) { return data_[index(c, t, y, x)]; }
  Real operator()(int c, int t, int y, int x) const { return data_[index(c, t, y, x)]; }

  std::size_t index(int c, int t, int y, int x) const
  {
    return ((std::size_t(c) * shape_.t + t) * shape_.h + y) * shape_.w + x;
  }

  /// Pointer to the start of row (c, t, y).
  Real *row(int c, int t, int y) { return data_.data() + index(c, t, y, 0); }
  Real const *row(int c, int t, int y) const { return data_.data() + index(c, t, y, 0); }
  Real *channel(int c) { return data_.data() + std::size_t(c) * shape_.volume(); }
  Real const *channel(int c) const { return data_.data() + std::size_t(c) * shape_.volume(); }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor &operator+=(Tensor const &o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] += o.data_[i]; }
    return *this;
  }
  Tensor &operator-=(Tensor const &o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] -= o.data_[i]; }
    return *this;
  }
  Tensor &operator*=(Real s)
  {
    for (auto &v : data_) { v *= s; }
    return *this;
  }

  friend Tensor operator+(Tensor a, Tensor const &b) { return a += b; }
  friend Tensor operator-(Tensor a, Tensor const &b) { return a -= b; }
  friend Tensor operator*(Tensor a, Real s) { return a *= s; }
  friend Tensor operator*(Real s, Tensor a) { return a *= s; }
  Tensor operator-() const { return *this * Real(-1); }

  template <typename Other>
  Tensor<Other> cast() const
  {
    Tensor<Other> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) { out[i] = Other(data_[i]); }
    return out;
  }

  bool all_finite() const
  {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

  void check_same(Tensor const &o) const
  {
    if (!(o.shape_ == shape_)) {
      throw ParameterError("shape mismatch " + to_string(shape_) + " vs " + to_string(o.shape_));
    }
  }

private:
  Shape shape_;
  std::vector<Real> data_;
};

template <typename Real>
double sum_squares(Tensor<Real> const &x)
{
  double s = 0;
  for (auto v : x.vec()) { s += double(v) * double(v); }
  return s;
}

template <typename Real>
double max_abs_diff(Tensor<Real> const &a, Tensor<Real> const &b)
{
  a.check_same(b);
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { m = std::max(m, std::abs(double(a[i]) - double(b[i]))); }
  return m;
}

} // namespace cinediff
