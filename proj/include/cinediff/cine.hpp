#pragma once

#include "tensor.hpp"

#include <array>
#include <complex>

namespace cinediff {

/// Complex frames x rows x cols stack, row-major with columns fastest.
template <typename Real>
class ComplexStack
{
public:
  using value_type = std::complex<Real>;

  ComplexStack() = default;
  ComplexStack(int frames, int rows, int cols)
    : frames_(frames)
    , rows_(rows)
    , cols_(cols)
    , data_(std::size_t(frames) * rows * cols)
  {
    require(frames >= 1 && rows >= 1 && cols >= 1, "complex stack extents must be positive");
  }

  int frames() const { return frames_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::size_t frame_size() const { return std::size_t(rows_) * cols_; }

  value_type &operator()(int t, int y, int x) { return data_[(std::size_t(t) * rows_ + y) * cols_ + x]; }
  value_type operator()(int t, int y, int x) const { return data_[(std::size_t(t) * rows_ + y) * cols_ + x]; }
  value_type &operator[](std::size_t i) { return data_[i]; }
  value_type operator[](std::size_t i) const { return data_[i]; }
  value_type *frame(int t) { return data_.data() + std::size_t(t) * frame_size(); }
  value_type const *frame(int t) const { return data_.data() + std::size_t(t) * frame_size(); }

  std::vector<value_type> &vec() { return data_; }
  std::vector<value_type> const &vec() const { return data_; }

  bool same_extent(ComplexStack const &o) const
  {
    return frames_ == o.frames_ && rows_ == o.rows_ && cols_ == o.cols_;
  }
  void check_same(ComplexStack const &o) const
  {
    if (!same_extent(o)) { throw ParameterError("complex stack extents differ"); }
  }
  bool all_finite() const
  {
    for (auto const &v : data_) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) { return false; }
    }
    return true;
  }

  template <typename Other>
  ComplexStack<Other> cast() const
  {
    ComplexStack<Other> out(frames_, rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) { out[i] = std::complex<Other>(data_[i]); }
    return out;
  }

  ComplexStack &operator+=(ComplexStack const &o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] += o.data_[i]; }
    return *this;
  }
  ComplexStack &operator-=(ComplexStack const &o)
  {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) { data_[i] -= o.data_[i]; }
    return *this;
  }
  ComplexStack &operator*=(Real s)
  {
    for (auto &v : data_) { v *= s; }
    return *this;
  }
  friend ComplexStack operator+(ComplexStack a, ComplexStack const &b) { return a += b; }
  friend ComplexStack operator-(ComplexStack a, ComplexStack const &b) { return a -= b; }
  friend ComplexStack operator*(Real s, ComplexStack a) { return a *= s; }

private:
  int frames_ = 0, rows_ = 0, cols_ = 0;
  std::vector<value_type> data_;
};

/// 2D+time complex image sequence with its acquisition geometry.
template <typename Real>
struct BasicCineSequence
{
  ComplexStack<Real> images;
  std::array<double, 2> pixel_spacing_mm{1.82, 1.82};
  double frame_interval_ms = 34.0;

  int frames() const { return images.frames(); }
  int rows() const { return images.rows(); }
  int cols() const { return images.cols(); }

  void validate() const
  {
    require(frames() >= 1 && rows() >= 8 && cols() >= 8, "cine sequence must be at least 1x8x8");
    require(pixel_spacing_mm[0] > 0 && pixel_spacing_mm[1] > 0 && frame_interval_ms > 0,
            "cine geometry must be positive");
    if (!images.all_finite()) { throw DataError("cine sequence contains non-finite samples"); }
  }

  BasicCineSequence with_images(ComplexStack<Real> im) const
  {
    BasicCineSequence out = *this;
    out.images = std::move(im);
    return out;
  }
};

using CineSequence = BasicCineSequence<float>;

/// Real/imaginary split into a {2,T,H,W} tensor (channel 0 real, channel 1 imaginary).
template <typename Out, typename Real>
Tensor<Out> to_channels(ComplexStack<Real> const &z)
{
  Tensor<Out> out({2, z.frames(), z.rows(), z.cols()});
  std::size_t const n = z.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = Out(z[i].real());
    out[n + i] = Out(z[i].imag());
  }
  return out;
}

template <typename Out, typename Real>
ComplexStack<Out> from_channels(Tensor<Real> const &t, int channel0 = 0)
{
  auto const s = t.shape();
  require(s.c >= channel0 + 2, "complex view needs two channels");
  ComplexStack<Out> z(s.t, s.h, s.w);
  Real const *re = t.channel(channel0), *im = t.channel(channel0 + 1);
  for (std::size_t i = 0; i < z.size(); ++i) { z[i] = std::complex<Out>(Out(re[i]), Out(im[i])); }
  return z;
}

template <typename Real>
std::vector<double> magnitudes(ComplexStack<Real> const &z)
{
  std::vector<double> m(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) { m[i] = std::abs(std::complex<double>(z[i])); }
  return m;
}

template <typename Real>
double sum_squares(ComplexStack<Real> const &z)
{
  double s = 0;
  for (auto const &v : z.vec()) { s += std::norm(std::complex<double>(v)); }
  return s;
}

} // namespace cinediff
