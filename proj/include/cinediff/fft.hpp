#pragma once

#include "cine.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace cinediff {

namespace detail {

template <typename Real>
struct Fftw;

template <>
struct Fftw<float>
{
  using plan = fftwf_plan;
  using complex = fftwf_complex;
  static plan make(int h, int w, complex *buf, int sign)
  {
    return fftwf_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void run(plan p, complex *buf) { fftwf_execute_dft(p, buf, buf); }
};

template <>
struct Fftw<double>
{
  using plan = fftw_plan;
  using complex = fftw_complex;
  static plan make(int h, int w, complex *buf, int sign)
  {
    return fftw_plan_dft_2d(h, w, buf, buf, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  static void run(plan p, complex *buf) { fftw_execute_dft(p, buf, buf); }
};

// Plans are created once per (rows, cols, direction) and kept for the life of the process. FFTW
// planning is not thread-safe, execution is.
template <typename Real>
typename Fftw<Real>::plan fftw_plan_for(int h, int w, bool inverse)
{
  static std::mutex mu;
  static std::map<std::tuple<int, int, bool>, typename Fftw<Real>::plan> plans;
  std::lock_guard lock(mu);
  auto const key = std::make_tuple(h, w, inverse);
  if (auto it = plans.find(key); it != plans.end()) { return it->second; }
  std::vector<std::complex<Real>> buf(std::size_t(h) * w);
  auto p = Fftw<Real>::make(h, w, reinterpret_cast<typename Fftw<Real>::complex *>(buf.data()),
                            inverse ? FFTW_BACKWARD : FFTW_FORWARD);
  if (p == nullptr) { throw DataError("FFTW could not plan a " + std::to_string(h) + "x" + std::to_string(w) + " transform"); }
  plans.emplace(key, p);
  return p;
}

// fftshift(fft2(ifftshift(frame))) with orthonormal scaling, frame by frame.
template <typename Real>
ComplexStack<Real> centered_2d(ComplexStack<Real> const &x, bool inverse)
{
  int const H = x.rows(), W = x.cols();
  require(H >= 1 && W >= 1, "FFT needs non-empty frames");
  if (!x.all_finite()) { throw DataError("FFT input contains non-finite samples"); }
  auto const plan = fftw_plan_for<Real>(H, W, inverse);
  Real const scale = Real(1.0 / std::sqrt(double(H) * double(W)));
  ComplexStack<Real> out(x.frames(), H, W);
  std::vector<std::complex<Real>> buf(std::size_t(H) * W);
  for (int t = 0; t < x.frames(); ++t) {
    auto const *f = x.frame(t);
    for (int y = 0; y < H; ++y) {
      auto const *src = f + std::size_t((y + H / 2) % H) * W;
      auto *dst = buf.data() + std::size_t(y) * W;
      for (int c = 0; c < W; ++c) { dst[c] = src[(c + W / 2) % W]; }
    }
    Fftw<Real>::run(plan, reinterpret_cast<typename Fftw<Real>::complex *>(buf.data()));
    auto *o = out.frame(t);
    for (int y = 0; y < H; ++y) {
      auto const *src = buf.data() + std::size_t(y) * W;
      auto *dst = o + std::size_t((y + H / 2) % H) * W;
      for (int c = 0; c < W; ++c) { dst[(c + W / 2) % W] = src[c] * scale; }
    }
  }
  return out;
}

} // namespace detail

/// Per-frame centered orthonormal 2D DFT. DC lands at (rows/2, cols/2) and the transform is unitary,
/// so its adjoint is ifft2c.
template <typename Real>
ComplexStack<Real> fft2c(ComplexStack<Real> const &x)
{
  return detail::centered_2d(x, false);
}

template <typename Real>
ComplexStack<Real> ifft2c(ComplexStack<Real> const &k)
{
  return detail::centered_2d(k, true);
}

template <typename Real>
ComplexStack<Real> fft2c(BasicCineSequence<Real> const &seq)
{
  return fft2c(seq.images);
}

} // namespace cinediff
