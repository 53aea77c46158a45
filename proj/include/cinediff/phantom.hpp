#pragma once

#include "cine.hpp"
#include "rng.hpp"

#include <cstdint>
#include <numbers>

namespace cinediff {

struct PhantomSpec
{
  std::uint64_t seed = 0;
  int frames = 16;
  int height = 64;
  int width = 64;
  int n_ellipses = 4;
  int cardiac_period = 16;
  double contraction_amplitude = 0.25;
  double background_texture_scale = 0.1;
  std::array<double, 2> intensity_range{0.0, 1.0};
  std::array<double, 2> pixel_spacing_mm{1.82, 1.82};
  double frame_interval_ms = 34.0;

  void validate() const
  {
    auto pow2 = [](int n) { return n >= 8 && (n & (n - 1)) == 0; };
    require(frames >= 4, "phantom needs at least 4 frames");
    require(pow2(height) && pow2(width), "phantom height and width must be powers of two >= 8");
    require(n_ellipses >= 0, "n_ellipses must be nonnegative");
    require(cardiac_period >= 1, "cardiac_period must be positive");
    require(contraction_amplitude >= 0 && contraction_amplitude <= 0.5, "contraction_amplitude must lie in [0, 0.5]");
    require(background_texture_scale >= 0, "background_texture_scale must be nonnegative");
    require(intensity_range[0] >= 0 && intensity_range[1] <= 1 && intensity_range[0] < intensity_range[1],
            "intensity_range must satisfy 0 <= lo < hi <= 1");
    require(pixel_spacing_mm[0] > 0 && pixel_spacing_mm[1] > 0 && frame_interval_ms > 0, "geometry must be positive");
  }
};

namespace detail {

struct Ellipse
{
  double cx, cy, a, b, angle, intensity;
  double drift_x, drift_y; // displacement at peak contraction
};

// Soft inside-indicator of an ellipse: 1 inside, 0 outside, linear over about one pixel.
inline double ellipse_cover(double u, double v, Ellipse const &e, double pixel)
{
  double const c = std::cos(e.angle), s = std::sin(e.angle);
  double const du = u - e.cx, dv = v - e.cy;
  double const xr = c * du + s * dv, yr = -s * du + c * dv;
  double const q = std::sqrt((xr * xr) / (e.a * e.a) + (yr * yr) / (e.b * e.b));
  double const dist = (q - 1.0) * std::min(e.a, e.b);
  return std::clamp(0.5 - dist / pixel, 0.0, 1.0);
}

} // namespace detail

/// Beating-heart surrogate: a body ellipse with smooth texture, a blood pool inside a myocardial ring
/// that contracts periodically, and small ellipses drifting with the same cycle. Phase is a smooth
/// quadratic field. Output is a pure function of the spec.
inline CineSequence generate_phantom(PhantomSpec const &spec)
{
  spec.validate();
  Rng rng(spec.seed);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  detail::Ellipse const body{uni(-0.04, 0.04), uni(-0.04, 0.04), uni(0.82, 0.9), uni(0.66, 0.76), uni(-0.2, 0.2),
                             uni(0.25, 0.35), 0, 0};
  double const heart_x = uni(-0.15, 0.05), heart_y = uni(-0.12, 0.08);
  double const outer_r = uni(0.3, 0.38), wall = uni(0.07, 0.1);
  double const pool_i = uni(0.85, 0.95), myo_i = uni(0.35, 0.45);

  std::vector<detail::Ellipse> blobs;
  for (int i = 0; i < spec.n_ellipses; ++i) {
    double const ang = uni(0, 2 * std::numbers::pi), rad = uni(0.45, 0.65);
    bool const drifting = (i % 2) == 1;
    double const amp = drifting ? 0.25 * spec.contraction_amplitude : 0.0;
    blobs.push_back({heart_x * 0.3 + rad * std::cos(ang), heart_y * 0.3 + rad * 0.8 * std::sin(ang), uni(0.05, 0.12),
                     uni(0.04, 0.09), uni(0, std::numbers::pi), uni(0.5, 0.8), amp * uni(-1, 1), amp * uni(-1, 1)});
  }

  // Low-frequency texture: a few plane waves with random orientation and phase.
  struct Wave
  {
    double kx, ky, ph, amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 4; ++i) { waves.push_back({uni(-4, 4), uni(-4, 4), uni(0, 2 * std::numbers::pi), uni(0.5, 1.0)}); }

  // Phase polynomial; coefficient magnitudes sum below pi so no wrapping is needed.
  std::array<double, 6> pc{};
  for (auto &c : pc) { c = uni(-0.45, 0.45); }

  int const T = spec.frames, H = spec.height, W = spec.width;
  double const pixel = 2.0 / std::min(H, W);
  double const lo = spec.intensity_range[0], hi = spec.intensity_range[1];

  CineSequence seq;
  seq.images = ComplexStack<float>(T, H, W);
  seq.pixel_spacing_mm = spec.pixel_spacing_mm;
  seq.frame_interval_ms = spec.frame_interval_ms;

  for (int t = 0; t < T; ++t) {
    // Contraction state in [0, 1], exactly periodic in t with period cardiac_period.
    int const phase_idx = t % spec.cardiac_period;
    double const c = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * phase_idx / spec.cardiac_period);
    double const A = spec.contraction_amplitude * c;
    detail::Ellipse const outer{heart_x, heart_y, outer_r * (1 - 0.5 * A), outer_r * 0.92 * (1 - 0.5 * A), 0.3, 0, 0, 0};
    detail::Ellipse const inner{heart_x, heart_y, (outer_r - wall) * (1 - A), (outer_r - wall) * 0.92 * (1 - A), 0.3,
                                0, 0, 0};
    for (int y = 0; y < H; ++y) {
      double const v = -1 + (y + 0.5) * 2.0 / H;
      for (int x = 0; x < W; ++x) {
        double const u = -1 + (x + 0.5) * 2.0 / W;
        double const in_body = detail::ellipse_cover(u, v, body, pixel);
        double tex = 0;
        for (auto const &w : waves) { tex += w.amp * std::sin(std::numbers::pi * (w.kx * u + w.ky * v) + w.ph); }
        double m = in_body * (body.intensity * (1 + spec.background_texture_scale * tex / 2.0));
        for (auto const &b : blobs) {
          auto e = b;
          e.cx += c * b.drift_x;
          e.cy += c * b.drift_y;
          double const cov = detail::ellipse_cover(u, v, e, pixel);
          m = m * (1 - cov) + cov * b.intensity;
        }
        double const in_outer = detail::ellipse_cover(u, v, outer, pixel);
        double const in_inner = detail::ellipse_cover(u, v, inner, pixel);
        m = m * (1 - in_outer) + in_outer * myo_i;
        m = m * (1 - in_inner) + in_inner * pool_i;
        m = lo + (hi - lo) * std::clamp(m, 0.0, 1.0);
        double const ph = pc[0] + pc[1] * u + pc[2] * v + pc[3] * u * v + pc[4] * u * u + pc[5] * v * v;
        seq.images(t, y, x) = std::polar(float(m), float(ph));
      }
    }
  }
  return seq;
}

/// Adds i.i.d. complex Gaussian noise (std `sigma` on each of real and imaginary parts).
template <typename Real>
BasicCineSequence<Real> add_reference_noise(BasicCineSequence<Real> seq, double sigma, std::uint64_t seed)
{
  require(sigma >= 0, "noise sigma must be nonnegative");
  if (sigma == 0) { return seq; }
  Rng rng(seed);
  for (auto &v : seq.images.vec()) {
    double const re = rng.normal(), im = rng.normal();
    v += std::complex<Real>(Real(sigma * re), Real(sigma * im));
  }
  return seq;
}

} // namespace cinediff
