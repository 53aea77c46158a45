#pragma once

#include "fft.hpp"
#include "rng.hpp"

#include <cstdint>
#include <string>

namespace cinediff {

enum class MaskPattern
{
  UniformInterleaved,
  VariableDensityRandom
};

inline std::string to_string(MaskPattern p)
{
  return p == MaskPattern::UniformInterleaved ? "uniform-interleaved" : "variable-density-random";
}

inline MaskPattern parse_mask_pattern(std::string const &s)
{
  if (s == "uniform-interleaved") { return MaskPattern::UniformInterleaved; }
  if (s == "variable-density-random") { return MaskPattern::VariableDensityRandom; }
  throw ParameterError("unknown mask pattern '" + s + "'");
}

/// Per-frame Cartesian phase-encode line selection. Rows are k-space rows in centered order.
struct SamplingMask
{
  int frames = 0;
  int rows = 0;
  std::vector<std::uint8_t> lines; // frames x rows, 1 = acquired
  int center_lines = 0;
  double requested_R = 1;
  double measured_R = 1;
  MaskPattern pattern = MaskPattern::UniformInterleaved;
  std::uint64_t seed = 0;

  bool sampled(int t, int row) const { return lines[std::size_t(t) * rows + row] != 0; }
  std::size_t count() const
  {
    std::size_t n = 0;
    for (auto v : lines) { n += v; }
    return n;
  }
  int center_start() const { return rows / 2 - center_lines / 2; }
};

template <typename Real>
struct BasicKSpaceData
{
  ComplexStack<Real> samples;
  SamplingMask mask;
  double noise_sigma = 0;

  void validate() const
  {
    require(samples.frames() == mask.frames && samples.rows() == mask.rows, "k-space samples and mask disagree");
    for (int t = 0; t < samples.frames(); ++t) {
      for (int y = 0; y < samples.rows(); ++y) {
        if (mask.sampled(t, y)) { continue; }
        for (int x = 0; x < samples.cols(); ++x) {
          if (samples(t, y, x) != std::complex<Real>(0)) { throw DataError("k-space has data at an unsampled location"); }
        }
      }
    }
  }
};

using KSpaceData = BasicKSpaceData<float>;

/// Builds a mask with round(T*H/R) acquired lines in total, spread as evenly as possible over frames,
/// with a fully sampled central block in every frame. Uniform-interleaved masks space the outer lines
/// evenly and shear them frame to frame; every row is then hit at least once whenever
/// T * (lines per frame - center_lines) >= H - center_lines. Variable-density masks draw outer lines
/// per frame without replacement, weighted towards the k-space center.
inline SamplingMask make_mask(int frames,
                              int rows,
                              double requested_R,
                              int center_lines,
                              MaskPattern pattern,
                              std::uint64_t seed)
{
  require(frames >= 1 && rows >= 2, "mask extents must be positive");
  require(requested_R >= 1 && requested_R <= 32, "requested_R must lie in [1, 32]");
  require(center_lines >= 0 && center_lines <= rows, "center_lines must lie in [0, rows]");
  long const total = std::lround(double(frames) * rows / requested_R);
  if (double(center_lines) * frames > double(frames) * rows / requested_R + 1e-9 || total < frames) {
    throw ParameterError("center_lines = " + std::to_string(center_lines) + " is infeasible for R = " +
                         std::to_string(requested_R));
  }

  SamplingMask m;
  m.frames = frames;
  m.rows = rows;
  m.center_lines = center_lines;
  m.requested_R = requested_R;
  m.pattern = pattern;
  m.seed = seed;
  m.lines.assign(std::size_t(frames) * rows, 0);

  int const c0 = m.center_start();
  std::vector<int> outer;
  for (int r = 0; r < rows; ++r) {
    if (r < c0 || r >= c0 + center_lines) { outer.push_back(r); }
  }
  int const M = int(outer.size());
  Rng rng(seed);
  int const phase0 = int(seed % std::uint64_t(frames));

  for (int t = 0; t < frames; ++t) {
    for (int r = c0; r < c0 + center_lines; ++r) { m.lines[std::size_t(t) * rows + r] = 1; }
    long const n_t = total / frames + (t < total % frames ? 1 : 0);
    int const extra = int(std::min<long>(M, n_t - center_lines));
    if (extra <= 0) { continue; }
    if (pattern == MaskPattern::UniformInterleaved) {
      // Offsets sweep [0, M) across the frames; positions floor((j*M + off) / extra) are distinct.
      long const off = (long((t + phase0) % frames) * M) / frames;
      for (int j = 0; j < extra; ++j) {
        int const idx = int((long(j) * M + off) / extra);
        m.lines[std::size_t(t) * rows + outer[idx]] = 1;
      }
    } else {
      // Weighted sampling without replacement via exponential keys (Efraimidis-Spirakis).
      std::vector<std::pair<double, int>> keys;
      for (int r : outer) {
        double const d = std::abs(r - rows / 2) / (rows / 2.0);
        double const w = (1 - d) * (1 - d) + 0.05;
        keys.push_back({std::log(std::max(rng.uniform(), 1e-300)) / w, r});
      }
      std::partial_sort(keys.begin(), keys.begin() + extra, keys.end(),
                        [](auto const &a, auto const &b) { return a.first > b.first; });
      for (int j = 0; j < extra; ++j) { m.lines[std::size_t(t) * rows + keys[j].second] = 1; }
    }
  }
  m.measured_R = double(frames) * rows / double(m.count());
  return m;
}

/// Multiplies by the mask (broadcast across columns) in place.
template <typename Real>
void apply_mask(ComplexStack<Real> &k, SamplingMask const &mask)
{
  require(k.frames() == mask.frames && k.rows() == mask.rows, "mask does not match k-space extent");
  for (int t = 0; t < k.frames(); ++t) {
    for (int y = 0; y < k.rows(); ++y) {
      if (!mask.sampled(t, y)) { std::fill_n(k.frame(t) + std::size_t(y) * k.cols(), k.cols(), std::complex<Real>(0)); }
    }
  }
}

/// Retrospective acquisition: masked centered k-space plus masked complex Gaussian noise.
template <typename Real>
BasicKSpaceData<Real> undersample(BasicCineSequence<Real> const &seq,
                                  SamplingMask const &mask,
                                  double noise_sigma,
                                  std::uint64_t seed)
{
  require(noise_sigma >= 0, "noise_sigma must be nonnegative");
  require(seq.frames() == mask.frames && seq.rows() == mask.rows, "mask does not match sequence extent");
  BasicKSpaceData<Real> k;
  k.samples = fft2c(seq.images);
  k.mask = mask;
  k.noise_sigma = noise_sigma;
  if (noise_sigma > 0) {
    Rng rng(seed);
    for (auto &v : k.samples.vec()) {
      double const re = rng.normal(), im = rng.normal();
      v += std::complex<Real>(Real(noise_sigma * re), Real(noise_sigma * im));
    }
  }
  apply_mask(k.samples, mask);
  return k;
}

template <typename Real>
ComplexStack<Real> zero_filled(BasicKSpaceData<Real> const &k)
{
  return ifft2c(k.samples);
}

/// ifft2c of the zero-filled samples, carrying `geometry`'s spacing and frame interval.
template <typename Real>
BasicCineSequence<Real> zero_filled_recon(BasicKSpaceData<Real> const &k, BasicCineSequence<Real> geometry = {})
{
  geometry.images = zero_filled(k);
  return geometry;
}

/// Hard data consistency: measured values replace the image's k-space at acquired locations.
template <typename Real>
ComplexStack<Real> data_consistency(ComplexStack<Real> const &img, BasicKSpaceData<Real> const &k)
{
  img.check_same(k.samples);
  auto spec = fft2c(img);
  auto const &mask = k.mask;
  for (int t = 0; t < spec.frames(); ++t) {
    for (int y = 0; y < spec.rows(); ++y) {
      if (!mask.sampled(t, y)) { continue; }
      std::size_t const off = (std::size_t(t) * spec.rows() + y) * spec.cols();
      std::copy_n(k.samples.vec().begin() + off, spec.cols(), spec.vec().begin() + off);
    }
  }
  return ifft2c(spec);
}

template <typename Real>
BasicCineSequence<Real> data_consistency(BasicCineSequence<Real> const &img, BasicKSpaceData<Real> const &k)
{
  return img.with_images(data_consistency(img.images, k));
}

/// Adjoint of the linear part of data_consistency: ifft2c((1 - M) . fft2c(g)).
template <typename Real>
ComplexStack<Real> data_consistency_adjoint(ComplexStack<Real> const &g, SamplingMask const &mask)
{
  auto spec = fft2c(g);
  for (int t = 0; t < spec.frames(); ++t) {
    for (int y = 0; y < spec.rows(); ++y) {
      if (mask.sampled(t, y)) { std::fill_n(spec.frame(t) + std::size_t(y) * spec.cols(), spec.cols(), std::complex<Real>(0)); }
    }
  }
  return ifft2c(spec);
}

/// Energy outside the central 25% (half-width in each axis) of k-space, summed over frames.
template <typename Real>
double high_frequency_energy(ComplexStack<Real> const &img)
{
  auto const spec = fft2c(img);
  int const H = spec.rows(), W = spec.cols();
  double e = 0;
  for (int t = 0; t < spec.frames(); ++t) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        bool const central = y >= H / 4 && y < 3 * H / 4 && x >= W / 4 && x < 3 * W / 4;
        if (!central) { e += std::norm(std::complex<double>(spec(t, y, x))); }
      }
    }
  }
  return e;
}

} // namespace cinediff
