#pragma once

#include "cine.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace cinediff {

namespace detail {

template <typename Real>
void check_metric_inputs(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  if (!x.same_extent(ref)) { throw ParameterError("metric inputs have different extents"); }
}

} // namespace detail

/// ||x| - |ref||^2 / ||ref||^2 over all frames.
template <typename Real>
double nmse(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  detail::check_metric_inputs(x, ref);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const a = std::abs(std::complex<double>(x[i])), b = std::abs(std::complex<double>(ref[i]));
    num += (a - b) * (a - b);
    den += b * b;
  }
  if (!(den > 0)) { throw ParameterError("NMSE reference has zero energy"); }
  return num / den;
}

/// 10 log10(peak^2 / mse) on magnitudes, peak = max |ref|. Identical magnitudes give +infinity.
template <typename Real>
double psnr(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  detail::check_metric_inputs(x, ref);
  double peak = 0, se = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const a = std::abs(std::complex<double>(x[i])), b = std::abs(std::complex<double>(ref[i]));
    peak = std::max(peak, b);
    se += (a - b) * (a - b);
  }
  double const mse = se / double(x.size());
  if (mse == 0) { return std::numeric_limits<double>::infinity(); }
  return 10 * std::log10(peak * peak / mse);
}

struct SsimOptions
{
  int window = 7;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
};

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
inline std::vector<double> gaussian_taps(int n, double sigma)
{
  std::vector<double> g(n);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    double const d = i - (n - 1) / 2.0;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto &v : g) { v /= sum; }
  return g;
}

/// Mean structural similarity of magnitude frames with a Gaussian window, evaluated wherever the window
/// fits entirely inside the frame, averaged over frames. Data range is the peak reference magnitude.
template <typename Real>
double ssim(ComplexStack<Real> const &x, ComplexStack<Real> const &ref, SsimOptions o = {})
{
  detail::check_metric_inputs(x, ref);
  int const H = x.rows(), W = x.cols(), n = o.window;
  require(n >= 1 && n % 2 == 1, "SSIM window must be odd");
  require(H >= n && W >= n, "frames are smaller than the SSIM window");
  auto const a = magnitudes(x), b = magnitudes(ref);
  double const L = *std::max_element(b.begin(), b.end());
  require(L > 0, "SSIM reference has zero peak");
  double const c1 = (o.k1 * L) * (o.k1 * L), c2 = (o.k2 * L) * (o.k2 * L);
  auto const g = gaussian_taps(n, o.sigma);
  int const oh = H - n + 1, ow = W - n + 1;
  std::size_t const fs = std::size_t(H) * W;
  // Separable weighted moments: horizontal pass into rows, then vertical.
  std::vector<double> f(5 * fs), hz(5 * std::size_t(H) * ow);
  double total = 0;
  for (int t = 0; t < x.frames(); ++t) {
    for (std::size_t i = 0; i < fs; ++i) {
      double const u = a[t * fs + i], v = b[t * fs + i];
      f[i] = u;
      f[fs + i] = v;
      f[2 * fs + i] = u * u;
      f[3 * fs + i] = v * v;
      f[4 * fs + i] = u * v;
    }
    for (int m = 0; m < 5; ++m) {
      for (int y = 0; y < H; ++y) {
        for (int c = 0; c < ow; ++c) {
          double s = 0;
          for (int k = 0; k < n; ++k) { s += g[k] * f[m * fs + std::size_t(y) * W + c + k]; }
          hz[(std::size_t(m) * H + y) * ow + c] = s;
        }
      }
    }
    double frame_sum = 0;
    for (int y = 0; y < oh; ++y) {
      for (int c = 0; c < ow; ++c) {
        double mom[5];
        for (int m = 0; m < 5; ++m) {
          double s = 0;
          for (int k = 0; k < n; ++k) { s += g[k] * hz[(std::size_t(m) * H + y + k) * ow + c]; }
          mom[m] = s;
        }
        double const mx = mom[0], my = mom[1];
        double const vx = mom[2] - mx * mx, vy = mom[3] - my * my, cxy = mom[4] - mx * my;
        frame_sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    }
    total += frame_sum / (double(oh) * ow);
  }
  return total / x.frames();
}

struct WilcoxonResult
{
  double statistic = 0; // min(W+, W-)
  double w_plus = 0;
  double p_value = 1;
  int n_used = 0;       // nonzero differences
  bool exact = true;
};

/// Average ranks (1-based) of v, ties sharing the mean of their positions.
inline std::vector<double> average_ranks(std::vector<double> const &v)
{
  std::vector<std::size_t> idx(v.size());
  for (std::size_t i = 0; i < idx.size(); ++i) { idx[i] = i; }
  std::stable_sort(idx.begin(), idx.end(), [&](auto p, auto q) { return v[p] < v[q]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) { ++j; }
    double const avg = (double(i) + double(j)) / 2 + 1;
    for (std::size_t k = i; k <= j; ++k) { r[idx[k]] = avg; }
    i = j + 1;
  }
  return r;
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences are dropped. Up to 25
/// nonzero differences the null distribution of W+ is enumerated exactly for the observed (possibly
/// tied) ranks; above that a normal approximation with tie-corrected variance is used.
inline WilcoxonResult wilcoxon_signed_rank(std::vector<double> const &a, std::vector<double> const &b)
{
  require(a.size() == b.size(), "Wilcoxon samples must have equal length");
  require(a.size() >= 6, "Wilcoxon test needs at least 6 pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double const di = a[i] - b[i];
    if (!std::isfinite(di)) { throw ParameterError("Wilcoxon differences must be finite"); }
    if (di != 0) { d.push_back(di); }
  }
  if (d.empty()) { throw DegenerateTestError("all paired differences are zero"); }
  std::vector<double> absd(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) { absd[i] = std::abs(d[i]); }
  auto const r = average_ranks(absd);
  WilcoxonResult out;
  out.n_used = int(d.size());
  double total = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    total += r[i];
    if (d[i] > 0) { out.w_plus += r[i]; }
  }
  out.statistic = std::min(out.w_plus, total - out.w_plus);
  int const n = out.n_used;
  if (n <= 25) {
    // Ranks doubled to integers; count sign assignments by achievable W+ sum.
    std::vector<int> r2(n);
    int max2 = 0;
    for (int i = 0; i < n; ++i) {
      r2[i] = int(std::lround(2 * r[i]));
      max2 += r2[i];
    }
    std::vector<double> count(max2 + 1, 0.0);
    count[0] = 1;
    for (int i = 0; i < n; ++i) {
      for (int s = max2; s >= r2[i]; --s) { count[s] += count[s - r2[i]]; }
    }
    int const w2 = int(std::lround(2 * out.w_plus));
    double lo = 0, hi = 0;
    for (int s = 0; s <= max2; ++s) {
      if (s <= w2) { lo += count[s]; }
      if (s >= w2) { hi += count[s]; }
    }
    double const denom = std::ldexp(1.0, n);
    out.p_value = std::min(1.0, 2 * std::min(lo, hi) / denom);
    out.exact = true;
  } else {
    std::map<double, int> ties;
    for (double v : absd) { ++ties[v]; }
    double tie = 0;
    for (auto const &[v, t] : ties) { tie += double(t) * t * t - t; }
    double const mean = n * (n + 1.0) / 4;
    double const var = n * (n + 1.0) * (2 * n + 1.0) / 24 - tie / 48;
    double const z = (out.w_plus - mean) / std::sqrt(var);
    out.p_value = std::min(1.0, std::erfc(std::abs(z) / std::numbers::sqrt2));
    out.exact = false;
  }
  return out;
}

struct MetricRow
{
  std::string sequence_id, method;
  double nmse = 0, psnr_db = 0, ssim = 0;
};

struct MetricSummary
{
  double mean = 0, std = 0;
};

struct SignificanceRow
{
  std::string metric, method_a, method_b;
  double statistic = 0, p_value = 1;
  bool exact = true;
  std::string note; // set when the test was degenerate
};

inline std::string format_metric(double v)
{
  if (std::isinf(v)) { return v > 0 ? "inf" : "-inf"; }
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

/// Per-sequence, per-method metrics plus summaries and pairwise Wilcoxon tests.
struct MetricsReport
{
  std::string reference; // what the metrics were computed against
  std::vector<std::string> methods;
  std::vector<MetricRow> per_sequence;
  std::map<std::string, std::map<std::string, MetricSummary>> summary; // method -> metric -> stats
  std::vector<SignificanceRow> significance;

  static std::vector<std::string> metric_names() { return {"nmse", "psnr_db", "ssim"}; }

  static double get(MetricRow const &r, std::string const &m)
  {
    if (m == "nmse") { return r.nmse; }
    if (m == "psnr_db") { return r.psnr_db; }
    return r.ssim;
  }

  std::vector<double> column(std::string const &method, std::string const &metric) const
  {
    std::vector<double> v;
    for (auto const &r : per_sequence) {
      if (r.method == method) { v.push_back(get(r, metric)); }
    }
    return v;
  }

  /// Fills summary and significance from per_sequence. Pairs run over all method combinations.
  void finalize()
  {
    summary.clear();
    significance.clear();
    for (auto const &m : methods) {
      for (auto const &k : metric_names()) {
        auto const v = column(m, k);
        MetricSummary s;
        if (!v.empty()) {
          for (double x : v) { s.mean += x; }
          s.mean /= double(v.size());
          double ss = 0;
          for (double x : v) { ss += (x - s.mean) * (x - s.mean); }
          s.std = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
          if (std::isinf(s.mean)) { s.std = 0; }
        }
        summary[m][k] = s;
      }
    }
    for (std::size_t i = 0; i < methods.size(); ++i) {
      for (std::size_t j = i + 1; j < methods.size(); ++j) {
        for (auto const &k : metric_names()) {
          SignificanceRow row;
          row.metric = k;
          row.method_a = methods[i];
          row.method_b = methods[j];
          try {
            auto const w = wilcoxon_signed_rank(column(methods[i], k), column(methods[j], k));
            row.statistic = w.statistic;
            row.p_value = w.p_value;
            row.exact = w.exact;
          } catch (Error const &e) {
            row.note = e.what();
          }
          significance.push_back(row);
        }
      }
    }
  }

  std::string to_csv() const
  {
    std::ostringstream os;
    os << "sequence_id,method,nmse,psnr_db,ssim\n";
    for (auto const &r : per_sequence) {
      os << r.sequence_id << ',' << r.method << ',' << format_metric(r.nmse) << ',' << format_metric(r.psnr_db) << ','
         << format_metric(r.ssim) << '\n';
    }
    return os.str();
  }

  nlohmann::json to_json() const
  {
    auto num = [](double v) -> nlohmann::json {
      if (std::isfinite(v)) { return v; }
      return format_metric(v);
    };
    nlohmann::json j;
    j["reference"] = reference;
    j["methods"] = methods;
    j["n_sequences"] = methods.empty() ? 0 : column(methods.front(), "nmse").size();
    for (auto const &[m, ks] : summary) {
      for (auto const &[k, s] : ks) { j["summary"][m][k] = {{"mean", num(s.mean)}, {"std", num(s.std)}}; }
    }
    j["significance"] = nlohmann::json::array();
    for (auto const &s : significance) {
      nlohmann::json r = {{"metric", s.metric},       {"method_a", s.method_a}, {"method_b", s.method_b},
                          {"statistic", s.statistic}, {"p_value", s.p_value},   {"exact", s.exact},
                          {"test", "wilcoxon-signed-rank"}};
      if (!s.note.empty()) { r["note"] = s.note; }
      j["significance"].push_back(r);
    }
    return j;
  }
};

} // namespace cinediff
