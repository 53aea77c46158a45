#pragma once

#include "pipeline.hpp"
#include "png.hpp"

namespace cinediff {

namespace detail {

inline std::uint8_t gray_level(double v, double peak)
{
  double const u = peak > 0 ? v / peak : 0.0;
  return std::uint8_t(std::lround(std::clamp(u, 0.0, 1.0) * 255.0));
}

// Blue for negative, white at zero, red for positive; `scale` maps to full saturation.
inline std::array<std::uint8_t, 3> diverging(double v, double scale)
{
  double const u = scale > 0 ? std::clamp(v / scale, -1.0, 1.0) : 0.0;
  auto const fade = std::uint8_t(std::lround(255.0 * (1.0 - std::abs(u))));
  if (u >= 0) { return {255, fade, fade}; }
  return {fade, fade, 255};
}

inline double peak_magnitude(ComplexStack<float> const &z)
{
  double p = 0;
  for (auto const &v : z.vec()) { p = std::max(p, double(std::abs(v))); }
  return p;
}

} // namespace detail

/// Magnitude frames of each sequence side by side, each laid out as a near-square grid.
inline Image8 montage(std::vector<ComplexStack<float> const *> const &panels, double peak, int gap = 2)
{
  require(!panels.empty(), "montage needs at least one panel");
  auto const &f = *panels.front();
  int const T = f.frames(), H = f.rows(), W = f.cols();
  int const cols = int(std::ceil(std::sqrt(double(T)))), rows = (T + cols - 1) / cols;
  int const pw = cols * W, ph = rows * H;
  Image8 img(int(panels.size()) * (pw + gap) - gap, ph, 1, 0);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    panels[p]->check_same(f);
    for (int t = 0; t < T; ++t) {
      int const ox = int(p) * (pw + gap) + (t % cols) * W, oy = (t / cols) * H;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) { *img.at(ox + x, oy + y) = detail::gray_level(std::abs((*panels[p])(t, y, x)), peak); }
      }
    }
  }
  return img;
}

/// Magnitude along column `col` against time: rows are image rows, each frame is `stretch` pixels wide.
inline Image8 xt_profile(ComplexStack<float> const &z, int col, double peak, int stretch = 4)
{
  require(col >= 0 && col < z.cols(), "x-t profile column outside the frame");
  Image8 img(z.frames() * stretch, z.rows(), 1, 0);
  for (int t = 0; t < z.frames(); ++t) {
    for (int y = 0; y < z.rows(); ++y) {
      auto const g = detail::gray_level(std::abs(z(t, y, col)), peak);
      for (int s = 0; s < stretch; ++s) { *img.at(t * stretch + s, y) = g; }
    }
  }
  return img;
}

/// Signed magnitude differences |x| - |truth| of one frame per method, on a shared diverging scale.
inline Image8 difference_panel(std::vector<ComplexStack<float> const *> const &xs,
                               ComplexStack<float> const &truth,
                               int frame,
                               double scale,
                               int gap = 2)
{
  int const H = truth.rows(), W = truth.cols();
  Image8 img(int(xs.size()) * (W + gap) - gap, H, 3, 255);
  for (std::size_t p = 0; p < xs.size(); ++p) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double const d = std::abs((*xs[p])(frame, y, x)) - std::abs(truth(frame, y, x));
        auto const c = detail::diverging(d, scale);
        std::copy(c.begin(), c.end(), img.at(int(p) * (W + gap) + x, y));
      }
    }
  }
  return img;
}

inline double mean_abs_magnitude_difference(ComplexStack<float> const &x, ComplexStack<float> const &truth)
{
  x.check_same(truth);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) { s += std::abs(double(std::abs(x[i])) - double(std::abs(truth[i]))); }
  return s / double(x.size());
}

/// Writes montages, x-t profiles and difference panels for every test sequence, plus a JSON index of
/// the images and the mean absolute difference of every method against the ground truth.
inline json emit_report(ExperimentConfig const &c, RunLayout const &L)
{
  auto const fp = fingerprints(c);
  Dataset const ds(L.dataset(), fp.data);
  auto const methods = methods_for(c);
  fs::create_directories(L.report());
  json idx;
  idx["fingerprint"] = fp.diffusion;
  idx["methods"] = json::array();
  for (auto const &m : methods) { idx["methods"].push_back(m.name); }
  idx["montage_layout"] = "ground truth, then methods in order; each a frame grid";
  idx["difference_panel"] = "|method| - |ground truth| at the middle frame, shared scale, blue negative, red positive";
  idx["sequences"] = json::array();
  std::map<std::string, double> mad_sum;
  for (auto id : ds.ids("test")) {
    auto const seq = ds.load(id);
    auto const dir = L.recon(id);
    std::vector<ComplexStack<float>> recon;
    for (auto const &m : methods) {
      auto const f = dir / (m.slug + ".cinearr");
      if (!fs::exists(f)) { throw IoError("missing reconstruction '" + f.string() + "' (run reconstruct first)"); }
      recon.push_back(complex_from_raw(read_array(f)));
      recon.back().check_same(seq.truth.images);
    }
    double const peak = detail::peak_magnitude(seq.truth.images);
    std::string const tag = "seq" + std::to_string(id);
    json s = {{"id", id}};

    std::vector<ComplexStack<float> const *> panels{&seq.truth.images};
    for (auto const &r : recon) { panels.push_back(&r); }
    write_png(L.report() / (tag + "_montage.png"), montage(panels, peak));
    s["montage"] = tag + "_montage.png";

    int const col = seq.truth.cols() / 2;
    write_png(L.report() / (tag + "_xt_ground_truth.png"), xt_profile(seq.truth.images, col, peak));
    s["xt_profiles"]["Ground truth"] = tag + "_xt_ground_truth.png";
    for (std::size_t i = 0; i < methods.size(); ++i) {
      auto const name = tag + "_xt_" + methods[i].slug + ".png";
      write_png(L.report() / name, xt_profile(recon[i], col, peak));
      s["xt_profiles"][methods[i].name] = name;
    }

    int const frame = seq.truth.frames() / 2;
    double scale = 0;
    for (auto const &r : recon) {
      for (int y = 0; y < r.rows(); ++y) {
        for (int x = 0; x < r.cols(); ++x) {
          scale = std::max(scale, std::abs(double(std::abs(r(frame, y, x))) - std::abs(seq.truth.images(frame, y, x))));
        }
      }
    }
    std::vector<ComplexStack<float> const *> xs;
    for (auto const &r : recon) { xs.push_back(&r); }
    write_png(L.report() / (tag + "_difference.png"), difference_panel(xs, seq.truth.images, frame, scale));
    s["difference_panel"] = tag + "_difference.png";
    s["difference_scale"] = scale;
    for (std::size_t i = 0; i < methods.size(); ++i) {
      double const mad = mean_abs_magnitude_difference(recon[i], seq.truth.images);
      s["mean_abs_difference"][methods[i].name] = mad;
      mad_sum[methods[i].name] += mad;
    }
    idx["sequences"].push_back(s);
  }
  for (auto const &[name, v] : mad_sum) { idx["mean_abs_difference"][name] = v / double(idx["sequences"].size()); }
  write_json(L.report() / "report.json", idx);
  return idx;
}

inline void stage_report(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  RunManifest m(c, o);
  auto const idx = emit_report(c, L);
  *o.log << "[report] " << idx["sequences"].size() << " sequences -> " << L.report() << "\n";
  m.record_stage("report", timer.seconds(), fingerprints(c).diffusion, {L.report() / "report.json"});
  m.save();
}

/// Every stage in order.
inline RunManifest run_pipeline(ExperimentConfig const &c, RunOptions const &o)
{
  stage_gen_data(c, o);
  stage_train_baseline(c, o);
  stage_train_diffusion(c, o);
  stage_reconstruct(c, o);
  stage_evaluate(c, o);
  stage_report(c, o);
  return RunManifest(c, o);
}

} // namespace cinediff
