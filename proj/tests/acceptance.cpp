// Acceptance checks: one PASS/FAIL line per criterion; exits nonzero if any criterion fails.

#include "cinediff/harness.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <functional>
#include <iostream>

using namespace cinediff;

namespace {

struct Verdict
{
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4)
{
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename Real>
void randomize(nn::ParamSet<Real> &params, std::uint64_t seed, double std)
{
  Rng rng(seed);
  auto flat = params.flatten();
  for (auto &v : flat) { v += Real(std * rng.normal()); }
  params.assign(std::span<Real const>(flat));
}

struct AffineDenoiser
{
  Tensor<double> operator()(Tensor<double> const &x, int t, Condition<double> const &c) const
  {
    Tensor<double> out(x.shape());
    double const a = 0.1 + 0.02 * t;
    for (std::size_t i = 0; i < x.size(); ++i) { out[i] = a * x[i] + 0.3 * c.channels[i]; }
    return out;
  }
};

struct ZeroDenoiser
{
  Tensor<double> operator()(Tensor<double> const &x, int, Condition<double> const &) const { return Tensor<double>(x.shape()); }
};

Verdict antithetic_exactness()
{
  auto const t0 = std::chrono::steady_clock::now();
  auto const s = make_schedule(20, 1e-3, 0.35);
  Rng rng(1);
  Condition<double> cond;
  cond.channels = normal_tensor<double>({4, 4, 16, 16}, rng);
  auto const first = sample_paired(AffineDenoiser{}, cond, s, 0);
  double dev = 0, zero = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto const p = sample_paired(AffineDenoiser{}, cond, s, seed);
    for (std::size_t i = 0; i < p.x_pair.size(); ++i) { dev = std::max(dev, std::abs(p.x_pair[i] - first.x_pair[i])); }
    auto const z = sample_paired(ZeroDenoiser{}, cond, s, seed);
    for (double v : z.x_pair.vec()) { zero = std::max(zero, std::abs(v)); }
  }
  double const secs = seconds_since(t0);
  return {dev <= 1e-5 && zero == 0.0 && secs < 60,
          "affine denoiser max |x_pair deviation| over 8 seeds " + fmt(dev) + " (<= 1e-5); zero denoiser max |x_pair| " +
            fmt(zero) + " (exactly 0); " + fmt(secs, 3) + " s"};
}

struct DeskEvidence
{
  json truth, summary, report, manifest;
  ExperimentConfig config;
  double seconds = 0;
  bool reused = false;
};

json significance(json const &report, std::string const &metric, std::string const &a, std::string const &b)
{
  for (auto const &s : report.at("significance")) {
    if (s.at("metric") != metric) { continue; }
    if ((s.at("method_a") == a && s.at("method_b") == b) || (s.at("method_a") == b && s.at("method_b") == a)) { return s; }
  }
  throw DataError("no " + metric + " test between " + a + " and " + b);
}

double summary_mean(json const &report, std::string const &method, std::string const &metric)
{
  return detail::metric_value(report.at("summary").at(method).at(metric).at("mean"));
}

std::string desk_scale(DeskEvidence const &d)
{
  auto const &c = d.config;
  std::string r;
  for (double a : c.accelerations) { r += (r.empty() ? "" : ",") + fmt(a); }
  return "n_test " + std::to_string(c.n_test) + ", T " + std::to_string(c.phantom.frames) + ", " +
         std::to_string(c.phantom.height) + "x" + std::to_string(c.phantom.width) + ", R {" + r + "}, " +
         std::to_string(c.sampling.n_seeds) + " seeds";
}

bool desk_scale_ok(ExperimentConfig const &c)
{
  auto acc = c.accelerations;
  std::sort(acc.begin(), acc.end());
  return c.n_test >= 20 && c.phantom.frames == 16 && c.phantom.height == 64 && c.phantom.width == 64 &&
         acc == std::vector<double>{8, 16} && c.sampling.n_seeds == 16;
}

Verdict variance_ordering(DeskEvidence const &d)
{
  auto const &std_ = d.summary.at("mean_median_pixel_std");
  double const s1 = std_.at("Diff-single"), s2 = std_.at("Diff-avg"), s3 = std_.at("Diff-pair");
  bool const std_ok = s2 <= 0.9 * s1 && s3 <= 0.9 * s2;
  double const p1 = summary_mean(d.truth, "Diff-single", "psnr_db"), p2 = summary_mean(d.truth, "Diff-avg", "psnr_db"),
               p3 = summary_mean(d.truth, "Diff-pair", "psnr_db");
  double const w12 = significance(d.truth, "psnr_db", "Diff-single", "Diff-avg").at("p_value");
  double const w23 = significance(d.truth, "psnr_db", "Diff-avg", "Diff-pair").at("p_value");
  bool const psnr_ok = p3 > p2 && p2 > p1 && w12 < 0.05 && w23 < 0.05;
  auto const &mad = d.report.at("mean_abs_difference");
  double const mad1 = mad.at("Diff-single"), mad3 = mad.at("Diff-pair");
  std::string const timing = d.reused ? "reused run" : "pipeline " + fmt(d.seconds / 60, 3) + " min (target < 30 min: " +
                                                         (d.seconds < 1800 ? "met" : "missed") + ")";
  return {std_ok && psnr_ok && desk_scale_ok(d.config),
          "median pixel std single/avg/pair " + fmt(s1) + "/" + fmt(s2) + "/" + fmt(s3) + " (gaps " +
            fmt(100 * (1 - s2 / s1), 3) + "%, " + fmt(100 * (1 - s3 / s2), 3) + "%); PSNR " + fmt(p1) + " < " + fmt(p2) +
            " < " + fmt(p3) + " dB, Wilcoxon P " + fmt(w12) + ", " + fmt(w23) + "; mean |difference| single " +
            fmt(mad1) + " vs pair " + fmt(mad3) + "; " + desk_scale(d) + "; " + timing};
}

Verdict pipeline_benefit(DeskEvidence const &d)
{
  double const zf = summary_mean(d.truth, "Zero-filled", "nmse"), cr = summary_mean(d.truth, "res-CRNN", "nmse");
  double const p = significance(d.truth, "nmse", "Zero-filled", "res-CRNN").at("p_value");
  double const hf = d.summary.at("high_frequency_ratio_mean").at("res_crnn");
  return {zf > cr && p < 0.05 && hf < 1,
          "mean NMSE zero-filled " + fmt(zf) + " > res-CRNN " + fmt(cr) + ", Wilcoxon P " + fmt(p) +
            "; res-CRNN high-frequency energy ratio " + fmt(hf)};
}

Verdict fft_correctness()
{
  auto const xf = oracle::random_stack<float>(16, 64, 64, 3);
  double const e0 = sum_squares(xf), parseval = std::abs(sum_squares(fft2c(xf)) - e0) / e0;
  auto const x4 = oracle::random_stack<double>(3, 4, 4, 11);
  double const dft = std::max(oracle::max_abs_diff(fft2c(x4), oracle::centered_dft(x4)),
                              oracle::max_abs_diff(ifft2c(x4), oracle::centered_dft(x4, true)));
  auto const x = oracle::random_stack<double>(3, 16, 16, 4), y = oracle::random_stack<double>(3, 16, 16, 5);
  double const adj = std::abs(oracle::inner(fft2c(x), y) - oracle::inner(x, ifft2c(y)));
  return {parseval <= 1e-6 && dft <= 1e-10 && adj <= 1e-10,
          "Parseval rel " + fmt(parseval) + " (float, 16x64x64); 4x4 DFT oracle " + fmt(dft) + "; adjoint " + fmt(adj)};
}

Verdict data_consistency_exactness()
{
  double worst_idem = 0, worst_sampled = 0;
  for (std::uint64_t c = 0; c < 20; ++c) {
    Rng rng(100 + c);
    int const T = 1 + int(rng.below(4)), H = 8 << rng.below(2), W = 8 << rng.below(2);
    BasicCineSequence<double> s;
    s.images = oracle::random_stack<double>(T, H, W, c);
    auto const pattern = rng.below(2) ? MaskPattern::UniformInterleaved : MaskPattern::VariableDensityRandom;
    auto const m = make_mask(T, H, 1.5 + 1.5 * rng.uniform(), 2, pattern, c);
    auto const k = undersample(s, m, 0.01 * double(rng.below(2)), c + 1);
    auto const img = oracle::random_stack<double>(T, H, W, 200 + c);
    auto const once = data_consistency(img, k);
    worst_idem = std::max(worst_idem, oracle::max_abs_diff(once, data_consistency(once, k)));
    auto const spec = fft2c(once);
    for (int t = 0; t < T; ++t) {
      for (int yy = 0; yy < H; ++yy) {
        if (!k.mask.sampled(t, yy)) { continue; }
        for (int xx = 0; xx < W; ++xx) { worst_sampled = std::max(worst_sampled, std::abs(spec(t, yy, xx) - k.samples(t, yy, xx))); }
      }
    }
  }
  return {worst_idem <= 1e-10 && worst_sampled <= 1e-10,
          "20 random cases: idempotence " + fmt(worst_idem) + ", sampled entries " + fmt(worst_sampled)};
}

Verdict gradient_checks()
{
  auto const t0 = std::chrono::steady_clock::now();
  double worst_crnn = 0, worst_unet = 0;
  {
    CRNNConfig c;
    c.n_iterations = 2;
    c.hidden_channels = 3;
    c.seed = 5;
    CRNN<double> net(c);
    randomize(net.params(), 9, 0.05);
    PhantomSpec p;
    p.seed = 3;
    p.frames = 4;
    p.height = 8;
    p.width = 8;
    p.cardiac_period = 4;
    BasicCineSequence<double> ref;
    ref.images = add_reference_noise(generate_phantom(p), 0.02, 4).images.cast<double>();
    CRNNExample<double> const ex{undersample(ref, make_mask(4, 8, 2.0, 2, MaskPattern::UniformInterleaved, 3), 0.0, 0), ref};
    // Small step so no leaky-ReLU input crosses zero inside the stencil.
    for (auto const &g : oracle::check_gradients<double>(net.params(), [&] { return crnn_loss(net, ex); }, 12, 1e-7, 1)) {
      worst_crnn = std::max(worst_crnn, g.rel_error);
    }
  }
  {
    STUNetConfig c;
    c.base_channels = 4;
    c.depth = 1;
    c.attention_heads = 2;
    c.groups = 2;
    c.time_embedding_dim = 8;
    c.max_frames = 4;
    c.seed = 12;
    STUNet<double> net(c);
    randomize(net.params(), 3, 0.05);
    Rng rng(4);
    auto const x = normal_tensor<double>({2, 4, 8, 8}, rng), cond = normal_tensor<double>({4, 4, 8, 8}, rng);
    auto const target = normal_tensor<double>({2, 4, 8, 8}, rng);
    auto const loss = [&] { return nn::mse(net.forward(nn::Var<double>(x), 5, nn::Var<double>(cond)), target); };
    for (auto const &g : oracle::check_gradients<double>(net.params(), loss, 8, 1e-5, 2)) {
      worst_unet = std::max(worst_unet, g.rel_error);
    }
  }
  double const secs = seconds_since(t0);
  return {worst_crnn < 1e-3 && worst_unet < 1e-3 && secs < 300,
          "worst per-tensor relative error res-CRNN " + fmt(worst_crnn) + ", spatiotemporal U-Net " + fmt(worst_unet) +
            "; " + fmt(secs, 3) + " s"};
}

Verdict metric_oracles()
{
  double worst = 0;
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    int const T = 1 + int(rng.below(3)), H = 7 + int(rng.below(10)), W = 7 + int(rng.below(10));
    auto const ref = oracle::random_stack<double>(T, H, W, 100 + k);
    auto x = ref;
    double const noise = 0.05 + 0.5 * rng.uniform();
    for (auto &v : x.vec()) { v += std::complex<double>(noise * rng.normal(), noise * rng.normal()); }
    worst = std::max({worst, std::abs(nmse(x, ref) - oracle::nmse(x, ref)), std::abs(psnr(x, ref) - oracle::psnr(x, ref)),
                      std::abs(ssim(x, ref) - oracle::ssim(x, ref))});
  }
  double worst_p = 0;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> a(10), b(10);
    for (int i = 0; i < 10; ++i) {
      a[i] = rng.normal() + 0.3 * (k % 4);
      b[i] = rng.normal();
    }
    worst_p = std::max(worst_p, std::abs(wilcoxon_signed_rank(a, b).p_value - oracle::wilcoxon_enumerated_p(a, b)));
  }
  return {worst <= 1e-6 && worst_p <= 1e-12,
          "50 random inputs, worst NMSE/PSNR/SSIM deviation " + fmt(worst) + "; Wilcoxon n=10 vs enumeration, 20 cases, worst P deviation " +
            fmt(worst_p)};
}

Verdict forward_statistics()
{
  auto const s = default_schedule(200);
  Rng r0(1);
  Tensor<double> x0({2, 1, 4, 4});
  for (auto &v : x0.vec()) { v = 0.5 + r0.uniform(); }
  double worst_mean = 0, worst_var = 0;
  std::string ts;
  for (int t : {0, 49, 99}) {
    int const N = 200000;
    std::vector<double> sum(x0.size()), sum2(x0.size());
    Rng rng(10 + t);
    for (int n = 0; n < N; ++n) {
      auto const xt = q_sample(x0, t, normal_tensor<double>(x0.shape(), rng), s);
      for (std::size_t i = 0; i < x0.size(); ++i) {
        sum[i] += xt[i];
        sum2[i] += xt[i] * xt[i];
      }
    }
    double const ab = s.alpha_bar[t];
    for (std::size_t i = 0; i < x0.size(); ++i) {
      double const m = sum[i] / N, v = sum2[i] / N - m * m;
      worst_mean = std::max(worst_mean, std::abs(m / (std::sqrt(ab) * x0[i]) - 1));
      worst_var = std::max(worst_var, std::abs(v / (1 - ab) - 1));
    }
    ts += (ts.empty() ? "" : ", ") + std::to_string(t) + " (alpha_bar " + fmt(ab, 3) + ")";
  }
  return {worst_mean < 0.05 && worst_var < 0.05,
          "t = " + ts + ", 200000 draws: worst relative mean error " + fmt(worst_mean) + ", variance " + fmt(worst_var)};
}

std::vector<fs::path> reproducibility_files(RunLayout const &L)
{
  std::vector<fs::path> out;
  for (auto const &e : fs::recursive_directory_iterator(L.dataset())) {
    if (e.is_regular_file()) { out.push_back(fs::relative(e.path(), L.root)); }
  }
  for (auto const &e : fs::directory_iterator(L.checkpoints())) { out.push_back(fs::relative(e.path(), L.root)); }
  for (auto const &e : fs::directory_iterator(L.metrics())) {
    if (e.path().extension() == ".csv") { out.push_back(fs::relative(e.path(), L.root)); }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict reproducibility(ExperimentConfig const &c, fs::path const &work)
{
  std::ostringstream log;
  std::array<fs::path, 2> const dirs{work / "repro_a", work / "repro_b"};
  for (auto const &d : dirs) {
    fs::remove_all(d);
    RunOptions o;
    o.out = d;
    o.reference_mode = true;
    o.log = &log;
    run_pipeline(c, o);
  }
  auto const files = reproducibility_files(RunLayout{dirs[0]});
  int differing = 0, checkpoints = 0, csvs = 0;
  std::string first;
  for (auto const &f : files) {
    auto const b = dirs[1] / f;
    bool const same = fs::exists(b) && detail::read_file(dirs[0] / f) == detail::read_file(b);
    if (!same && differing++ == 0) { first = f.generic_string(); }
    checkpoints += f.begin()->string() == "checkpoints";
    csvs += f.extension() == ".csv";
  }
  bool const counts_match = files == reproducibility_files(RunLayout{dirs[1]});
  return {differing == 0 && counts_match && checkpoints == 4 && csvs == 2,
          std::to_string(files.size()) + " files compared (dataset, " + std::to_string(checkpoints) +
            " checkpoint files, " + std::to_string(csvs) + " metric CSVs): " +
            (differing == 0 ? "all bit-identical" : std::to_string(differing) + " differ, first " + first)};
}

Verdict mask_accelerations(ExperimentConfig const &c)
{
  double worst = 0;
  std::string detail;
  for (double r : {4.0, 8.0, 12.0, 14.8, 16.0}) {
    for (auto pattern : {MaskPattern::UniformInterleaved, MaskPattern::VariableDensityRandom}) {
      auto const m = make_mask(c.phantom.frames, c.phantom.height, r, c.center_lines_for(r), pattern, 17);
      double const e = std::abs(m.measured_R / r - 1);
      worst = std::max(worst, e);
      if (pattern == c.mask_pattern) { detail += (detail.empty() ? "" : ", ") + fmt(r, 3) + " -> " + fmt(m.measured_R, 4); }
    }
  }
  return {worst <= 0.10, "measured R " + detail + " (" + to_string(c.mask_pattern) + "); worst relative error over both patterns " +
                           fmt(100 * worst, 3) + "%"};
}

} // namespace

int main(int argc, char **argv)
{
  configure_allocator();
  CLI::App app{"Acceptance checks"};
  fs::path work = "acceptance_runs";
  std::string desk_config, smoke_config, desk_run;
  app.add_option("--work", work, "Scratch directory for pipeline runs");
  app.add_option("--desk-config", desk_config, "Desk-scale configuration for the trained-pipeline criteria")->required();
  app.add_option("--smoke-config", smoke_config, "Small configuration for the reproducibility criterion")->required();
  app.add_option("--desk-run", desk_run, "Evaluate an existing completed desk run instead of running the pipeline");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  std::optional<DeskEvidence> desk;
  std::string desk_error;
  auto load_desk = [&]() -> DeskEvidence const & {
    if (desk) { return *desk; }
    if (!desk_error.empty()) { throw Error("pipeline", desk_error); }
    try {
      DeskEvidence d;
      d.config = load_config(desk_config);
      RunOptions o;
      o.reference_mode = true;
      if (desk_run.empty()) {
        o.out = work / "desk";
        fs::remove_all(o.out);
        auto const t0 = std::chrono::steady_clock::now();
        run_pipeline(d.config, o);
        d.seconds = seconds_since(t0);
      } else {
        o.out = desk_run;
        d.reused = true;
      }
      RunLayout const L{o.out};
      d.manifest = read_json(L.manifest());
      if (d.manifest.value("config_fingerprint", "") != fingerprints(d.config).experiment) {
        throw ParameterError("desk run at '" + o.out.string() + "' was produced by a different configuration");
      }
      d.truth = read_json(L.metrics() / "metrics_ground_truth.json");
      d.summary = read_json(L.metrics() / "ensemble_summary.json");
      d.report = read_json(L.report() / "report.json");
      desk = std::move(d);
      return *desk;
    } catch (std::exception const &e) {
      desk_error = std::string("desk pipeline failed: ") + e.what();
      throw;
    }
  };

  std::vector<std::pair<int, std::function<Verdict()>>> const criteria{
    {1, antithetic_exactness},
    {4, fft_correctness},
    {5, data_consistency_exactness},
    {6, gradient_checks},
    {7, metric_oracles},
    {8, forward_statistics},
    {10, [&] { return mask_accelerations(load_config(desk_config)); }},
    {9, [&] { return reproducibility(load_config(smoke_config), work); }},
    {2, [&] { return variance_ordering(load_desk()); }},
    {3, [&] { return pipeline_benefit(load_desk()); }},
  };
  std::map<int, Verdict> results;
  for (auto const &[n, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (std::exception const &e) {
      v = {false, std::string("error: ") + e.what()};
    }
    results[n] = v;
    std::cerr << "[acceptance] criterion " << n << " done\n";
  }
  int failed = 0;
  for (auto const &[n, v] : results) {
    std::cout << "criterion " << n << " " << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << "\n";
    failed += !v.pass;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
