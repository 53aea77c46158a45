#include "cinediff/metrics.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace cinediff;

TEST_CASE("metrics agree with direct definitions on random inputs", "[metrics][oracle]")
{
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    int const T = 1 + int(rng.below(3)), H = 7 + int(rng.below(10)), W = 7 + int(rng.below(10));
    auto const ref = oracle::random_stack<double>(T, H, W, 100 + k);
    auto x = ref;
    double const noise = 0.05 + 0.5 * rng.uniform();
    for (auto &v : x.vec()) { v += std::complex<double>(noise * rng.normal(), noise * rng.normal()); }
    INFO("case " << k << " T " << T << " H " << H << " W " << W);
    CHECK(std::abs(nmse(x, ref) - oracle::nmse(x, ref)) <= 1e-6 * oracle::nmse(x, ref));
    CHECK(std::abs(psnr(x, ref) - oracle::psnr(x, ref)) < 1e-6);
    CHECK(std::abs(ssim(x, ref) - oracle::ssim(x, ref)) < 1e-6);
  }
}

TEST_CASE("metrics of float stacks match the double computation", "[metrics]")
{
  auto const ref = oracle::random_stack<float>(2, 12, 12, 3);
  auto const x = oracle::random_stack<float>(2, 12, 12, 4);
  CHECK(std::abs(ssim(x, ref) - oracle::ssim(x, ref)) < 1e-6);
  CHECK(std::abs(psnr(x, ref) - oracle::psnr(x, ref)) < 1e-6);
}

TEST_CASE("metric edge cases", "[metrics]")
{
  auto const ref = oracle::random_stack<double>(2, 8, 8, 5);
  CHECK(nmse(ref, ref) == 0.0);
  CHECK(std::isinf(psnr(ref, ref)));
  CHECK(psnr(ref, ref) > 0);
  CHECK(ssim(ref, ref) == Catch::Approx(1.0).epsilon(1e-12));
  // Only magnitudes enter: a global phase changes nothing.
  auto rot = ref;
  for (auto &v : rot.vec()) { v *= std::polar(1.0, 0.7); }
  CHECK(nmse(rot, ref) < 1e-28);
  CHECK(ssim(rot, ref) == Catch::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(nmse(ref, oracle::random_stack<double>(2, 8, 9, 1)), ParameterError);
  CHECK_THROWS_AS(psnr(ref, oracle::random_stack<double>(1, 8, 8, 1)), ParameterError);
  CHECK_THROWS_AS(ssim(oracle::random_stack<double>(1, 5, 5, 1), oracle::random_stack<double>(1, 5, 5, 2)), ParameterError);
  ComplexStack<double> zero(1, 8, 8);
  CHECK_THROWS_AS(nmse(oracle::random_stack<double>(1, 8, 8, 6), zero), ParameterError);
  CHECK_THROWS_AS(ssim(oracle::random_stack<double>(1, 8, 8, 6), zero), ParameterError);
  SsimOptions even;
  even.window = 6;
  CHECK_THROWS_AS(ssim(ref, ref, even), ParameterError);
}

TEST_CASE("Wilcoxon signed-rank against full enumeration", "[wilcoxon][oracle]")
{
  Rng rng(9);
  for (int k = 0; k < 30; ++k) {
    int const n = 6 + int(rng.below(9));
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.normal() + 0.4 * (k % 3);
      b[i] = rng.normal();
    }
    if (k % 5 == 0) {
      // Ties in |d| and one zero difference.
      b[1] = a[1];
      a[2] = b[2] + 0.5;
      a[3] = b[3] - 0.5;
    }
    double w_plus = 0;
    double const p = oracle::wilcoxon_enumerated_p(a, b, &w_plus);
    auto const r = wilcoxon_signed_rank(a, b);
    INFO("case " << k << " n " << n);
    CHECK(r.exact);
    CHECK(r.w_plus == Catch::Approx(w_plus));
    CHECK(std::abs(r.p_value - p) < 1e-12);
  }
}

TEST_CASE("Wilcoxon known values and the normal approximation", "[wilcoxon]")
{
  std::vector<double> a(10), b(10, 0.0);
  for (int i = 0; i < 10; ++i) { a[i] = i + 1; }
  auto const r = wilcoxon_signed_rank(a, b);
  CHECK(r.statistic == 0);
  CHECK(r.w_plus == 55);
  CHECK(r.p_value == Catch::Approx(2.0 / 1024).epsilon(1e-12));
  CHECK(wilcoxon_signed_rank(b, a).p_value == Catch::Approx(r.p_value));

  Rng rng(2);
  std::vector<double> x(40), y(40);
  for (int i = 0; i < 40; ++i) {
    x[i] = rng.normal() + 1.0;
    y[i] = rng.normal();
  }
  auto const big = wilcoxon_signed_rank(x, y);
  CHECK_FALSE(big.exact);
  CHECK(big.p_value > 0);
  CHECK(big.p_value < 0.05);
  double const z = (big.w_plus - 40 * 41 / 4.0) / std::sqrt(40 * 41 * 81 / 24.0);
  CHECK(big.p_value == Catch::Approx(std::erfc(std::abs(z) / std::sqrt(2.0))).epsilon(1e-12));

  CHECK_THROWS_AS(wilcoxon_signed_rank({1, 2, 3}, {1, 2, 3}), ParameterError);
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>(9, 0.0)), ParameterError);
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, a), DegenerateTestError);
  auto inf = a;
  inf[0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(wilcoxon_signed_rank(inf, b), ParameterError);
}

TEST_CASE("average ranks share ties", "[wilcoxon]")
{
  auto const r = average_ranks({3.0, 1.0, 3.0, 2.0});
  CHECK(r == std::vector<double>{3.5, 1.0, 3.5, 2.0});
}

TEST_CASE("metrics report tables", "[metrics][report]")
{
  MetricsReport rep;
  rep.reference = "ground_truth";
  rep.methods = {"A", "B", "C"};
  for (int s = 0; s < 8; ++s) {
    for (int m = 0; m < 3; ++m) {
      MetricRow row;
      row.sequence_id = std::to_string(s);
      row.method = rep.methods[m];
      row.nmse = 0.1 * (m + 1) + 0.001 * s;
      row.psnr_db = m == 2 && s == 0 ? std::numeric_limits<double>::infinity() : 20.0 + m + 0.1 * s;
      row.ssim = m == 1 ? 0.5 : 0.5 + 0.01 * (m + 1);
      rep.per_sequence.push_back(row);
    }
  }
  rep.finalize();
  CHECK(rep.summary.at("A").at("nmse").mean == Catch::Approx(0.1035));
  CHECK(rep.summary.at("B").at("ssim").std == 0.0);
  CHECK(std::isinf(rep.summary.at("C").at("psnr_db").mean));
  CHECK(rep.significance.size() == 3 * 3);
  for (auto const &s : rep.significance) {
    if (s.metric == "nmse") { CHECK(s.p_value == Catch::Approx(2.0 / 256)); }
  }

  auto const csv = rep.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 24);
  CHECK(csv.rfind("sequence_id,method,nmse,psnr_db,ssim\n", 0) == 0);
  CHECK(csv.find(",inf,") != std::string::npos);

  auto const j = rep.to_json();
  CHECK(j["n_sequences"] == 8);
  CHECK(j["summary"]["C"]["psnr_db"]["mean"] == "inf");
  CHECK(j["significance"].size() == 9);
  CHECK(j["significance"][0]["test"] == "wilcoxon-signed-rank");
  CHECK(format_metric(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_metric(0.25) == "0.25");
}
