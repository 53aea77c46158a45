#pragma once

#include "dataset.hpp"
#include "metrics.hpp"
#include "paired.hpp"

#include <chrono>
#include <iostream>

#ifndef CINEDIFF_VERSION
#define CINEDIFF_VERSION "0.0.0-dev"
#endif

namespace cinediff {

struct RunOptions
{
  fs::path out;
  bool reference_mode = false;
  std::ostream *log = &std::cerr;
};

/// Paths of every stage's outputs below the run directory.
struct RunLayout
{
  fs::path root;

  fs::path dataset() const { return root / "dataset"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path crnn_stem() const { return checkpoints() / "crnn"; }
  fs::path diffusion_stem() const { return checkpoints() / "diffusion"; }
  fs::path recon() const { return root / "recon"; }
  fs::path recon(std::uint64_t id) const { return recon() / ("seq" + std::to_string(id)); }
  fs::path metrics() const { return root / "metrics"; }
  fs::path report() const { return root / "report"; }
  fs::path manifest() const { return root / "manifest.json"; }
};

/// Method names as they appear in tables, with file-name slugs.
struct Method
{
  std::string name, slug;
  std::optional<SamplingMode> mode;
};

inline std::vector<Method> methods_for(ExperimentConfig const &c)
{
  std::vector<Method> out{{"Zero-filled", "zero_filled", std::nullopt}, {"res-CRNN", "res_crnn", std::nullopt}};
  for (auto m : {SamplingMode::Single, SamplingMode::Avg, SamplingMode::Pair}) {
    if (c.sampling.has(m)) { out.push_back({"Diff-" + to_string(m), "diff_" + to_string(m), m}); }
  }
  return out;
}

/// Configuration with every model seed filled in from master_seed.
inline ExperimentConfig resolve_seeds(ExperimentConfig c)
{
  SeedPlan const s{c.master_seed};
  c.phantom.seed = 0;
  c.crnn.seed = s.crnn();
  c.stunet.seed = s.stunet();
  c.diffusion_training.seed = s.diffusion_training();
  return c;
}

/// Run manifest: fingerprints, code version, stage timings, checkpoints, artifacts and seeds.
class RunManifest
{
public:
  RunManifest(ExperimentConfig const &c, RunOptions const &o)
    : path_(RunLayout{o.out}.manifest())
  {
    auto const fp = fingerprints(c);
    if (fs::exists(path_)) {
      j_ = read_json(path_);
      if (j_.value("config_fingerprint", "") != fp.experiment) { j_ = json(); }
    }
    if (j_.is_null()) {
      j_ = {{"format", "cinediff-manifest"}, {"stages", json::object()}, {"checkpoints", json::object()}};
    }
    auto const r = resolve_seeds(c);
    j_["config_fingerprint"] = fp.experiment;
    j_["fingerprints"] = {{"data", fp.data}, {"crnn", fp.crnn}, {"diffusion", fp.diffusion}};
    j_["code_version"] = CINEDIFF_VERSION;
    j_["config"] = to_json(c);
    j_["reference_mode"] = o.reference_mode;
    j_["threads"] = 1;
    j_["seeds"] = {{"master", c.master_seed},
                   {"crnn_init", r.crnn.seed},
                   {"stunet_init", r.stunet.seed},
                   {"diffusion_training", r.diffusion_training.seed},
                   {"per_sequence", "derive_seed(derive_seed(master, 1000 + id), stream); streams phantom=1, "
                                    "reference_noise=2, mask=3, kspace_noise=4, sampling=5"}};
  }

  json const &data() const { return j_; }
  fs::path const &path() const { return path_; }

  void record_stage(std::string const &name,
                    double seconds,
                    std::string const &fingerprint,
                    std::vector<fs::path> const &artifacts)
  {
    json a = json::array();
    for (auto const &p : artifacts) {
      a.push_back({{"path", fs::relative(p, path_.parent_path()).generic_string()}, {"digest", file_digest(p)}});
    }
    j_["stages"][name] = {{"seconds", seconds}, {"fingerprint", fingerprint}, {"artifacts", a}};
  }

  void record_checkpoint(std::string const &name, fs::path const &stem)
  {
    j_["checkpoints"][name] = fs::relative(stem, path_.parent_path()).generic_string();
  }

  void save() const { write_json(path_, j_); }

private:
  fs::path path_;
  json j_;
};

namespace detail {

class StageTimer
{
public:
  StageTimer()
    : t0_(std::chrono::steady_clock::now())
  {
  }
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
  std::chrono::steady_clock::time_point t0_;
};

inline json metric_value(double v)
{
  if (std::isfinite(v)) { return v; }
  return format_metric(v);
}

inline double metric_value(json const &j)
{
  if (j.is_number()) { return j.get<double>(); }
  auto const s = j.get<std::string>();
  if (s == "inf") { return std::numeric_limits<double>::infinity(); }
  if (s == "-inf") { return -std::numeric_limits<double>::infinity(); }
  throw DataError("bad metric value '" + s + "'");
}

template <typename Real>
json metric_triple(ComplexStack<Real> const &x, ComplexStack<Real> const &ref)
{
  return {{"nmse", metric_value(nmse(x, ref))}, {"psnr_db", metric_value(psnr(x, ref))}, {"ssim", metric_value(ssim(x, ref))}};
}

inline std::vector<fs::path> files_under(fs::path const &dir)
{
  std::vector<fs::path> out;
  for (auto const &e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) { out.push_back(e.path()); }
  }
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace detail

// ---------------------------------------------------------------------------------------------------
// Stage: dataset generation

inline void stage_gen_data(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  RunManifest m(c, o);
  *o.log << "[gen-data] " << c.n_train << "/" << c.n_val << "/" << c.n_test << " sequences -> " << L.dataset()
         << "\n";
  generate_dataset(c, L.dataset());
  m.record_stage("gen-data", timer.seconds(), fingerprints(c).data, {L.dataset() / "index.json"});
  m.save();
}

// ---------------------------------------------------------------------------------------------------
// Stage: baseline training

inline CRNN<float> load_crnn(ExperimentConfig const &c, RunLayout const &L)
{
  CRNN<float> net(resolve_seeds(c).crnn);
  if (!fs::exists(L.crnn_stem().string() + ".json")) {
    throw IoError("no baseline checkpoint in '" + L.checkpoints().string() + "' (run train-baseline first)");
  }
  load_checkpoint(L.crnn_stem(), net.params(), fingerprints(c).crnn);
  return net;
}

inline std::vector<CRNNExample<float>> crnn_examples(std::vector<StoredSequence> const &seqs)
{
  std::vector<CRNNExample<float>> out;
  for (auto const &s : seqs) { out.push_back({s.k, s.reference}); }
  return out;
}

inline void stage_train_baseline(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  auto const fp = fingerprints(c);
  Dataset const ds(L.dataset(), fp.data);
  RunManifest m(c, o);
  auto const r = resolve_seeds(c);
  CRNN<float> net(r.crnn);
  *o.log << "[train-baseline] " << net.parameter_count() << " parameters, " << c.crnn.epochs << " epochs\n";
  auto const train = crnn_examples(ds.load_split("train"));
  auto const log = crnn_train(net, train);
  double const val = crnn_dataset_loss(net, crnn_examples(ds.load_split("val")));
  *o.log << "[train-baseline] loss " << log.loss_history.front() << " -> " << log.loss_history.back()
         << ", validation " << val << "\n";
  fs::create_directories(L.checkpoints());
  save_checkpoint(L.crnn_stem(), net.params(), fp.crnn, r.crnn.seed, log,
                  {{"model", "res-crnn"}, {"config", to_json(c.crnn)}, {"validation_loss", val}});
  m.record_checkpoint("crnn", L.crnn_stem());
  m.record_stage("train-baseline", timer.seconds(), fp.crnn,
                 {L.crnn_stem().string() + ".bin", L.crnn_stem().string() + ".json"});
  m.save();
}

// ---------------------------------------------------------------------------------------------------
// Stage: diffusion training

inline std::vector<DiffusionExample<float>> diffusion_examples(CRNN<float> const &crnn,
                                                               std::vector<StoredSequence> const &seqs,
                                                               bool residual)
{
  std::vector<DiffusionExample<float>> out;
  for (auto const &s : seqs) {
    auto const base = crnn.reconstruct(s.k, s.truth);
    out.push_back(make_diffusion_example<float>(s.k, base.images, s.reference.images, residual));
  }
  return out;
}

inline STUNet<float> load_stunet(ExperimentConfig const &c, RunLayout const &L)
{
  STUNet<float> net(resolve_seeds(c).stunet);
  if (!fs::exists(L.diffusion_stem().string() + ".json")) {
    throw IoError("no diffusion checkpoint in '" + L.checkpoints().string() + "' (run train-diffusion first)");
  }
  load_checkpoint(L.diffusion_stem(), net.params(), fingerprints(c).diffusion);
  return net;
}

inline void stage_train_diffusion(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  auto const fp = fingerprints(c);
  Dataset const ds(L.dataset(), fp.data);
  RunManifest m(c, o);
  auto const r = resolve_seeds(c);
  auto const crnn = load_crnn(c, L);
  auto const sched = c.schedule.build();
  auto const train = diffusion_examples(crnn, ds.load_split("train"), c.diffusion_training.residual);
  auto const val = diffusion_examples(crnn, ds.load_split("val"), c.diffusion_training.residual);
  STUNet<float> net(r.stunet);
  *o.log << "[train-diffusion] " << net.parameter_count() << " parameters, " << c.diffusion_training.steps
         << " steps, " << sched.n_steps << "-step schedule\n";
  auto const log = train_diffusion(net, train, sched, r.diffusion_training);
  auto const &dt = r.diffusion_training;
  double const val_probe = diffusion_probe_loss(net, val, sched, dt.prediction, dt.crop, dt.probe_count, derive_seed(dt.seed, 7));
  *o.log << "[train-diffusion] probe loss " << log.probe_before << " -> " << log.probe_after << ", validation "
         << val_probe << "\n";
  fs::create_directories(L.checkpoints());
  save_checkpoint(L.diffusion_stem(), net.params(), fp.diffusion, r.stunet.seed, log,
                  {{"model", "stunet"},
                   {"config", to_json(c.stunet)},
                   {"schedule", to_json(c.schedule)},
                   {"training", to_json(c.diffusion_training)},
                   {"training_seed", dt.seed},
                   {"validation_probe_loss", val_probe}});
  m.record_checkpoint("diffusion", L.diffusion_stem());
  m.record_stage("train-diffusion", timer.seconds(), fp.diffusion,
                 {L.diffusion_stem().string() + ".bin", L.diffusion_stem().string() + ".json"});
  m.save();
}

// ---------------------------------------------------------------------------------------------------
// Stage: reconstruction of the test split

/// Ensembles of one test sequence, in normalized units, keyed by sampling mode.
struct DiffusionEnsembles
{
  std::map<SamplingMode, std::vector<Tensor<float>>> members;
  std::map<SamplingMode, json> seeds;
  std::vector<PairedSample<float>> pairs;
};

/// Trajectory seed j of a sequence's sampling stream.
inline std::uint64_t trajectory_seed(std::uint64_t sampling_seed, int j)
{
  return derive_seed(sampling_seed, std::uint64_t(j));
}

/// Draws n independent singles (2n when Diff-avg is requested), forms Diff-avg from disjoint
/// consecutive pairs of singles and Diff-pair from each of the first n singles and the run driven by
/// its negated trajectory.
template <Denoiser<float> D>
DiffusionEnsembles sample_ensembles(D const &net,
                                    Condition<float> const &cond,
                                    NoiseSchedule const &s,
                                    SamplingConfig const &sc,
                                    std::uint64_t sampling_seed)
{
  int const n = sc.n_seeds;
  int const n_singles = sc.has(SamplingMode::Avg) ? 2 * n : n;
  std::vector<Tensor<float>> singles;
  for (int j = 0; j < n_singles; ++j) {
    singles.push_back(sample_single(net, cond, s, trajectory_seed(sampling_seed, j)));
  }
  DiffusionEnsembles e;
  if (sc.has(SamplingMode::Single)) {
    e.members[SamplingMode::Single].assign(singles.begin(), singles.begin() + n);
    for (int j = 0; j < n; ++j) { e.seeds[SamplingMode::Single].push_back(trajectory_seed(sampling_seed, j)); }
  }
  if (sc.has(SamplingMode::Avg)) {
    for (int j = 0; j < n; ++j) {
      e.members[SamplingMode::Avg].push_back(mean_of(singles[2 * j], singles[2 * j + 1]));
      e.seeds[SamplingMode::Avg].push_back(
        {trajectory_seed(sampling_seed, 2 * j), trajectory_seed(sampling_seed, 2 * j + 1)});
    }
  }
  if (sc.has(SamplingMode::Pair)) {
    for (int j = 0; j < n; ++j) {
      auto const seed = trajectory_seed(sampling_seed, j);
      auto const z = NoiseTrajectory<float>::draw(seed, cond.image_shape(), s.n_steps);
      e.pairs.push_back(make_pair(singles[j], ancestral_sample(net, cond, s, z.negate()), seed));
      e.members[SamplingMode::Pair].push_back(e.pairs.back().x_pair);
      e.seeds[SamplingMode::Pair].push_back(seed);
    }
  }
  return e;
}

/// Adds `offset` to every member and pair of an ensemble.
inline void shift_ensembles(DiffusionEnsembles &e, Tensor<float> const &offset)
{
  for (auto &[mode, members] : e.members) {
    for (auto &x : members) { x += offset; }
  }
  for (auto &p : e.pairs) {
    p.x_pos += offset;
    p.x_neg += offset;
    p.x_pair += offset;
  }
}

inline json reconstruct_sequence(ExperimentConfig const &c,
                                 CRNN<float> const &crnn,
                                 STUNet<float> const &net,
                                 NoiseSchedule const &sched,
                                 StoredSequence const &seq,
                                 fs::path const &dir,
                                 std::string const &fingerprint)
{
  fs::create_directories(dir);
  auto const zf = zero_filled(seq.k);
  auto const base = crnn.reconstruct(seq.k, seq.truth).images;
  auto const cond = build_condition<float>(seq.k, base);
  auto const sampling_seed = seq.meta.at("seeds").at("sampling").get<std::uint64_t>();

  json j;
  j["id"] = seq.id;
  j["fingerprint"] = fingerprint;
  j["normalization_scale"] = cond.normalization_scale;
  j["sampling_seed"] = sampling_seed;
  j["ensemble_size"] = c.sampling.n_seeds;
  double const hf_truth = high_frequency_energy(seq.truth.images);
  j["high_frequency_energy"] = {{"ground_truth", hf_truth},
                                {"zero_filled", high_frequency_energy(zf)},
                                {"res_crnn", high_frequency_energy(base)}};
  j["high_frequency_ratio"] = {{"zero_filled", high_frequency_energy(zf) / hf_truth},
                               {"res_crnn", high_frequency_energy(base) / hf_truth}};

  auto member_json = [&](ComplexStack<float> const &x) {
    return json{{"truth", detail::metric_triple(x, seq.truth.images)},
                {"reference", detail::metric_triple(x, seq.reference.images)}};
  };
  for (auto const &[name, slug, img] :
       {std::tuple{"Zero-filled", "zero_filled", &zf}, std::tuple{"res-CRNN", "res_crnn", &base}}) {
    write_array(dir / (std::string(slug) + ".cinearr"), to_raw(*img));
    j["methods"][name] = {{"file", std::string(slug) + ".cinearr"}, {"members", {member_json(*img)}}};
  }

  ModelDenoiser<float> const den{&net, &sched, c.diffusion_training.prediction};
  auto ens = sample_ensembles(den, cond, sched, c.sampling, sampling_seed);
  if (c.diffusion_training.residual) { shift_ensembles(ens, baseline_channels(cond)); }
  for (auto const &m : methods_for(c)) {
    if (!m.mode) { continue; }
    auto const &members = ens.members.at(*m.mode);
    json entry;
    entry["file"] = m.slug + ".cinearr";
    entry["members"] = json::array();
    for (std::size_t i = 0; i < members.size(); ++i) {
      auto const img = denormalize<float>(members[i], cond);
      if (i == 0) { write_array(dir / (m.slug + ".cinearr"), to_raw(img)); }
      auto mj = member_json(img);
      mj["seeds"] = ens.seeds.at(*m.mode)[i];
      entry["members"].push_back(mj);
    }
    entry["median_pixel_std"] = median(pixelwise_std(members)) * cond.normalization_scale;
    j["methods"][m.name] = entry;
  }
  if (!ens.pairs.empty()) {
    auto truth = to_channels<float>(seq.truth.images);
    truth *= float(1.0 / cond.normalization_scale);
    auto const corr = noise_component_correlation(ens.pairs, &truth);
    j["noise_correlation"] = {{"construction", corr.construction}, {"vs_ground_truth", *corr.vs_reference}};
  }
  write_json(dir / "ensemble.json", j);
  return j;
}

inline void stage_reconstruct(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  auto const fp = fingerprints(c);
  Dataset const ds(L.dataset(), fp.data);
  RunManifest m(c, o);
  auto const crnn = load_crnn(c, L);
  auto const net = load_stunet(c, L);
  auto const sched = c.schedule.build();
  auto const ids = ds.ids("test");
  std::vector<fs::path> artifacts;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::StageTimer t;
    auto const seq = ds.load(ids[i]);
    reconstruct_sequence(c, crnn, net, sched, seq, L.recon(ids[i]), fp.diffusion);
    *o.log << "[reconstruct] sequence " << ids[i] << " (" << i + 1 << "/" << ids.size() << ") " << t.seconds()
           << " s\n";
    artifacts.push_back(L.recon(ids[i]) / "ensemble.json");
  }
  m.record_stage("reconstruct", timer.seconds(), fp.diffusion, artifacts);
  m.save();
}

// ---------------------------------------------------------------------------------------------------
// Stage: evaluation

/// Mean over a method's ensemble members of each metric against `against` ("truth" or "reference").
inline MetricRow mean_member_metrics(json const &method, std::string const &against)
{
  MetricRow r;
  auto const &members = method.at("members");
  for (auto const &mem : members) {
    auto const &t = mem.at(against);
    r.nmse += detail::metric_value(t.at("nmse"));
    r.psnr_db += detail::metric_value(t.at("psnr_db"));
    r.ssim += detail::metric_value(t.at("ssim"));
  }
  double const n = double(members.size());
  r.nmse /= n;
  r.psnr_db /= n;
  r.ssim /= n;
  return r;
}

struct EvaluationResult
{
  MetricsReport truth, reference;
  json summary;
};

inline EvaluationResult evaluate_run(ExperimentConfig const &c, RunLayout const &L)
{
  auto const fp = fingerprints(c);
  Dataset const ds(L.dataset(), fp.data);
  auto const methods = methods_for(c);
  EvaluationResult out;
  out.truth.reference = "ground_truth";
  out.reference.reference = "noisy_reference";
  for (auto const &m : methods) {
    out.truth.methods.push_back(m.name);
    out.reference.methods.push_back(m.name);
  }
  std::map<std::string, std::vector<double>> stds;
  std::vector<double> hf_crnn, hf_zf, corr;
  json per_sequence = json::array();
  for (auto id : ds.ids("test")) {
    auto const f = L.recon(id) / "ensemble.json";
    if (!fs::exists(f)) { throw IoError("missing reconstruction '" + f.string() + "' (run reconstruct first)"); }
    auto const e = read_json(f);
    if (e.value("fingerprint", "") != fp.diffusion) {
      throw ParameterError("reconstruction '" + f.string() + "' was produced with a different configuration");
    }
    for (auto const &m : methods) {
      auto const &mj = e.at("methods").at(m.name);
      for (auto *rep : {&out.truth, &out.reference}) {
        auto row = mean_member_metrics(mj, rep == &out.truth ? "truth" : "reference");
        row.sequence_id = std::to_string(id);
        row.method = m.name;
        rep->per_sequence.push_back(row);
      }
      if (mj.contains("median_pixel_std")) { stds[m.name].push_back(mj.at("median_pixel_std").get<double>()); }
    }
    hf_crnn.push_back(e.at("high_frequency_ratio").at("res_crnn").get<double>());
    hf_zf.push_back(e.at("high_frequency_ratio").at("zero_filled").get<double>());
    json s = {{"id", id}, {"high_frequency_ratio", e.at("high_frequency_ratio")}};
    if (e.contains("noise_correlation")) {
      corr.push_back(e.at("noise_correlation").at("vs_ground_truth").get<double>());
      s["noise_correlation"] = e.at("noise_correlation");
    }
    for (auto const &[name, v] : stds) { s["median_pixel_std"][name] = v.back(); }
    per_sequence.push_back(s);
  }
  out.truth.finalize();
  out.reference.finalize();

  auto mean = [](std::vector<double> const &v) {
    double s = 0;
    for (double x : v) { s += x; }
    return v.empty() ? 0.0 : s / double(v.size());
  };
  json &s = out.summary;
  s["fingerprint"] = fp.diffusion;
  s["n_test"] = ds.ids("test").size();
  s["ensemble_size"] = c.sampling.n_seeds;
  for (auto const &[name, v] : stds) { s["mean_median_pixel_std"][name] = mean(v); }
  s["high_frequency_ratio_mean"] = {{"res_crnn", mean(hf_crnn)}, {"zero_filled", mean(hf_zf)}};
  if (!corr.empty()) { s["noise_correlation_vs_ground_truth_mean"] = mean(corr); }
  s["per_sequence"] = per_sequence;
  return out;
}

inline void stage_evaluate(ExperimentConfig const &c, RunOptions const &o)
{
  detail::StageTimer timer;
  RunLayout const L{o.out};
  RunManifest m(c, o);
  auto const r = evaluate_run(c, L);
  fs::create_directories(L.metrics());
  auto const fp = fingerprints(c).diffusion;
  auto with_fp = [&](json j) {
    j["fingerprint"] = fp;
    return j;
  };
  write_text(L.metrics() / "metrics_ground_truth.csv", r.truth.to_csv());
  write_json(L.metrics() / "metrics_ground_truth.json", with_fp(r.truth.to_json()));
  write_text(L.metrics() / "metrics_noisy_reference.csv", r.reference.to_csv());
  write_json(L.metrics() / "metrics_noisy_reference.json", with_fp(r.reference.to_json()));
  write_json(L.metrics() / "ensemble_summary.json", r.summary);
  for (auto const &name : r.truth.methods) {
    auto const &sm = r.truth.summary.at(name);
    *o.log << "[evaluate] " << name << ": NMSE " << sm.at("nmse").mean << "  PSNR " << sm.at("psnr_db").mean
           << " dB  SSIM " << sm.at("ssim").mean << "\n";
  }
  m.record_stage("evaluate", timer.seconds(), fp, detail::files_under(L.metrics()));
  m.save();
}

} // namespace cinediff
