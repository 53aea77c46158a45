#pragma once

#include "crnn.hpp"
#include "diffusion_train.hpp"
#include "io.hpp"
#include "phantom.hpp"

#include <set>

namespace cinediff {

enum class SamplingMode
{
  Single,
  Avg,
  Pair
};

inline std::string to_string(SamplingMode m)
{
  switch (m) {
    case SamplingMode::Single: return "single";
    case SamplingMode::Avg: return "avg";
    case SamplingMode::Pair: return "pair";
  }
  return "?";
}

inline SamplingMode parse_sampling_mode(std::string const &s)
{
  if (s == "single") { return SamplingMode::Single; }
  if (s == "avg") { return SamplingMode::Avg; }
  if (s == "pair") { return SamplingMode::Pair; }
  throw ParameterError("unknown sampling mode '" + s + "'");
}

struct ScheduleConfig
{
  int n_steps = 200;
  double beta_min = 0; // 0 selects the step-count-scaled default
  double beta_max = 0;

  NoiseSchedule build() const
  {
    if (beta_min == 0 && beta_max == 0) { return default_schedule(n_steps); }
    return make_schedule(n_steps, beta_min, beta_max);
  }
};

struct SamplingConfig
{
  std::vector<SamplingMode> modes{SamplingMode::Single, SamplingMode::Avg, SamplingMode::Pair};
  int n_seeds = 16; // ensemble size per mode and test sequence

  bool has(SamplingMode m) const { return std::find(modes.begin(), modes.end(), m) != modes.end(); }
};

struct ExperimentConfig
{
  std::uint64_t master_seed = 2024;
  int n_train = 60, n_val = 20, n_test = 20;
  PhantomSpec phantom;
  std::vector<double> accelerations{8, 12, 16};
  int center_lines = 4;
  MaskPattern mask_pattern = MaskPattern::UniformInterleaved;
  double reference_noise_sigma = 0.03;
  double kspace_noise_sigma = 0;
  CRNNConfig crnn;
  STUNetConfig stunet;
  ScheduleConfig schedule;
  DiffusionTrainConfig diffusion_training;
  SamplingConfig sampling;
  std::string output_dir = "run";

  void validate() const
  {
    require(n_train >= 1 && n_val >= 1 && n_test >= 1, "split counts must be at least 1");
    require(!accelerations.empty(), "acceleration list must not be empty");
    require(center_lines >= 0, "center_lines must be nonnegative");
    require(reference_noise_sigma >= 0 && kspace_noise_sigma >= 0, "noise levels must be nonnegative");
    require(sampling.n_seeds >= 2, "sampling.n_seeds must be at least 2");
    require(!sampling.modes.empty(), "sampling.modes must not be empty");
    auto p = phantom;
    p.validate();
    crnn.validate();
    stunet.validate();
    require(phantom.frames <= stunet.max_frames, "phantom frames exceed stunet.max_frames");
    int const f = 1 << stunet.depth;
    require(phantom.height % f == 0 && phantom.width % f == 0, "frame size must be divisible by 2^depth");
    diffusion_training.validate();
    require(diffusion_training.crop == 0 || diffusion_training.crop % f == 0, "crop must be divisible by 2^depth");
    require(diffusion_training.crop <= std::min(phantom.height, phantom.width), "crop exceeds the frame size");
    auto const s = schedule.build();
    require(s.suitable_for_sampling(), "schedule endpoints unsuitable for sampling (need alpha_bar_1 > 0.9 and "
                                       "alpha_bar_N < 0.05)");
    for (double r : accelerations) {
      (void)make_mask(phantom.frames, phantom.height, r, center_lines_for(r), mask_pattern, 0);
    }
  }

  /// Fully sampled center block actually used at acceleration r: the configured count, capped at half
  /// of the lines a frame receives so every frame keeps outer lines.
  int center_lines_for(double r) const
  {
    long const per_frame = std::lround(double(phantom.height) / r);
    return int(std::min<long>(center_lines, per_frame / 2));
  }
};

namespace detail {

// Reads keys from a JSON object and rejects keys nobody asked for.
class KeyReader
{
public:
  KeyReader(json const &j, std::string where)
    : j_(j)
    , where_(std::move(where))
  {
    if (!j_.is_object()) { throw ParameterError(where_ + " must be a JSON object"); }
  }

  template <typename T>
  void get(char const *key, T &out)
  {
    seen_.insert(key);
    if (!j_.contains(key)) { return; }
    try {
      out = j_.at(key).get<T>();
    } catch (json::exception const &e) {
      throw ParameterError(where_ + "." + key + ": " + e.what());
    }
  }

  json const *sub(char const *key)
  {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const
  {
    for (auto const &[k, v] : j_.items()) {
      if (!seen_.count(k)) { throw ParameterError("unknown configuration key '" + where_ + "." + k + "'"); }
    }
  }

private:
  json const &j_;
  std::string where_;
  std::set<std::string> seen_;
};

} // namespace detail

inline json to_json(PhantomSpec const &p)
{
  return {{"frames", p.frames},
          {"height", p.height},
          {"width", p.width},
          {"n_ellipses", p.n_ellipses},
          {"cardiac_period", p.cardiac_period},
          {"contraction_amplitude", p.contraction_amplitude},
          {"background_texture_scale", p.background_texture_scale},
          {"intensity_range", p.intensity_range},
          {"pixel_spacing_mm", p.pixel_spacing_mm},
          {"frame_interval_ms", p.frame_interval_ms}};
}

inline json to_json(CRNNConfig const &c)
{
  return {{"n_iterations", c.n_iterations},     {"hidden_channels", c.hidden_channels},
          {"spatial_kernel", c.spatial_kernel}, {"temporal_kernel", c.temporal_kernel},
          {"learning_rate", c.learning_rate},   {"epochs", c.epochs},
          {"batch_size", c.batch_size}};
}

inline json to_json(STUNetConfig const &c)
{
  return {{"base_channels", c.base_channels},
          {"depth", c.depth},
          {"temporal_kernel", c.temporal_kernel},
          {"attention_heads", c.attention_heads},
          {"time_embedding_dim", c.time_embedding_dim},
          {"groups", c.groups},
          {"max_frames", c.max_frames},
          {"position_embedding", c.position_embedding}};
}

inline json to_json(ScheduleConfig const &s)
{
  auto const b = s.build();
  return {{"n_steps", s.n_steps}, {"beta_min", b.beta_min}, {"beta_max", b.beta_max}, {"kind", "linear"}};
}

inline json to_json(DiffusionTrainConfig const &d)
{
  return {{"prediction", to_string(d.prediction)},
          {"residual", d.residual},
          {"steps", d.steps},
          {"learning_rate", d.learning_rate},
          {"crop", d.crop},
          {"log_every", d.log_every},
          {"probe_count", d.probe_count}};
}

inline json to_json(ExperimentConfig const &c)
{
  json modes = json::array();
  for (auto m : c.sampling.modes) { modes.push_back(to_string(m)); }
  return {{"master_seed", c.master_seed},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"phantom", to_json(c.phantom)},
          {"accelerations", c.accelerations},
          {"center_lines", c.center_lines},
          {"mask_pattern", to_string(c.mask_pattern)},
          {"reference_noise_sigma", c.reference_noise_sigma},
          {"kspace_noise_sigma", c.kspace_noise_sigma},
          {"crnn", to_json(c.crnn)},
          {"stunet", to_json(c.stunet)},
          {"schedule", to_json(c.schedule)},
          {"diffusion_training", to_json(c.diffusion_training)},
          {"sampling", {{"modes", modes}, {"n_seeds", c.sampling.n_seeds}}},
          {"output_dir", c.output_dir}};
}

/// Parses a configuration; absent keys keep their defaults, unknown keys are errors.
inline ExperimentConfig config_from_json(json const &j)
{
  ExperimentConfig c;
  detail::KeyReader r(j, "config");
  r.get("master_seed", c.master_seed);
  r.get("n_train", c.n_train);
  r.get("n_val", c.n_val);
  r.get("n_test", c.n_test);
  r.get("accelerations", c.accelerations);
  r.get("center_lines", c.center_lines);
  std::string pattern = to_string(c.mask_pattern);
  r.get("mask_pattern", pattern);
  c.mask_pattern = parse_mask_pattern(pattern);
  r.get("reference_noise_sigma", c.reference_noise_sigma);
  r.get("kspace_noise_sigma", c.kspace_noise_sigma);
  r.get("output_dir", c.output_dir);
  if (auto const *p = r.sub("phantom")) {
    detail::KeyReader q(*p, "phantom");
    auto &s = c.phantom;
    q.get("frames", s.frames);
    q.get("height", s.height);
    q.get("width", s.width);
    q.get("n_ellipses", s.n_ellipses);
    q.get("cardiac_period", s.cardiac_period);
    q.get("contraction_amplitude", s.contraction_amplitude);
    q.get("background_texture_scale", s.background_texture_scale);
    q.get("intensity_range", s.intensity_range);
    q.get("pixel_spacing_mm", s.pixel_spacing_mm);
    q.get("frame_interval_ms", s.frame_interval_ms);
    q.finish();
  }
  if (auto const *p = r.sub("crnn")) {
    detail::KeyReader q(*p, "crnn");
    auto &s = c.crnn;
    q.get("n_iterations", s.n_iterations);
    q.get("hidden_channels", s.hidden_channels);
    q.get("spatial_kernel", s.spatial_kernel);
    q.get("temporal_kernel", s.temporal_kernel);
    q.get("learning_rate", s.learning_rate);
    q.get("epochs", s.epochs);
    q.get("batch_size", s.batch_size);
    q.finish();
  }
  if (auto const *p = r.sub("stunet")) {
    detail::KeyReader q(*p, "stunet");
    auto &s = c.stunet;
    q.get("base_channels", s.base_channels);
    q.get("depth", s.depth);
    q.get("temporal_kernel", s.temporal_kernel);
    q.get("attention_heads", s.attention_heads);
    q.get("time_embedding_dim", s.time_embedding_dim);
    q.get("groups", s.groups);
    q.get("max_frames", s.max_frames);
    q.get("position_embedding", s.position_embedding);
    q.finish();
  }
  if (auto const *p = r.sub("schedule")) {
    detail::KeyReader q(*p, "schedule");
    std::string kind = "linear";
    q.get("n_steps", c.schedule.n_steps);
    q.get("beta_min", c.schedule.beta_min);
    q.get("beta_max", c.schedule.beta_max);
    q.get("kind", kind);
    require(kind == "linear", "only the linear schedule kind is supported");
    q.finish();
  }
  if (auto const *p = r.sub("diffusion_training")) {
    detail::KeyReader q(*p, "diffusion_training");
    auto &s = c.diffusion_training;
    std::string prediction = to_string(s.prediction);
    q.get("prediction", prediction);
    s.prediction = parse_prediction(prediction);
    q.get("residual", s.residual);
    q.get("steps", s.steps);
    q.get("learning_rate", s.learning_rate);
    q.get("crop", s.crop);
    q.get("log_every", s.log_every);
    q.get("probe_count", s.probe_count);
    q.finish();
  }
  if (auto const *p = r.sub("sampling")) {
    detail::KeyReader q(*p, "sampling");
    std::vector<std::string> modes;
    q.get("modes", modes);
    if (p->contains("modes")) {
      c.sampling.modes.clear();
      for (auto const &m : modes) { c.sampling.modes.push_back(parse_sampling_mode(m)); }
    }
    q.get("n_seeds", c.sampling.n_seeds);
    q.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_config(fs::path const &path) { return config_from_json(read_json(path)); }

/// Model seeds and stream indices, all derived from master_seed.
struct SeedPlan
{
  static constexpr std::uint64_t kPhantom = 1, kReferenceNoise = 2, kMask = 3, kKspaceNoise = 4, kSampling = 5;
  static constexpr std::uint64_t kCrnn = 101, kStunet = 102, kDiffusionTraining = 103;
  // Sequence ids: split index times kSplitStride plus position, so splits never share a seed.
  static constexpr std::uint64_t kSplitStride = 1'000'000;

  std::uint64_t master = 0;

  std::uint64_t sequence(std::uint64_t id) const { return derive_seed(master, 1'000 + id); }
  std::uint64_t stream(std::uint64_t id, std::uint64_t s) const { return derive_seed(sequence(id), s); }
  std::uint64_t crnn() const { return derive_seed(master, kCrnn); }
  std::uint64_t stunet() const { return derive_seed(master, kStunet); }
  std::uint64_t diffusion_training() const { return derive_seed(master, kDiffusionTraining); }
};

/// Stage fingerprints. Each covers everything its stage's output depends on, so a checkpoint is only
/// accepted by a configuration that would have produced it.
struct Fingerprints
{
  std::string data, crnn, diffusion, experiment;
};

inline Fingerprints fingerprints(ExperimentConfig const &c)
{
  auto const j = to_json(c);
  json data = {{"master_seed", c.master_seed},
               {"n_train", c.n_train},
               {"n_val", c.n_val},
               {"n_test", c.n_test},
               {"phantom", j["phantom"]},
               {"accelerations", j["accelerations"]},
               {"center_lines", c.center_lines},
               {"mask_pattern", j["mask_pattern"]},
               {"reference_noise_sigma", c.reference_noise_sigma},
               {"kspace_noise_sigma", c.kspace_noise_sigma}};
  Fingerprints f;
  f.data = fingerprint_of(data.dump());
  f.crnn = fingerprint_of(f.data + c.crnn.fingerprint() + j["crnn"].dump());
  f.diffusion = fingerprint_of(f.crnn + c.stunet.fingerprint() + j["stunet"].dump() + j["schedule"].dump() +
                               j["diffusion_training"].dump());
  json rest = j;
  rest.erase("output_dir");
  f.experiment = fingerprint_of(rest.dump());
  return f;
}

} // namespace cinediff
