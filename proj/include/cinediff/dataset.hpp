#pragma once

#include "config.hpp"

namespace cinediff {

inline constexpr char const *kSplitNames[3] = {"train", "val", "test"};

struct SequenceEntry
{
  std::uint64_t id = 0;
  std::string split;
  double acceleration = 0;

  std::string dir_name() const { return "seq" + std::to_string(id); }
};

/// Sequence ids of every split. Ids of split s are s * kSplitStride + i, so splits are disjoint.
inline std::vector<SequenceEntry> plan_sequences(ExperimentConfig const &c)
{
  std::vector<SequenceEntry> out;
  int const counts[3] = {c.n_train, c.n_val, c.n_test};
  for (int s = 0; s < 3; ++s) {
    for (int i = 0; i < counts[s]; ++i) {
      out.push_back({std::uint64_t(s) * SeedPlan::kSplitStride + std::uint64_t(i), kSplitNames[s],
                     c.accelerations[std::size_t(i) % c.accelerations.size()]});
    }
  }
  return out;
}

/// One sequence as simulated: truth, noisy reference and the acquisition.
struct SimulatedSequence
{
  SequenceEntry entry;
  CineSequence truth, reference;
  KSpaceData k;
  json seeds;
};

inline SimulatedSequence simulate_sequence(ExperimentConfig const &c, SequenceEntry const &e)
{
  SeedPlan const seeds{c.master_seed};
  SimulatedSequence s;
  s.entry = e;
  PhantomSpec spec = c.phantom;
  spec.seed = seeds.stream(e.id, SeedPlan::kPhantom);
  s.truth = generate_phantom(spec);
  auto const noise_seed = seeds.stream(e.id, SeedPlan::kReferenceNoise);
  s.reference = add_reference_noise(s.truth, c.reference_noise_sigma, noise_seed);
  auto const mask_seed = seeds.stream(e.id, SeedPlan::kMask);
  auto const mask = make_mask(spec.frames, spec.height, e.acceleration, c.center_lines_for(e.acceleration),
                              c.mask_pattern, mask_seed);
  auto const k_seed = seeds.stream(e.id, SeedPlan::kKspaceNoise);
  s.k = undersample(s.reference, mask, c.kspace_noise_sigma, k_seed);
  s.seeds = {{"phantom", spec.seed},
             {"reference_noise", noise_seed},
             {"mask", mask_seed},
             {"kspace_noise", k_seed},
             {"sampling", seeds.stream(e.id, SeedPlan::kSampling)}};
  return s;
}

inline json sequence_sidecar(ExperimentConfig const &c, SimulatedSequence const &s, std::string const &fingerprint)
{
  return {{"id", s.entry.id},
          {"split", s.entry.split},
          {"fingerprint", fingerprint},
          {"frames", s.truth.frames()},
          {"rows", s.truth.rows()},
          {"cols", s.truth.cols()},
          {"pixel_spacing_mm", s.truth.pixel_spacing_mm},
          {"frame_interval_ms", s.truth.frame_interval_ms},
          {"reference_noise_sigma", c.reference_noise_sigma},
          {"kspace_noise_sigma", c.kspace_noise_sigma},
          {"mask", mask_json(s.k.mask)},
          {"seeds", s.seeds},
          {"files",
           {{"ground_truth", "ground_truth.cinearr"},
            {"reference", "reference.cinearr"},
            {"mask", "mask.cinearr"},
            {"kspace", "kspace.cinearr"}}}};
}

/// Writes every sequence of every split under `dir` plus index.json. Returns the index.
inline json generate_dataset(ExperimentConfig const &c, fs::path const &dir)
{
  c.validate();
  auto const fp = fingerprints(c).data;
  fs::create_directories(dir);
  json index;
  index["format"] = "cinediff-dataset";
  index["fingerprint"] = fp;
  index["master_seed"] = c.master_seed;
  index["splits"] = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
  index["sequences"] = json::array();
  for (auto const &e : plan_sequences(c)) {
    auto const s = simulate_sequence(c, e);
    auto const sd = dir / e.dir_name();
    fs::create_directories(sd);
    write_array(sd / "ground_truth.cinearr", to_raw(s.truth.images));
    write_array(sd / "reference.cinearr", to_raw(s.reference.images));
    write_array(sd / "mask.cinearr", to_raw(s.k.mask));
    write_array(sd / "kspace.cinearr", to_raw(s.k.samples));
    write_json(sd / "sequence.json", sequence_sidecar(c, s, fp));
    index["splits"][e.split].push_back(e.id);
    index["sequences"].push_back(
      {{"id", e.id}, {"split", e.split}, {"dir", e.dir_name()}, {"acceleration", e.acceleration},
       {"measured_R", s.k.mask.measured_R}});
  }
  write_json(dir / "index.json", index);
  return index;
}

/// A stored sequence read back from a dataset directory.
struct StoredSequence
{
  std::uint64_t id = 0;
  std::string split;
  CineSequence truth, reference;
  KSpaceData k;
  json meta;
};

inline StoredSequence load_sequence(fs::path const &dir)
{
  StoredSequence s;
  s.meta = read_json(dir / "sequence.json");
  s.id = s.meta.at("id").get<std::uint64_t>();
  s.split = s.meta.at("split").get<std::string>();
  auto const spacing = s.meta.at("pixel_spacing_mm").get<std::array<double, 2>>();
  double const interval = s.meta.at("frame_interval_ms").get<double>();
  for (auto *seq : {&s.truth, &s.reference}) {
    seq->pixel_spacing_mm = spacing;
    seq->frame_interval_ms = interval;
  }
  s.truth.images = complex_from_raw(read_array(dir / "ground_truth.cinearr"));
  s.reference.images = complex_from_raw(read_array(dir / "reference.cinearr"));
  s.k.mask = mask_from_raw(read_array(dir / "mask.cinearr"), s.meta.at("mask"));
  s.k.samples = complex_from_raw(read_array(dir / "kspace.cinearr"));
  s.k.noise_sigma = s.meta.at("kspace_noise_sigma").get<double>();
  s.truth.validate();
  s.reference.validate();
  s.truth.images.check_same(s.reference.images);
  s.k.validate();
  return s;
}

/// Opens a dataset and checks that it was generated by a configuration with `fingerprint`.
class Dataset
{
public:
  Dataset(fs::path dir, std::string const &fingerprint)
    : dir_(std::move(dir))
  {
    if (!fs::exists(dir_ / "index.json")) {
      throw IoError("no dataset at '" + dir_.string() + "' (run gen-data first)");
    }
    index_ = read_json(dir_ / "index.json");
    if (index_.value("fingerprint", "") != fingerprint) {
      throw ParameterError("dataset at '" + dir_.string() + "' was generated with a different configuration");
    }
  }

  json const &index() const { return index_; }

  std::vector<std::uint64_t> ids(std::string const &split) const
  {
    return index_.at("splits").at(split).get<std::vector<std::uint64_t>>();
  }

  StoredSequence load(std::uint64_t id) const { return load_sequence(dir_ / ("seq" + std::to_string(id))); }

  std::vector<StoredSequence> load_split(std::string const &split) const
  {
    std::vector<StoredSequence> out;
    for (auto id : ids(split)) { out.push_back(load(id)); }
    return out;
  }

private:
  fs::path dir_;
  json index_;
};

} // namespace cinediff
