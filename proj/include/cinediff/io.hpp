#pragma once

#include "kspace.hpp"
#include "nn/params.hpp"
#include "training_log.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>

namespace cinediff {

namespace fs = std::filesystem;
using json = nlohmann::json;

/// Element type codes of the CINEARR container.
enum class ArrayDtype : std::uint8_t
{
  Complex64 = 0, // interleaved little-endian float32 (re, im)
  Float32 = 1,
  UInt8 = 2
};

inline std::size_t dtype_size(ArrayDtype d)
{
  switch (d) {
  case ArrayDtype::Complex64: return 8;
  case ArrayDtype::Float32: return 4;
  case ArrayDtype::UInt8: return 1;
  }
  throw DataError("unknown CINEARR dtype");
}

/// In-memory CINEARR payload: dims (outermost first), dtype and raw little-endian bytes.
struct RawArray
{
  std::vector<std::uint64_t> dims;
  ArrayDtype dtype = ArrayDtype::Float32;
  std::vector<std::uint8_t> bytes;

  std::uint64_t count() const
  {
    std::uint64_t n = 1;
    for (auto d : dims) { n *= d; }
    return n;
  }
};

inline constexpr char kArrayMagic[8] = {'C', 'I', 'N', 'E', 'A', 'R', 'R', '\0'};
inline constexpr std::uint32_t kArrayVersion = 1;

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t> &out, U v)
{
  for (std::size_t i = 0; i < sizeof(U); ++i) { out.push_back(std::uint8_t(std::uint64_t(v) >> (8 * i))); }
}

template <typename U>
U get_le(std::uint8_t const *p)
{
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) { v |= std::uint64_t(p[i]) << (8 * i); }
  return U(v);
}

inline void float_to_le(float f, std::uint8_t *out)
{
  auto const u = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) { out[i] = std::uint8_t(u >> (8 * i)); }
}

inline float float_from_le(std::uint8_t const *p) { return std::bit_cast<float>(get_le<std::uint32_t>(p)); }

inline std::vector<std::uint8_t> read_file(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw IoError("cannot open '" + path.string() + "' for reading"); }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(fs::path const &path, std::vector<std::uint8_t> const &bytes)
{
  if (path.has_parent_path()) { fs::create_directories(path.parent_path()); }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) { throw IoError("cannot open '" + path.string() + "' for writing"); }
  out.write(reinterpret_cast<char const *>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) { throw IoError("write to '" + path.string() + "' failed"); }
}

} // namespace detail

inline void write_array(fs::path const &path, RawArray const &a)
{
  require(a.bytes.size() == a.count() * dtype_size(a.dtype), "CINEARR payload size does not match dims");
  std::vector<std::uint8_t> out(kArrayMagic, kArrayMagic + 8);
  detail::put_le<std::uint32_t>(out, kArrayVersion);
  detail::put_le<std::uint32_t>(out, std::uint32_t(a.dims.size()));
  for (auto d : a.dims) { detail::put_le<std::uint64_t>(out, d); }
  out.push_back(std::uint8_t(a.dtype));
  out.insert(out.end(), a.bytes.begin(), a.bytes.end());
  detail::write_file(path, out);
}

inline RawArray read_array(fs::path const &path)
{
  auto const b = detail::read_file(path);
  auto fail = [&](std::string const &why) { return DataError("'" + path.string() + "' is not a valid CINEARR file: " + why); };
  if (b.size() < 17 || std::memcmp(b.data(), kArrayMagic, 8) != 0) { throw fail("bad magic"); }
  if (detail::get_le<std::uint32_t>(b.data() + 8) != kArrayVersion) { throw fail("unsupported version"); }
  auto const ndim = detail::get_le<std::uint32_t>(b.data() + 12);
  std::size_t off = 16;
  if (ndim > 16 || b.size() < off + 8 * ndim + 1) { throw fail("truncated header"); }
  RawArray a;
  for (std::uint32_t i = 0; i < ndim; ++i, off += 8) { a.dims.push_back(detail::get_le<std::uint64_t>(b.data() + off)); }
  std::uint8_t const code = b[off++];
  if (code > 2) { throw fail("unknown dtype " + std::to_string(code)); }
  a.dtype = ArrayDtype(code);
  if (b.size() - off != a.count() * dtype_size(a.dtype)) { throw fail("payload size does not match dims"); }
  a.bytes.assign(b.begin() + std::ptrdiff_t(off), b.end());
  return a;
}

template <typename Real>
RawArray to_raw(ComplexStack<Real> const &z)
{
  RawArray a;
  a.dims = {std::uint64_t(z.frames()), std::uint64_t(z.rows()), std::uint64_t(z.cols())};
  a.dtype = ArrayDtype::Complex64;
  a.bytes.resize(z.size() * 8);
  for (std::size_t i = 0; i < z.size(); ++i) {
    detail::float_to_le(float(z[i].real()), a.bytes.data() + 8 * i);
    detail::float_to_le(float(z[i].imag()), a.bytes.data() + 8 * i + 4);
  }
  return a;
}

inline ComplexStack<float> complex_from_raw(RawArray const &a)
{
  if (a.dtype != ArrayDtype::Complex64 || a.dims.size() != 3) { throw DataError("expected a 3D complex64 array"); }
  ComplexStack<float> z(int(a.dims[0]), int(a.dims[1]), int(a.dims[2]));
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = {detail::float_from_le(a.bytes.data() + 8 * i), detail::float_from_le(a.bytes.data() + 8 * i + 4)};
  }
  return z;
}

inline RawArray to_raw(std::vector<float> const &v, std::vector<std::uint64_t> dims)
{
  RawArray a;
  a.dims = std::move(dims);
  a.dtype = ArrayDtype::Float32;
  require(a.count() == v.size(), "float array size does not match dims");
  a.bytes.resize(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) { detail::float_to_le(v[i], a.bytes.data() + 4 * i); }
  return a;
}

inline std::vector<float> floats_from_raw(RawArray const &a)
{
  if (a.dtype != ArrayDtype::Float32) { throw DataError("expected a float32 array"); }
  std::vector<float> v(a.count());
  for (std::size_t i = 0; i < v.size(); ++i) { v[i] = detail::float_from_le(a.bytes.data() + 4 * i); }
  return v;
}

/// Masks are stored as a frames x rows uint8 array; the scalar mask parameters go in the sidecar.
inline RawArray to_raw(SamplingMask const &m)
{
  RawArray a;
  a.dims = {std::uint64_t(m.frames), std::uint64_t(m.rows)};
  a.dtype = ArrayDtype::UInt8;
  a.bytes = m.lines;
  return a;
}

inline json mask_json(SamplingMask const &m)
{
  return {{"frames", m.frames},           {"rows", m.rows},
          {"center_lines", m.center_lines}, {"requested_R", m.requested_R},
          {"measured_R", m.measured_R},     {"pattern", to_string(m.pattern)},
          {"seed", m.seed}};
}

inline SamplingMask mask_from_raw(RawArray const &a, json const &meta)
{
  if (a.dtype != ArrayDtype::UInt8 || a.dims.size() != 2) { throw DataError("expected a 2D uint8 mask array"); }
  SamplingMask m;
  m.frames = int(a.dims[0]);
  m.rows = int(a.dims[1]);
  m.lines = a.bytes;
  m.center_lines = meta.at("center_lines").get<int>();
  m.requested_R = meta.at("requested_R").get<double>();
  m.pattern = parse_mask_pattern(meta.at("pattern").get<std::string>());
  m.seed = meta.at("seed").get<std::uint64_t>();
  m.measured_R = double(m.frames) * m.rows / double(std::max<std::size_t>(1, m.count()));
  return m;
}

/// 64-bit FNV-1a, used as a content fingerprint (not a security hash).
inline std::uint64_t fnv1a(std::uint8_t const *p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL)
{
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v)
{
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string fingerprint_of(std::string const &s)
{
  return hex64(fnv1a(reinterpret_cast<std::uint8_t const *>(s.data()), s.size()));
}

inline std::string file_digest(fs::path const &path)
{
  auto const b = detail::read_file(path);
  return hex64(fnv1a(b.data(), b.size()));
}

inline void write_json(fs::path const &path, json const &j)
{
  auto const s = j.dump(2) + "\n";
  detail::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

inline json read_json(fs::path const &path)
{
  auto const b = detail::read_file(path);
  try {
    return json::parse(b.begin(), b.end());
  } catch (json::exception const &e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

inline void write_text(fs::path const &path, std::string const &s)
{
  detail::write_file(path, std::vector<std::uint8_t>(s.begin(), s.end()));
}

/// Checkpoint: `<stem>.bin` holds every parameter as little-endian float32 in registration order,
/// `<stem>.json` the header (fingerprint, counts, tensor layout, loss history, seed and `extra`).
template <typename Real>
void save_checkpoint(fs::path const &stem,
                     nn::ParamSet<Real> const &params,
                     std::string const &fingerprint,
                     std::uint64_t seed,
                     TrainingLog const &log,
                     json extra = json::object())
{
  auto const flat = params.flatten();
  std::vector<std::uint8_t> blob(flat.size() * 4);
  for (std::size_t i = 0; i < flat.size(); ++i) { detail::float_to_le(float(flat[i]), blob.data() + 4 * i); }
  fs::path bin = stem;
  bin += ".bin";
  fs::path hdr = stem;
  hdr += ".json";
  detail::write_file(bin, blob);
  json j;
  j["format"] = "cinediff-checkpoint";
  j["version"] = 1;
  j["config_fingerprint"] = fingerprint;
  j["parameter_count"] = flat.size();
  j["blob"] = bin.filename().string();
  j["blob_digest"] = hex64(fnv1a(blob.data(), blob.size()));
  j["seed"] = seed;
  j["loss_history"] = log.loss_history;
  j["steps"] = log.steps;
  j["optimizer"] = log.optimizer;
  if (std::isfinite(log.probe_before)) { j["probe_loss"] = {{"before", log.probe_before}, {"after", log.probe_after}}; }
  j["tensors"] = json::array();
  for (std::size_t i = 0; i < params.tensors(); ++i) {
    auto const s = params.vars()[i].shape();
    j["tensors"].push_back({{"name", params.names()[i]}, {"shape", {s.c, s.t, s.h, s.w}}});
  }
  j["extra"] = std::move(extra);
  write_json(hdr, j);
}

/// Loads parameters saved by save_checkpoint into `params`, checking fingerprint, count and digest.
/// Returns the header.
template <typename Real>
json load_checkpoint(fs::path const &stem, nn::ParamSet<Real> &params, std::string const &fingerprint)
{
  fs::path hdr = stem;
  hdr += ".json";
  auto const j = read_json(hdr);
  if (j.value("config_fingerprint", "") != fingerprint) {
    throw ParameterError("checkpoint '" + hdr.string() + "' was trained with a different configuration");
  }
  auto const blob = detail::read_file(stem.parent_path() / j.at("blob").get<std::string>());
  if (hex64(fnv1a(blob.data(), blob.size())) != j.at("blob_digest").get<std::string>()) {
    throw DataError("checkpoint blob digest mismatch for '" + hdr.string() + "'");
  }
  if (blob.size() != params.count() * 4 || j.at("parameter_count").get<std::size_t>() != params.count()) {
    throw DataError("checkpoint parameter count does not match the model");
  }
  std::vector<float> flat(params.count());
  for (std::size_t i = 0; i < flat.size(); ++i) { flat[i] = detail::float_from_le(blob.data() + 4 * i); }
  params.assign(std::span<float const>(flat));
  return j;
}

} // namespace cinediff
