#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <json.hpp>

#include "gsct/core.hpp"
#include "gsct/half.hpp"
#include "gsct/metrics.hpp"
#include "gsct/optim.hpp"

namespace gsct {

// All on-disk formats are little-endian and platform-independent:
//  - volumes: raw float32 payload (x fastest, then y, then z) plus a JSON
//    sidecar <path>.json with dims, spacing, origin and value range;
//  - projections: raw float32 image stack (u fastest, then v, then view) plus
//    a JSON sidecar mirroring the scan geometry;
//  - compressed models: "FGSC" header (magic, u32 version, u64 splat count)
//    followed by 22 bytes per splat: 11 binary16 values in the order
//    px py pz sx sy sz qw qx qy qz density (activated, linear values);
//  - checkpoints: "FGCK" full-precision training snapshots.

namespace detail {

inline void append_u16le(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void append_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void append_u64le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void append_f32le(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_u32le(out, bits);
}

inline void append_f64le(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_u64le(out, bits);
}

// Sequential reader with byte-offset-aware errors.
class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw parse_error(source_ + ": truncated while reading " + std::string(what) +
                            ", need " + std::to_string(n) + " bytes, have " +
                            std::to_string(remaining()),
                        offset_);
    }
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[offset_]) |
                      static_cast<std::uint16_t>(bytes_[offset_ + 1]) << 8;
    offset_ += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 4;
    return v;
  }

  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[offset_ + i]) << (8 * i);
    offset_ += 8;
    return v;
  }

  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string string(std::size_t n, const char* what) {
    need(n, what);
    std::string v(reinterpret_cast<const char*>(bytes_.data() + offset_), n);
    offset_ += n;
    return v;
  }

  void expect_magic(const char* magic, const char* what) {
    const std::size_t at = offset_;
    const std::string got = string(4, what);
    if (got != magic) {
      throw parse_error(source_ + ": bad magic for " + std::string(what) + ", expected '" +
                            magic + "' got '" + got + "'",
                        at);
    }
  }

  void expect_done() const {
    if (remaining() != 0) {
      throw parse_error(source_ + ": " + std::to_string(remaining()) + " trailing bytes",
                        offset_);
    }
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::string source_;
  std::size_t offset_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw io_error("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  const long size = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<std::uint8_t> bytes(size > 0 ? static_cast<std::size_t>(size) : 0);
  const std::size_t got = bytes.empty() ? 0 : std::fread(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (got != bytes.size()) throw io_error("short read from " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open " + path + " for writing");
  const std::size_t written = bytes.empty() ? 0 : std::fwrite(bytes.data(), 1, bytes.size(), f);
  std::fclose(f);
  if (written != bytes.size()) throw io_error("short write to " + path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw io_error("cannot open " + path + " for writing");
  const std::size_t written = text.empty() ? 0 : std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
  if (written != text.size()) throw io_error("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Volumes
// ---------------------------------------------------------------------------

inline void write_volume(const std::string& path, const Volume& vol) {
  vol.validate();
  std::vector<std::uint8_t> payload;
  payload.reserve(static_cast<std::size_t>(vol.count()) * 4);
  double lo = vol.values.empty() ? 0.0 : vol.values[0];
  double hi = lo;
  for (const double x : vol.values) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    detail::append_f32le(payload, static_cast<float>(x));
  }
  detail::write_file_bytes(path, payload);

  nlohmann::json meta;
  meta["format"] = "gsct-volume";
  meta["dtype"] = "float32le";
  meta["dims"] = {vol.dims[0], vol.dims[1], vol.dims[2]};
  meta["spacing"] = vol.spacing;
  meta["origin"] = {vol.origin[0], vol.origin[1], vol.origin[2]};
  meta["value_range"] = {lo, hi};
  detail::write_text_file(path + ".json", meta.dump(2) + "\n");
}

inline Volume read_volume(const std::string& path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_text_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ".json: " + e.what(), 0);
  }
  Volume vol;
  try {
    check(meta.at("format") == "gsct-volume", "read_volume: wrong sidecar format");
    vol.dims = {meta.at("dims").at(0), meta.at("dims").at(1), meta.at("dims").at(2)};
    vol.spacing = meta.at("spacing");
    vol.origin = Vec3(meta.at("origin").at(0), meta.at("origin").at(1), meta.at("origin").at(2));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ".json: " + e.what(), 0);
  }
  const std::vector<std::uint8_t> payload = detail::read_file_bytes(path);
  detail::ByteReader reader(payload, path);
  const std::int64_t count =
      static_cast<std::int64_t>(vol.dims[0]) * vol.dims[1] * vol.dims[2];
  if (payload.size() != static_cast<std::size_t>(count) * 4) {
    throw parse_error(path + ": payload is " + std::to_string(payload.size()) +
                          " bytes, sidecar dims require " + std::to_string(count * 4),
                      payload.size());
  }
  vol.values.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    vol.values[static_cast<std::size_t>(i)] = reader.f32("voxel value");
  }
  vol.validate();
  return vol;
}

// ---------------------------------------------------------------------------
// Projection sets
// ---------------------------------------------------------------------------

inline nlohmann::json geometry_to_json(const ScanGeometry& geom) {
  nlohmann::json j;
  j["mode"] = geom.mode == BeamMode::parallel ? "parallel" : "cone";
  j["detector"] = {geom.n_u, geom.n_v};
  j["pixel_spacing"] = {geom.s_u, geom.s_v};
  j["angles"] = geom.angles;
  j["source_to_origin"] = geom.source_to_origin;
  j["origin_to_detector"] = geom.origin_to_detector;
  return j;
}

inline ScanGeometry geometry_from_json(const nlohmann::json& j) {
  ScanGeometry geom;
  const std::string mode = j.at("mode");
  check(mode == "parallel" || mode == "cone", "geometry: mode must be parallel or cone");
  geom.mode = mode == "parallel" ? BeamMode::parallel : BeamMode::cone;
  geom.n_u = j.at("detector").at(0);
  geom.n_v = j.at("detector").at(1);
  geom.s_u = j.at("pixel_spacing").at(0);
  geom.s_v = j.at("pixel_spacing").at(1);
  geom.angles = j.at("angles").get<std::vector<double>>();
  geom.source_to_origin = j.at("source_to_origin");
  geom.origin_to_detector = j.at("origin_to_detector");
  geom.validate();
  return geom;
}

inline void write_projections(const std::string& path, const ProjectionSet& projections) {
  projections.validate();
  std::vector<std::uint8_t> payload;
  payload.reserve(projections.images.size() *
                  static_cast<std::size_t>(projections.geometry.n_u) *
                  projections.geometry.n_v * 4);
  for (const Image& img : projections.images) {
    for (const double x : img.values) detail::append_f32le(payload, static_cast<float>(x));
  }
  detail::write_file_bytes(path, payload);

  nlohmann::json meta;
  meta["format"] = "gsct-projections";
  meta["dtype"] = "float32le";
  meta["geometry"] = geometry_to_json(projections.geometry);
  detail::write_text_file(path + ".json", meta.dump(2) + "\n");
}

inline ProjectionSet read_projections(const std::string& path) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_text_file(path + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ".json: " + e.what(), 0);
  }
  ProjectionSet out;
  try {
    check(meta.at("format") == "gsct-projections", "read_projections: wrong sidecar format");
    out.geometry = geometry_from_json(meta.at("geometry"));
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(path + ".json: " + e.what(), 0);
  }
  const std::vector<std::uint8_t> payload = detail::read_file_bytes(path);
  const std::size_t per_image =
      static_cast<std::size_t>(out.geometry.n_u) * out.geometry.n_v;
  const std::size_t expected = out.geometry.angles.size() * per_image * 4;
  if (payload.size() != expected) {
    throw parse_error(path + ": payload is " + std::to_string(payload.size()) +
                          " bytes, geometry requires " + std::to_string(expected),
                      payload.size());
  }
  detail::ByteReader reader(payload, path);
  out.images.resize(out.geometry.angles.size());
  for (Image& img : out.images) {
    img = Image::zeros(out.geometry.n_u, out.geometry.n_v);
    for (double& x : img.values) x = reader.f32("pixel value");
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Compressed model (22 bytes per splat)
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCompressedVersion = 1;

struct CompressStats {
  std::size_t saturated = 0;  // values clipped to the binary16 finite range
};

inline std::vector<std::uint8_t> compress_model(const GaussianCloud& cloud,
                                                CompressStats* stats = nullptr) {
  cloud.validate();
  std::vector<std::uint8_t> out;
  out.reserve(16 + 22 * cloud.size());
  out.push_back('F');
  out.push_back('G');
  out.push_back('S');
  out.push_back('C');
  detail::append_u32le(out, kCompressedVersion);
  detail::append_u64le(out, static_cast<std::uint64_t>(cloud.size()));
  bool saturated = false;
  const auto push = [&](double value) {
    bool flag = false;
    detail::append_u16le(out, encode_half(value, &flag));
    if (flag && stats) ++stats->saturated;
    saturated |= flag;
  };
  // Quaternions are stored as the fixed point of quantize-then-renormalize,
  // so a decompress/compress round trip reproduces the bytes exactly. The
  // iteration converges within a couple of steps; a rare 2-cycle is broken
  // deterministically by taking the lexicographically smallest member.
  const auto quantize_unit_quat = [](const Vec4& unit) {
    std::array<std::uint16_t, 4> h;
    for (int a = 0; a < 4; ++a) h[static_cast<std::size_t>(a)] = encode_half(unit[a]);
    std::vector<std::array<std::uint16_t, 4>> seen;
    for (int iter = 0; iter < 8; ++iter) {
      seen.push_back(h);
      Vec4 q(decode_half(h[0]), decode_half(h[1]), decode_half(h[2]), decode_half(h[3]));
      const double norm = q.norm();
      if (norm > 0.0) q /= norm;
      std::array<std::uint16_t, 4> next;
      for (int a = 0; a < 4; ++a) next[static_cast<std::size_t>(a)] = encode_half(q[a]);
      if (next == h) return h;
      for (std::size_t j = 0; j < seen.size(); ++j) {
        if (seen[j] == next) {  // cycle: pick its smallest member
          auto best = next;
          for (std::size_t c = j; c < seen.size(); ++c) best = std::min(best, seen[c]);
          return best;
        }
      }
      h = next;
    }
    return h;
  };
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const ActivatedSplat act = activate(cloud, i);
    push(act.position[0]);
    push(act.position[1]);
    push(act.position[2]);
    push(act.scales[0]);
    push(act.scales[1]);
    push(act.scales[2]);
    const auto quat = quantize_unit_quat(act.unit_quat);
    for (const std::uint16_t component : quat) detail::append_u16le(out, component);
    push(act.density);
  }
  if (saturated) {
    std::fprintf(stderr, "gsct: warning: values saturated to the binary16 range\n");
  }
  return out;
}

inline GaussianCloud decompress_model(const std::vector<std::uint8_t>& bytes,
                                      const std::string& source = "compressed model") {
  detail::ByteReader reader(bytes, source);
  reader.expect_magic("FGSC", "compressed model header");
  const std::uint32_t version = reader.u32("format version");
  if (version != kCompressedVersion) {
    throw parse_error(source + ": unsupported version " + std::to_string(version), 4);
  }
  const std::uint64_t count = reader.u64("splat count");
  const std::size_t expected = 16 + 22 * static_cast<std::size_t>(count);
  if (bytes.size() != expected) {
    throw parse_error(source + ": file is " + std::to_string(bytes.size()) +
                          " bytes, header requires " + std::to_string(expected),
                      bytes.size());
  }
  GaussianCloud cloud;
  cloud.reserve(static_cast<std::size_t>(count));
  // Smallest positive binary16 value; keeps log-scales finite after load.
  constexpr double kScaleFloor = 0x1.0p-24;
  for (std::uint64_t i = 0; i < count; ++i) {
    double values[11];
    for (double& v : values) v = decode_half(reader.u16("splat record"));
    const Vec3 position(values[0], values[1], values[2]);
    const Vec3 scales(std::max(values[3], kScaleFloor), std::max(values[4], kScaleFloor),
                      std::max(values[5], kScaleFloor));
    Vec4 quat(values[6], values[7], values[8], values[9]);
    const double norm = quat.norm();
    quat = norm > 0.0 ? Vec4(quat / norm) : Vec4(1, 0, 0, 0);
    const double density = std::max(values[10], 0.0);
    cloud.push_back(position, scales.array().log(), quat, density);
  }
  reader.expect_done();
  return cloud;
}

inline void write_compressed_model(const std::string& path, const GaussianCloud& cloud,
                                   CompressStats* stats = nullptr) {
  detail::write_file_bytes(path, compress_model(cloud, stats));
}

inline GaussianCloud read_compressed_model(const std::string& path) {
  return decompress_model(detail::read_file_bytes(path), path);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

// Full-precision training snapshot. config_json carries the resolved run
// configuration verbatim; norm-factor and RNG state make a resumed run
// bit-identical to an uninterrupted one.
struct Checkpoint {
  GaussianCloud cloud;  // normalized-space raw parameters, as trained
  OptimState state;
  bool has_state = false;
  int iteration = 0;
  std::string config_json;
  MetricLog log;
};

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ckpt.cloud.validate();
  std::vector<std::uint8_t> out;
  out.push_back('F');
  out.push_back('G');
  out.push_back('C');
  out.push_back('K');
  detail::append_u32le(out, kCheckpointVersion);
  detail::append_u64le(out, static_cast<std::uint64_t>(ckpt.cloud.size()));
  detail::append_u32le(out, static_cast<std::uint32_t>(ckpt.iteration));
  out.push_back(ckpt.has_state ? 1 : 0);

  const auto push_vec3 = [&](const std::vector<Vec3>& v) {
    for (const Vec3& x : v) {
      detail::append_f64le(out, x[0]);
      detail::append_f64le(out, x[1]);
      detail::append_f64le(out, x[2]);
    }
  };
  const auto push_vec4 = [&](const std::vector<Vec4>& v) {
    for (const Vec4& x : v) {
      for (int a = 0; a < 4; ++a) detail::append_f64le(out, x[a]);
    }
  };
  const auto push_scalars = [&](const std::vector<double>& v) {
    for (const double x : v) detail::append_f64le(out, x);
  };

  push_vec3(ckpt.cloud.positions);
  push_vec3(ckpt.cloud.log_scales);
  push_vec4(ckpt.cloud.rotations);
  push_scalars(ckpt.cloud.raw_densities);

  if (ckpt.has_state) {
    const OptimState& s = ckpt.state;
    s.check_lockstep(ckpt.cloud.size());
    detail::append_u64le(out, static_cast<std::uint64_t>(s.step));
    push_vec3(s.m_pos);
    push_vec3(s.v_pos);
    push_vec3(s.m_ls);
    push_vec3(s.v_ls);
    push_vec4(s.m_rot);
    push_vec4(s.v_rot);
    push_scalars(s.m_dens);
    push_scalars(s.v_dens);
    push_scalars(s.accum_grad_norm);
    push_vec3(s.accum_grad_dir);
    for (const std::int64_t c : s.accum_count) {
      detail::append_u64le(out, static_cast<std::uint64_t>(c));
    }
    detail::append_f64le(out, s.scene_extent);
    detail::append_f64le(out, s.norm_factor);
    detail::append_u64le(out, static_cast<std::uint64_t>(s.skipped_updates));
    const std::string rng_state = s.rng.save_state();
    detail::append_u32le(out, static_cast<std::uint32_t>(rng_state.size()));
    out.insert(out.end(), rng_state.begin(), rng_state.end());
  }

  detail::append_u32le(out, static_cast<std::uint32_t>(ckpt.config_json.size()));
  out.insert(out.end(), ckpt.config_json.begin(), ckpt.config_json.end());

  detail::append_u64le(out, static_cast<std::uint64_t>(ckpt.log.size()));
  for (const MetricRow& row : ckpt.log) {
    detail::append_u64le(out, static_cast<std::uint64_t>(row.iteration));
    detail::append_f64le(out, row.l1);
    detail::append_f64le(out, row.ssim);
    detail::append_f64le(out, row.tv);
    detail::append_f64le(out, row.total);
    detail::append_u64le(out, static_cast<std::uint64_t>(row.num_gaussians));
    detail::append_f64le(out, row.psnr);
    detail::append_f64le(out, row.ssim3d);
    detail::append_f64le(out, row.wall_ms);
  }
  detail::write_file_bytes(path, out);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file_bytes(path);
  detail::ByteReader reader(bytes, path);
  reader.expect_magic("FGCK", "checkpoint header");
  const std::uint32_t version = reader.u32("checkpoint version");
  if (version != kCheckpointVersion) {
    throw parse_error(path + ": unsupported checkpoint version " + std::to_string(version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion),
                      4);
  }
  Checkpoint ckpt;
  const std::uint64_t count = reader.u64("splat count");
  ckpt.iteration = static_cast<int>(reader.u32("iteration"));
  ckpt.has_state = reader.string(1, "state flag")[0] != 0;

  const auto read_vec3 = [&](std::vector<Vec3>& v, const char* what) {
    v.resize(static_cast<std::size_t>(count));
    for (Vec3& x : v) {
      x[0] = reader.f64(what);
      x[1] = reader.f64(what);
      x[2] = reader.f64(what);
    }
  };
  const auto read_vec4 = [&](std::vector<Vec4>& v, const char* what) {
    v.resize(static_cast<std::size_t>(count));
    for (Vec4& x : v) {
      for (int a = 0; a < 4; ++a) x[a] = reader.f64(what);
    }
  };
  const auto read_scalars = [&](std::vector<double>& v, const char* what) {
    v.resize(static_cast<std::size_t>(count));
    for (double& x : v) x = reader.f64(what);
  };

  read_vec3(ckpt.cloud.positions, "positions");
  read_vec3(ckpt.cloud.log_scales, "log scales");
  read_vec4(ckpt.cloud.rotations, "rotations");
  read_scalars(ckpt.cloud.raw_densities, "densities");
  ckpt.cloud.validate();

  if (ckpt.has_state) {
    OptimState& s = ckpt.state;
    s.step = static_cast<std::int64_t>(reader.u64("step"));
    read_vec3(s.m_pos, "adam state");
    read_vec3(s.v_pos, "adam state");
    read_vec3(s.m_ls, "adam state");
    read_vec3(s.v_ls, "adam state");
    read_vec4(s.m_rot, "adam state");
    read_vec4(s.v_rot, "adam state");
    read_scalars(s.m_dens, "adam state");
    read_scalars(s.v_dens, "adam state");
    read_scalars(s.accum_grad_norm, "accumulators");
    read_vec3(s.accum_grad_dir, "accumulators");
    s.accum_count.resize(static_cast<std::size_t>(count));
    for (std::int64_t& c : s.accum_count) {
      c = static_cast<std::int64_t>(reader.u64("accumulators"));
    }
    s.scene_extent = reader.f64("scene extent");
    s.norm_factor = reader.f64("norm factor");
    s.skipped_updates = static_cast<std::int64_t>(reader.u64("skip count"));
    const std::uint32_t rng_len = reader.u32("rng state length");
    s.rng.restore_state(reader.string(rng_len, "rng state"));
  }

  const std::uint32_t config_len = reader.u32("config length");
  ckpt.config_json = reader.string(config_len, "config json");

  const std::uint64_t rows = reader.u64("log row count");
  ckpt.log.resize(static_cast<std::size_t>(rows));
  for (MetricRow& row : ckpt.log) {
    row.iteration = static_cast<std::int64_t>(reader.u64("log row"));
    row.l1 = reader.f64("log row");
    row.ssim = reader.f64("log row");
    row.tv = reader.f64("log row");
    row.total = reader.f64("log row");
    row.num_gaussians = static_cast<std::int64_t>(reader.u64("log row"));
    row.psnr = reader.f64("log row");
    row.ssim3d = reader.f64("log row");
    row.wall_ms = reader.f64("log row");
  }
  reader.expect_done();
  return ckpt;
}

}  // namespace gsct
