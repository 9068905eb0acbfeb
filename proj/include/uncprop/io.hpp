#pragma once
// On-disk formats.
//
// Array file (.f64), little-endian:
//   char[8]  magic "UPARRAY1"
//   u32      rows, cols, channels (1 = real, 2 = complex interleaved re/im)
//   u32      reserved (0)
//   f64[rows * cols * channels]
//
// Checkpoint file (.ckpt), little-endian:
//   char[8]  magic "UPCKPT01"
//   u32      format version (1), u32 reserved (0)
//   u64      header length N, then N bytes of UTF-8 JSON {"spec": ..., "meta": ...}
//   u64      parameter count P, then f64[P]
//   u64      FNV-1a 64 of every preceding byte

#include <bit>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "uncprop/core/checksum.hpp"
#include "uncprop/core/errors.hpp"
#include "uncprop/core/image.hpp"
#include "uncprop/models.hpp"
#include "uncprop/synth.hpp"

namespace uncprop {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace detail {

template <typename T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* out, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  std::size_t pos() const { return pos_; }
  const std::string& bytes() const { return bytes_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error(origin_ + ": truncated file");
  }
  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::uint64_t file_checksum(const fs::path& path) { return fnv1a64(read_file(path)); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Arrays

inline constexpr char kArrayMagic[8] = {'U', 'P', 'A', 'R', 'R', 'A', 'Y', '1'};

inline std::string encode_array(std::size_t rows, std::size_t cols, std::uint32_t channels, const double* data) {
  std::string buf(kArrayMagic, 8);
  detail::put(buf, static_cast<std::uint32_t>(rows));
  detail::put(buf, static_cast<std::uint32_t>(cols));
  detail::put(buf, channels);
  detail::put(buf, std::uint32_t{0});
  buf.append(reinterpret_cast<const char*>(data), rows * cols * channels * sizeof(double));
  return buf;
}

inline void write_image(const fs::path& path, const Image& img) {
  write_file(path, encode_array(img.rows, img.cols, 1, img.data.data()));
}

inline void write_complex(const fs::path& path, const ComplexImage& z) {
  // std::complex<double> is layout-compatible with double[2]
  write_file(path, encode_array(z.rows, z.cols, 2, reinterpret_cast<const double*>(z.data.data())));
}

namespace detail {

inline Reader open_array(const fs::path& path, std::uint32_t expect_channels, std::uint32_t& rows, std::uint32_t& cols) {
  Reader r(read_file(path), path.string());
  if (r.get_bytes(8) != std::string(kArrayMagic, 8)) throw std::runtime_error(path.string() + ": not an array file");
  rows = r.get<std::uint32_t>();
  cols = r.get<std::uint32_t>();
  const auto channels = r.get<std::uint32_t>();
  r.get<std::uint32_t>();
  if (channels != expect_channels) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(expect_channels) + " channel(s), found " +
                             std::to_string(channels));
  }
  return r;
}

}  // namespace detail

inline Image read_image(const fs::path& path) {
  std::uint32_t rows = 0, cols = 0;
  auto r = detail::open_array(path, 1, rows, cols);
  Image img(rows, cols);
  r.get_doubles(img.data.data(), img.size());
  if (!r.done()) throw std::runtime_error(path.string() + ": trailing bytes");
  return img;
}

inline ComplexImage read_complex(const fs::path& path) {
  std::uint32_t rows = 0, cols = 0;
  auto r = detail::open_array(path, 2, rows, cols);
  ComplexImage z(rows, cols);
  r.get_doubles(reinterpret_cast<double*>(z.data.data()), 2 * z.data.size());
  if (!r.done()) throw std::runtime_error(path.string() + ": trailing bytes");
  return z;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline json spec_to_json(const MlpSpec& s) {
  return json{{"input_dim", s.input_dim},       {"hidden", s.hidden},
              {"activation", to_string(s.activation)}, {"head", to_string(s.head)},
              {"image_rows", s.image_rows},     {"image_cols", s.image_cols},
              {"num_classes", s.num_classes},   {"residual", s.residual},
              {"target_shift", s.target_shift}, {"target_scale", s.target_scale}};
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + s + "' (expected relu or tanh)");
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "image_gaussian") return HeadKind::image_gaussian;
  if (s == "scalar_gaussian") return HeadKind::scalar_gaussian;
  if (s == "softmax") return HeadKind::softmax;
  throw std::invalid_argument("unknown head '" + s + "'");
}

inline MlpSpec spec_from_json(const json& j) {
  MlpSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  s.head = head_from_string(j.at("head").get<std::string>());
  s.image_rows = j.at("image_rows").get<std::size_t>();
  s.image_cols = j.at("image_cols").get<std::size_t>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.residual = j.at("residual").get<bool>();
  s.target_shift = j.at("target_shift").get<double>();
  s.target_scale = j.at("target_scale").get<double>();
  s.validate();
  return s;
}

struct Checkpoint {
  MlpSpec spec;
  std::vector<double> params;
  json meta = json::object();

  Mlp model() const { return Mlp(spec, params); }
};

inline constexpr char kCheckpointMagic[8] = {'U', 'P', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string buf(kCheckpointMagic, 8);
  detail::put(buf, kCheckpointVersion);
  detail::put(buf, std::uint32_t{0});
  const std::string header = json{{"spec", spec_to_json(ck.spec)}, {"meta", ck.meta}}.dump();
  detail::put(buf, static_cast<std::uint64_t>(header.size()));
  buf += header;
  detail::put(buf, static_cast<std::uint64_t>(ck.params.size()));
  buf.append(reinterpret_cast<const char*>(ck.params.data()), ck.params.size() * sizeof(double));
  detail::put(buf, fnv1a64(buf));
  return buf;
}

inline Checkpoint decode_checkpoint(std::string bytes, const std::string& origin) {
  detail::Reader r(std::move(bytes), origin);
  if (r.get_bytes(8) != std::string(kCheckpointMagic, 8)) throw std::runtime_error(origin + ": not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  r.get<std::uint32_t>();
  const auto header_len = r.get<std::uint64_t>();
  const json header = json::parse(r.get_bytes(header_len));
  Checkpoint ck;
  ck.spec = spec_from_json(header.at("spec"));
  ck.meta = header.at("meta");
  const auto n = r.get<std::uint64_t>();
  ck.params.resize(n);
  r.get_doubles(ck.params.data(), n);
  const std::size_t body_end = r.pos();
  const auto stored = r.get<std::uint64_t>();
  if (!r.done()) throw std::runtime_error(origin + ": trailing bytes");
  if (fnv1a64(std::string_view(r.bytes()).substr(0, body_end)) != stored) {
    throw std::runtime_error(origin + ": checksum mismatch");
  }
  return ck;
}

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) { write_file(path, encode_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.string()); }

}  // namespace uncprop
