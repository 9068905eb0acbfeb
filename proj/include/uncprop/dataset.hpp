#pragma once
// Synthetic dataset: generation, deterministic splits, and the on-disk layout.
//
//   <dir>/manifest.json         versioned manifest (seed, shape, per-example files and split)
//   <dir>/labels.csv            id,area,side
//   <dir>/images/<id>.f64       ground-truth image (array file, 1 channel)
//   <dir>/kspace/<id>.f64       fully sampled noisy k-space (array file, 2 channels)
//
// Masks are not stored: they are regenerated from (seed, id, R) at use time.

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "uncprop/core/errors.hpp"
#include "uncprop/core/parallel.hpp"
#include "uncprop/core/rng.hpp"
#include "uncprop/io.hpp"
#include "uncprop/synth.hpp"

namespace uncprop {

struct DatasetConfig {
  std::size_t size = 32;
  std::size_t count = 1000;
  double noise_std = 1.0;  // per real/imaginary k-space component
  std::uint64_t seed = 0;

  void validate() const {
    if (size < 16) throw ConfigError("dataset.size must be >= 16, got " + std::to_string(size));
    if (count < 10) throw ConfigError("dataset.count must be >= 10, got " + std::to_string(count));
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw ConfigError("dataset.noise_std must be >= 0");
  }
};

enum class Split { test, upstream_train, upstream_val, downstream_train, downstream_val };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::test: return "test";
    case Split::upstream_train: return "upstream_train";
    case Split::upstream_val: return "upstream_val";
    case Split::downstream_train: return "downstream_train";
    case Split::downstream_val: return "downstream_val";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  for (Split v : {Split::test, Split::upstream_train, Split::upstream_val, Split::downstream_train,
                  Split::downstream_val}) {
    if (s == to_string(v)) return v;
  }
  throw std::runtime_error("unknown split '" + s + "'");
}

/// 20% test; the rest halved between upstream and downstream, each 80/20 train/val.
inline std::vector<Split> assign_splits(std::size_t count, std::uint64_t seed) {
  std::vector<std::size_t> perm(count);
  std::iota(perm.begin(), perm.end(), 0);
  StreamRng rng({derive_seed(seed, 0x53504C54ull), 0});  // "SPLT"
  for (std::size_t i = count; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  const std::size_t n_test = count / 5;
  const std::size_t n_up = (count - n_test) / 2;
  const std::size_t n_down = count - n_test - n_up;
  const std::size_t n_up_train = n_up - n_up / 5;
  const std::size_t n_down_train = n_down - n_down / 5;
  std::vector<Split> out(count);
  for (std::size_t k = 0; k < count; ++k) {
    Split s;
    if (k < n_test) s = Split::test;
    else if (k < n_test + n_up_train) s = Split::upstream_train;
    else if (k < n_test + n_up) s = Split::upstream_val;
    else if (k < n_test + n_up + n_down_train) s = Split::downstream_train;
    else s = Split::downstream_val;
    out[perm[k]] = s;
  }
  return out;
}

struct DatasetExample {
  std::size_t id = 0;
  Image image;
  ComplexImage kspace;  // fully sampled, noisy
  double area = 0.0;
  Side side = Side::left;
  Split split = Split::test;
};

struct Dataset {
  DatasetConfig config;
  std::vector<DatasetExample> examples;

  std::vector<const DatasetExample*> subset(Split s) const {
    std::vector<const DatasetExample*> out;
    for (const auto& e : examples) {
      if (e.split == s) out.push_back(&e);
    }
    return out;
  }
};

inline DatasetExample make_example(const DatasetConfig& cfg, std::size_t id) {
  const Phantom p = make_phantom(derive_seed(cfg.seed, 0x5048414Eull, id), cfg.size);  // "PHAN"
  DatasetExample e;
  e.id = id;
  e.image = p.image;
  e.kspace = to_kspace(p.image, cfg.noise_std, derive_seed(cfg.seed, 0x4E4F4953ull, id));  // "NOIS"
  e.area = p.area;
  e.side = p.side;
  return e;
}

inline Dataset generate_dataset(const DatasetConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  Dataset ds{cfg, std::vector<DatasetExample>(cfg.count)};
  const auto splits = assign_splits(cfg.count, cfg.seed);
  parallel_for(cfg.count, threads, [&](std::size_t i) {
    ds.examples[i] = make_example(cfg, i);
    ds.examples[i].split = splits[i];
  });
  return ds;
}

/// Seed of the undersampling mask for one example at one acceleration.
inline std::uint64_t mask_seed(std::uint64_t dataset_seed, std::size_t id, double acceleration) {
  return derive_seed(dataset_seed, 0x4D41534Bull, id, std::bit_cast<std::uint64_t>(acceleration));  // "MASK"
}

inline KSpaceSample sample_input(const DatasetConfig& cfg, const DatasetExample& e, double R, double c) {
  MaskSpec m{R, c, e.kspace.cols, mask_seed(cfg.seed, e.id, R)};
  return undersample(e.kspace, m, cfg.noise_std);
}

// ---------------------------------------------------------------------------
// Disk layout

inline constexpr int kDatasetFormatVersion = 1;

inline std::string example_stem(std::size_t id) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", id);
  return buf;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json dataset_config_json(const DatasetConfig& c) {
  return json{{"size", c.size}, {"count", c.count}, {"noise_std", c.noise_std}, {"seed", c.seed}};
}

inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "kspace");
  json entries = json::array();
  std::string labels = "id,area,side\n";
  for (const auto& e : ds.examples) {
    const std::string stem = example_stem(e.id);
    write_image(dir / "images" / (stem + ".f64"), e.image);
    write_complex(dir / "kspace" / (stem + ".f64"), e.kspace);
    entries.push_back({{"id", e.id},
                       {"image", "images/" + stem + ".f64"},
                       {"kspace", "kspace/" + stem + ".f64"},
                       {"split", to_string(e.split)}});
    labels += std::to_string(e.id) + "," + format_double(e.area) + "," + (e.side == Side::left ? "left" : "right") + "\n";
  }
  write_file(dir / "labels.csv", labels);
  const json manifest = {{"format", "uncprop-dataset"},
                         {"version", kDatasetFormatVersion},
                         {"config", dataset_config_json(ds.config)},
                         {"labels", "labels.csv"},
                         {"examples", entries}};
  write_file(dir / "manifest.json", manifest.dump(1) + "\n");
}

inline Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw MissingArtifact("dataset manifest not found: " + (dir / "manifest.json").string());
  const json m = json::parse(read_file(dir / "manifest.json"));
  if (m.at("format") != "uncprop-dataset" || m.at("version") != kDatasetFormatVersion) {
    throw std::runtime_error(dir.string() + ": unsupported dataset format");
  }
  Dataset ds;
  const json& c = m.at("config");
  ds.config = {c.at("size").get<std::size_t>(), c.at("count").get<std::size_t>(), c.at("noise_std").get<double>(),
               c.at("seed").get<std::uint64_t>()};

  // labels.csv: id,area,side
  std::vector<std::pair<double, Side>> labels(ds.config.count);
  std::vector<bool> seen(ds.config.count, false);
  std::istringstream in(read_file(dir / m.at("labels").get<std::string>()));
  std::string line;
  std::getline(in, line);
  if (line != "id,area,side") throw std::runtime_error("labels.csv: unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw std::runtime_error("labels.csv: malformed row '" + line + "'");
    const std::size_t id = std::stoull(line.substr(0, a));
    if (id >= labels.size()) throw std::runtime_error("labels.csv: id out of range");
    const std::string side = line.substr(b + 1);
    if (side != "left" && side != "right") throw std::runtime_error("labels.csv: bad side '" + side + "'");
    labels[id] = {std::stod(line.substr(a + 1, b - a - 1)), side == "left" ? Side::left : Side::right};
    seen[id] = true;
  }

  for (const auto& e : m.at("examples")) {
    DatasetExample ex;
    ex.id = e.at("id").get<std::size_t>();
    if (ex.id >= labels.size() || !seen[ex.id]) throw std::runtime_error("dataset: no label for id " + std::to_string(ex.id));
    ex.image = read_image(dir / e.at("image").get<std::string>());
    ex.kspace = read_complex(dir / e.at("kspace").get<std::string>());
    ex.area = labels[ex.id].first;
    ex.side = labels[ex.id].second;
    ex.split = split_from_string(e.at("split").get<std::string>());
    ds.examples.push_back(std::move(ex));
  }
  if (ds.examples.size() != ds.config.count) throw std::runtime_error("dataset: manifest lists the wrong number of examples");
  return ds;
}

}  // namespace uncprop
