#pragma once
// End-to-end pipeline: undersampled k-space -> upstream image distribution ->
// Monte Carlo propagation through the downstream model -> per-example records
// -> per-acceleration sweep rows.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uncprop/core/errors.hpp"
#include "uncprop/core/parallel.hpp"
#include "uncprop/dataset.hpp"
#include "uncprop/metrics.hpp"
#include "uncprop/models.hpp"
#include "uncprop/propagation.hpp"
#include "uncprop/training.hpp"

namespace uncprop {

enum class Task { classification, regression };

inline const char* to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

struct Acceleration {
  double R = 4.0;
  double c = 0.08;
  friend bool operator==(const Acceleration&, const Acceleration&) = default;
};

// ---------------------------------------------------------------------------
// Model plumbing

/// Upstream input: zero-filled reconstruction followed by the column mask (0/1).
/// The mask tells the network how much of k-space it is missing.
inline std::vector<double> upstream_input(const KSpaceSample& z) {
  const Image zf = zero_filled_recon(z);
  std::vector<double> in = zf.data;
  for (bool m : z.mask) in.push_back(m ? 1.0 : 0.0);
  return in;
}

inline MlpSpec make_upstream_spec(std::size_t size, std::vector<std::size_t> hidden, Activation act) {
  MlpSpec s;
  s.input_dim = size * size + size;
  s.hidden = std::move(hidden);
  s.activation = act;
  s.head = HeadKind::image_gaussian;
  s.image_rows = size;
  s.image_cols = size;
  s.residual = true;
  return s;
}

inline MlpSpec make_downstream_spec(Task task, std::size_t size, std::vector<std::size_t> hidden, Activation act,
                                    double target_shift = 0.0, double target_scale = 1.0) {
  MlpSpec s;
  s.input_dim = size * size;
  s.hidden = std::move(hidden);
  s.activation = act;
  if (task == Task::classification) {
    s.head = HeadKind::softmax;
    s.num_classes = 2;
  } else {
    s.head = HeadKind::scalar_gaussian;
    s.target_shift = target_shift;
    s.target_scale = target_scale;
  }
  return s;
}

inline std::size_t class_label(const DatasetExample& e) { return e.side == Side::left ? 0 : 1; }

inline std::vector<UpstreamExample> upstream_examples(const Dataset& ds, Split split,
                                                      const std::vector<Acceleration>& accels, unsigned threads) {
  const auto subset = ds.subset(split);
  std::vector<UpstreamExample> out(subset.size() * accels.size());
  parallel_for(out.size(), threads, [&](std::size_t k) {
    const auto& e = *subset[k / accels.size()];
    const auto& a = accels[k % accels.size()];
    out[k] = {upstream_input(sample_input(ds.config, e, a.R, a.c)), e.image};
  });
  return out;
}

inline std::vector<DownstreamExample> downstream_examples(const Dataset& ds, Split split,
                                                          const std::vector<Acceleration>& accels,
                                                          const Mlp& upstream, unsigned threads) {
  const auto subset = ds.subset(split);
  std::vector<std::optional<DownstreamExample>> slots(subset.size() * accels.size());
  parallel_for(slots.size(), threads, [&](std::size_t k) {
    const auto& e = *subset[k / accels.size()];
    const auto& a = accels[k % accels.size()];
    slots[k].emplace(upstream.forward_image(upstream_input(sample_input(ds.config, e, a.R, a.c))), e.area, class_label(e));
  });
  std::vector<DownstreamExample> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Mean and sample standard deviation of the training targets, used to
/// normalize the regression head.
inline std::pair<double, double> target_stats(const std::vector<DownstreamExample>& xs) {
  if (xs.size() < 2) throw std::invalid_argument("target_stats: need at least two examples");
  double m = 0.0;
  for (const auto& x : xs) m += x.target;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (const auto& x : xs) v += (x.target - m) * (x.target - m);
  const double sd = std::sqrt(v / static_cast<double>(xs.size() - 1));
  return {m, sd > 0.0 ? sd : 1.0};
}

// ---------------------------------------------------------------------------
// Per-example evaluation

struct ExampleRecord {
  std::size_t id = 0;
  Acceleration accel;
  double mean_var_x = 0.0;  // pixel-averaged upstream variance
  double ssim = 0.0;        // upstream mean vs ground truth
  Task task = Task::classification;
  // classification
  std::size_t label = 0;
  std::optional<ClassificationJoint> cls;
  // regression
  double target = 0.0;
  std::optional<RegressionJoint> reg;

  std::size_t predicted_class() const { return cls->mean_probs.argmax(); }
  bool correct() const { return predicted_class() == label; }
  double abs_error() const { return std::abs(reg->mu_hat - target); }
};

struct EvalOptions {
  std::size_t mc_samples = 256;
  std::uint64_t mc_seed = 0;
  unsigned threads = 1;
  bool zero_variance = false;  // replace the upstream variance by exp(-50)
};

inline SeedSpec example_seed(std::uint64_t mc_seed, std::size_t id, double R) {
  return {derive_seed(mc_seed, 0x4556414Cull, id, std::bit_cast<std::uint64_t>(R)), 0};  // "EVAL"
}

inline void check_compatible(const Mlp& upstream, const Mlp& downstream, std::size_t rows, std::size_t cols) {
  const auto& u = upstream.spec();
  const auto& d = downstream.spec();
  if (u.head != HeadKind::image_gaussian) throw ConfigError("upstream checkpoint does not have an image head");
  if (u.image_rows != rows || u.image_cols != cols || u.input_dim != rows * cols + cols) {
    throw ConfigError("upstream checkpoint expects " + std::to_string(u.image_rows) + "x" +
                      std::to_string(u.image_cols) + " images, data is " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
  if (d.head == HeadKind::image_gaussian) throw ConfigError("downstream checkpoint has an image head");
  if (d.input_dim != rows * cols) {
    throw ConfigError("downstream checkpoint expects input_dim " + std::to_string(d.input_dim) + ", upstream produces " +
                      std::to_string(rows * cols));
  }
}

/// Runs one input through the whole pipeline. `truth` is the ground-truth image.
inline ExampleRecord run_example(const KSpaceSample& z, const Image& truth, std::size_t id, double target,
                                 std::size_t label, const Mlp& upstream, const Mlp& downstream,
                                 const EvalOptions& opt) {
  check_compatible(upstream, downstream, truth.rows, truth.cols);
  ExampleRecord rec;
  rec.id = id;
  rec.accel = {z.mask_spec.acceleration, z.mask_spec.center_fraction};
  DiagGaussianImage x = upstream.forward_image(upstream_input(z));
  if (opt.zero_variance) x = x.with_log_var(-50.0);
  rec.mean_var_x = x.mean_variance();
  rec.ssim = ssim(x.mean(), truth, SsimParams::for_reference(truth));
  const McConfig mc{opt.mc_samples, example_seed(opt.mc_seed, id, rec.accel.R), opt.threads};
  if (downstream.spec().head == HeadKind::softmax) {
    rec.task = Task::classification;
    rec.label = label;
    rec.cls = propagate_classification(x, [&](const Image& s) { return downstream.forward_categorical(s.data); }, mc);
  } else {
    rec.task = Task::regression;
    rec.target = target;
    rec.reg = propagate_regression(x, [&](const Image& s) { return downstream.forward_scalar(s.data); }, mc);
  }
  if (!std::isfinite(rec.mean_var_x) || !std::isfinite(rec.ssim)) {
    throw NumericalError("run_example: non-finite metric for example " + std::to_string(id));
  }
  return rec;
}

inline ExampleRecord run_example(const Dataset& ds, const DatasetExample& e, const Acceleration& a,
                                 const Mlp& upstream, const Mlp& downstream, const EvalOptions& opt) {
  return run_example(sample_input(ds.config, e, a.R, a.c), e.image, e.id, e.area, class_label(e), upstream,
                     downstream, opt);
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepRow {
  Acceleration accel;
  std::size_t n = 0;
  // raw full-precision accumulators, summed in example-id order
  double sum_var_x = 0.0;
  double sum_ssim = 0.0;
  std::size_t hits = 0;
  double sum_mi = 0.0, sum_cond = 0.0, sum_entropy = 0.0;
  double sum_abs_err = 0.0, sum_sq_err = 0.0;
  double sum_var_prop = 0.0, sum_mu_delta = 0.0, sum_var_joint = 0.0;

  double nd() const { return static_cast<double>(n); }
  double ssim_mean() const { return sum_ssim / nd(); }
  double sqrt_mean_var_x() const { return std::sqrt(sum_var_x / nd()); }
  double acc() const { return static_cast<double>(hits) / nd(); }
  double mutual_info() const { return sum_mi / nd(); }
  double cond_entropy() const { return sum_cond / nd(); }
  double entropy() const { return sum_entropy / nd(); }
  double l1() const { return sum_abs_err / nd(); }
  double l2() const { return std::sqrt(sum_sq_err / nd()); }
  double sqrt_var_prop() const { return std::sqrt(sum_var_prop / nd()); }
  double sqrt_mu_delta() const { return std::sqrt(sum_mu_delta / nd()); }
  double sqrt_var_joint() const { return std::sqrt(sum_var_joint / nd()); }

  void add(const ExampleRecord& r) {
    ++n;
    sum_var_x += r.mean_var_x;
    sum_ssim += r.ssim;
    if (r.cls) {
      hits += r.correct() ? 1 : 0;
      sum_mi += r.cls->mutual_info;
      sum_cond += r.cls->cond_entropy;
      sum_entropy += r.cls->entropy;
    }
    if (r.reg) {
      const double d = r.reg->mu_hat - r.target;
      sum_abs_err += std::abs(d);
      sum_sq_err += d * d;
      sum_var_prop += r.reg->var_prop;
      sum_mu_delta += r.reg->mu_delta;
      sum_var_joint += r.reg->var_joint;
    }
  }

  /// |H - I - E[H]| (classification) or |Var[y] - var_prop - mu_delta| (regression) on the raw sums.
  double identity_residual(Task t) const {
    return t == Task::classification ? std::abs(sum_entropy - sum_mi - sum_cond)
                                     : std::abs(sum_var_joint - sum_var_prop - sum_mu_delta);
  }
};

struct SweepReport {
  Task task = Task::classification;
  std::vector<SweepRow> rows;         // one per acceleration, in the order given
  std::vector<ExampleRecord> records;  // example-major, acceleration-minor

  /// Largest identity residual over all rows.
  double max_identity_residual() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.identity_residual(task));
    return m;
  }
};

inline constexpr double kIdentityTolerance = 1e-9;

/// Builds rows from records (keyed merge by acceleration, records in given order).
inline SweepReport assemble_report(Task task, const std::vector<Acceleration>& accels,
                                   std::vector<ExampleRecord> records) {
  SweepReport rep;
  rep.task = task;
  for (const auto& a : accels) rep.rows.push_back({a});
  for (const auto& r : records) {
    const auto it = std::find_if(rep.rows.begin(), rep.rows.end(), [&](const SweepRow& row) { return row.accel == r.accel; });
    if (it == rep.rows.end()) throw std::runtime_error("assemble_report: record with unknown acceleration");
    it->add(r);
  }
  rep.records = std::move(records);
  return rep;
}

/// Evaluates every (example, acceleration) pair of `examples`. Pairs run
/// concurrently; each pair's Monte Carlo loop is sequential, and results are
/// merged in a fixed order, so output does not depend on the thread count.
inline SweepReport run_sweep(const Dataset& ds, const std::vector<const DatasetExample*>& examples,
                             const std::vector<Acceleration>& accels, const Mlp& upstream, const Mlp& downstream,
                             const EvalOptions& opt) {
  if (examples.empty()) throw std::invalid_argument("run_sweep: no examples");
  if (accels.empty()) throw std::invalid_argument("run_sweep: no accelerations");
  check_compatible(upstream, downstream, ds.config.size, ds.config.size);
  EvalOptions inner = opt;
  inner.threads = 1;
  std::vector<ExampleRecord> records(examples.size() * accels.size());
  parallel_for(records.size(), opt.threads, [&](std::size_t k) {
    records[k] = run_example(ds, *examples[k / accels.size()], accels[k % accels.size()], upstream, downstream, inner);
  });
  const Task task = downstream.spec().head == HeadKind::softmax ? Task::classification : Task::regression;
  auto rep = assemble_report(task, accels, std::move(records));
  const double res = rep.max_identity_residual();
  if (!(res <= kIdentityTolerance)) {
    throw NumericalError("run_sweep: decomposition identity violated on aggregated sums (residual " +
                         std::to_string(res) + ")");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// CSV emission

inline std::string fmt_sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string fmt_full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Aggregate table, 4 significant digits.
inline std::string sweep_report_csv(const SweepReport& rep) {
  std::ostringstream o;
  if (rep.task == Task::classification) {
    o << "accel,center_fraction,n,ssim,sqrt_mean_var_x,acc,mutual_info,cond_entropy,entropy\n";
    for (const auto& r : rep.rows) {
      o << fmt_sig4(r.accel.R) << ',' << fmt_sig4(r.accel.c) << ',' << r.n << ',' << fmt_sig4(r.ssim_mean()) << ','
        << fmt_sig4(r.sqrt_mean_var_x()) << ',' << fmt_sig4(r.acc()) << ',' << fmt_sig4(r.mutual_info()) << ','
        << fmt_sig4(r.cond_entropy()) << ',' << fmt_sig4(r.entropy()) << '\n';
    }
  } else {
    o << "accel,center_fraction,n,ssim,sqrt_mean_var_x,l1,l2,sqrt_var_prop,sqrt_mu_delta,sqrt_var_joint\n";
    for (const auto& r : rep.rows) {
      o << fmt_sig4(r.accel.R) << ',' << fmt_sig4(r.accel.c) << ',' << r.n << ',' << fmt_sig4(r.ssim_mean()) << ','
        << fmt_sig4(r.sqrt_mean_var_x()) << ',' << fmt_sig4(r.l1()) << ',' << fmt_sig4(r.l2()) << ','
        << fmt_sig4(r.sqrt_var_prop()) << ',' << fmt_sig4(r.sqrt_mu_delta()) << ',' << fmt_sig4(r.sqrt_var_joint())
        << '\n';
    }
  }
  return o.str();
}

inline std::string scatter_header(Task task) {
  return task == Task::classification
             ? "id,accel,center_fraction,mean_var_x,ssim,label,pred,p0,p1,mutual_info,cond_entropy,entropy"
             : "id,accel,center_fraction,mean_var_x,ssim,target,mu_hat,var_prop,mu_delta,var_joint";
}

/// Per-example points, full precision (round-trippable).
inline std::string scatter_csv(const SweepReport& rep) {
  std::ostringstream o;
  o << scatter_header(rep.task) << '\n';
  for (const auto& r : rep.records) {
    o << r.id << ',' << fmt_full(r.accel.R) << ',' << fmt_full(r.accel.c) << ',' << fmt_full(r.mean_var_x) << ','
      << fmt_full(r.ssim) << ',';
    if (rep.task == Task::classification) {
      const auto& p = r.cls->mean_probs.probs;
      o << r.label << ',' << r.predicted_class() << ',' << fmt_full(p[0]) << ',' << fmt_full(p[1]) << ','
        << fmt_full(r.cls->mutual_info) << ',' << fmt_full(r.cls->cond_entropy) << ',' << fmt_full(r.cls->entropy);
    } else {
      o << fmt_full(r.target) << ',' << fmt_full(r.reg->mu_hat) << ',' << fmt_full(r.reg->var_prop) << ','
        << fmt_full(r.reg->mu_delta) << ',' << fmt_full(r.reg->var_joint);
    }
    o << '\n';
  }
  return o.str();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream s(line);
  while (std::getline(s, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

/// Parses scatter.csv back into records and rebuilds the report. Accelerations
/// appear in first-seen order.
inline SweepReport parse_scatter_csv(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  Task task;
  if (header == scatter_header(Task::classification)) task = Task::classification;
  else if (header == scatter_header(Task::regression)) task = Task::regression;
  else throw std::runtime_error("scatter.csv: unrecognized header");
  const std::size_t ncol = detail::split_csv_line(header).size();
  std::vector<ExampleRecord> recs;
  std::vector<Acceleration> accels;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != ncol) throw std::runtime_error("scatter.csv: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields");
    ExampleRecord r;
    r.task = task;
    r.id = std::stoull(f[0]);
    r.accel = {std::stod(f[1]), std::stod(f[2])};
    r.mean_var_x = std::stod(f[3]);
    r.ssim = std::stod(f[4]);
    if (task == Task::classification) {
      r.label = std::stoull(f[5]);
      ClassificationJoint j;
      j.mean_probs.probs = {std::stod(f[7]), std::stod(f[8])};
      j.mutual_info = std::stod(f[9]);
      j.cond_entropy = std::stod(f[10]);
      j.entropy = std::stod(f[11]);
      r.cls = j;
    } else {
      r.target = std::stod(f[5]);
      r.reg = RegressionJoint{std::stod(f[6]), std::stod(f[7]), std::stod(f[8]), std::stod(f[9])};
    }
    if (std::find(accels.begin(), accels.end(), r.accel) == accels.end()) accels.push_back(r.accel);
    recs.push_back(std::move(r));
  }
  if (recs.empty()) throw std::runtime_error("scatter.csv: no records");
  return assemble_report(task, accels, std::move(recs));
}

}  // namespace uncprop
