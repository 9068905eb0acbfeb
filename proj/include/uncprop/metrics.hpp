#pragma once
// Image-quality and task metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uncprop/core/image.hpp"
#include "uncprop/distributions.hpp"
#include "uncprop/propagation.hpp"

namespace uncprop {

struct SsimParams {
  int window = 7;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window < 3 || window % 2 == 0) {
      throw std::invalid_argument("SsimParams: window must be odd and >= 3, got " + std::to_string(window));
    }
    if (!(k1 > 0.0 && k1 < 0.2) || !(k2 > 0.0 && k2 < 0.2)) {
      throw std::invalid_argument("SsimParams: k1 and k2 must lie in (0, 0.2)");
    }
    if (!(dynamic_range > 0.0) || !std::isfinite(dynamic_range)) {
      throw std::invalid_argument("SsimParams: dynamic_range must be positive");
    }
  }

  /// Defaults with the dynamic range taken from the reference image (max - min, or 1 if flat).
  static SsimParams for_reference(const Image& reference) {
    SsimParams p;
    const auto [lo, hi] = std::minmax_element(reference.data.begin(), reference.data.end());
    if (lo != reference.data.end() && *hi > *lo) p.dynamic_range = *hi - *lo;
    return p;
  }
};

/// Normalized 1-D Gaussian taps, sigma = window / 6.
inline std::vector<double> gaussian_taps(int window) {
  const double sigma = window / 6.0;
  const int r = window / 2;
  std::vector<double> w(static_cast<std::size_t>(window));
  double total = 0.0;
  for (int k = 0; k < window; ++k) {
    const double d = k - r;
    w[static_cast<std::size_t>(k)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[static_cast<std::size_t>(k)];
  }
  for (double& x : w) x /= total;
  return w;
}

/// Mean local SSIM over every position where the window fits entirely in the image.
inline double ssim(const Image& a, const Image& b, const SsimParams& p) {
  require_same_shape(a, b, "ssim");
  p.validate();
  if (!all_finite(a.view()) || !all_finite(b.view())) throw std::invalid_argument("ssim: non-finite input");
  const std::size_t win = static_cast<std::size_t>(p.window);
  if (a.rows < win || a.cols < win) {
    throw std::invalid_argument("ssim: image smaller than the window");
  }
  const auto taps = gaussian_taps(p.window);
  const std::size_t out_r = a.rows - win + 1;
  const std::size_t out_c = a.cols - win + 1;

  // Separable filtering of a, b, a^2, b^2, ab over the valid region.
  auto filter = [&](auto&& value) {
    std::vector<double> horiz(a.rows * out_c);
    for (std::size_t r = 0; r < a.rows; ++r) {
      for (std::size_t c = 0; c < out_c; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < win; ++k) acc += taps[k] * value(r * a.cols + c + k);
        horiz[r * out_c + c] = acc;
      }
    }
    std::vector<double> out(out_r * out_c);
    for (std::size_t r = 0; r < out_r; ++r) {
      for (std::size_t c = 0; c < out_c; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < win; ++k) acc += taps[k] * horiz[(r + k) * out_c + c];
        out[r * out_c + c] = acc;
      }
    }
    return out;
  };
  const auto& A = a.data;
  const auto& B = b.data;
  const auto mu_a = filter([&](std::size_t i) { return A[i]; });
  const auto mu_b = filter([&](std::size_t i) { return B[i]; });
  const auto aa = filter([&](std::size_t i) { return A[i] * A[i]; });
  const auto bb = filter([&](std::size_t i) { return B[i] * B[i]; });
  const auto ab = filter([&](std::size_t i) { return A[i] * B[i]; });

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = aa[i] - mu_a[i] * mu_a[i];
    const double vb = bb[i] - mu_b[i] * mu_b[i];
    const double cov = ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mu_a.size());
}

/// Streaming mean-absolute and root-mean-square error.
class ErrorAccumulator {
 public:
  void add(double pred, double target) {
    if (!std::isfinite(pred) || !std::isfinite(target)) {
      throw std::invalid_argument("ErrorAccumulator: non-finite value");
    }
    const double d = pred - target;
    abs_sum_ += std::abs(d);
    sq_sum_ += d * d;
    ++n_;
  }
  std::size_t count() const { return n_; }
  double l1() const { return n_ ? abs_sum_ / static_cast<double>(n_) : 0.0; }
  double l2() const { return n_ ? std::sqrt(sq_sum_ / static_cast<double>(n_)) : 0.0; }

 private:
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
  std::size_t n_ = 0;
};

struct L1L2 {
  double l1 = 0.0;
  double l2 = 0.0;
};

/// Per-pair |pred - target| and (pred - target)^2.
inline L1L2 l1_l2(double pred, double target) {
  if (!std::isfinite(pred) || !std::isfinite(target)) throw std::invalid_argument("l1_l2: non-finite value");
  const double d = pred - target;
  return {std::abs(d), d * d};
}

/// Mean absolute error and root-mean-square error over a dataset.
inline L1L2 l1_l2(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) throw std::invalid_argument("l1_l2: length mismatch");
  ErrorAccumulator acc;
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], targets[i]);
  return {acc.l1(), acc.l2()};
}

inline double accuracy(std::span<const CategoricalDist> preds, std::span<const std::size_t> labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("accuracy: length mismatch");
  if (preds.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i].argmax() == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

/// Square root of the mean (not the mean of square roots).
inline double sqrt_of_mean(std::span<const double> variances) {
  if (variances.empty()) throw std::invalid_argument("sqrt_of_mean: empty input");
  double acc = 0.0;
  for (double v : variances) acc += v;
  return std::sqrt(acc / static_cast<double>(variances.size()));
}

struct RegressionUncertaintySummary {
  double sqrt_var_prop = 0.0;
  double sqrt_mu_delta = 0.0;
  double sqrt_var_joint = 0.0;
};

struct ClassificationUncertaintySummary {
  double mutual_info = 0.0;
  double cond_entropy = 0.0;
  double entropy = 0.0;
};

inline RegressionUncertaintySummary aggregate_uncertainty(std::span<const RegressionJoint> rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_uncertainty: empty input");
  std::vector<double> vp, md, vj;
  for (const auto& r : rows) {
    vp.push_back(r.var_prop);
    md.push_back(r.mu_delta);
    vj.push_back(r.var_joint);
  }
  return {sqrt_of_mean(vp), sqrt_of_mean(md), sqrt_of_mean(vj)};
}

inline ClassificationUncertaintySummary aggregate_uncertainty(std::span<const ClassificationJoint> rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate_uncertainty: empty input");
  ClassificationUncertaintySummary s;
  for (const auto& r : rows) {
    s.mutual_info += r.mutual_info;
    s.cond_entropy += r.cond_entropy;
    s.entropy += r.entropy;
  }
  const double n = static_cast<double>(rows.size());
  s.mutual_info /= n;
  s.cond_entropy /= n;
  s.entropy /= n;
  return s;
}

}  // namespace uncprop
