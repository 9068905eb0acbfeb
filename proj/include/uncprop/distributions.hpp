#pragma once
// Probability objects passed between pipeline stages.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "uncprop/core/image.hpp"
#include "uncprop/core/rng.hpp"

namespace uncprop {

/// Network log-variance outputs are clamped to this range before exponentiation.
inline constexpr double kLogVarMin = -15.0;
inline constexpr double kLogVarMax = 15.0;

/// Floor applied to probabilities inside logarithms.
inline constexpr double kProbFloor = 1e-12;

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2*pi)

inline double clamp_log_var(double s) { return std::clamp(s, kLogVarMin, kLogVarMax); }

/// Per-pixel independent Gaussian over an image: x ~ N(mean, exp(log_var)).
class DiagGaussianImage {
 public:
  DiagGaussianImage(Image mean, Image log_var) : mean_(std::move(mean)), log_var_(std::move(log_var)) {
    require_same_shape(mean_, log_var_, "DiagGaussianImage");
    if (!all_finite(mean_.view()) || !all_finite(log_var_.view())) {
      throw std::invalid_argument("DiagGaussianImage: non-finite mean or log-variance");
    }
    for (double s : log_var_.data) {
      const double v = std::exp(s);
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("DiagGaussianImage: variance exp(" + std::to_string(s) +
                                    ") is not positive and finite");
      }
    }
  }

  const Image& mean() const { return mean_; }
  const Image& log_var() const { return log_var_; }
  std::size_t rows() const { return mean_.rows; }
  std::size_t cols() const { return mean_.cols; }

  Image variance() const {
    Image v(rows(), cols());
    std::transform(log_var_.data.begin(), log_var_.data.end(), v.data.begin(),
                   [](double s) { return std::exp(s); });
    return v;
  }

  /// Mean of the per-pixel variances.
  double mean_variance() const {
    double acc = 0.0;
    for (double s : log_var_.data) acc += std::exp(s);
    return acc / static_cast<double>(log_var_.size());
  }

  /// x = mean + sqrt(exp(log_var)) * eps, eps drawn from the stream `seed`
  /// with draw index = pixel index.
  Image sample(const SeedSpec& seed) const {
    Image x(rows(), cols());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; i += 2) {
      const auto eps = normal_pair(seed, i / 2);
      x.data[i] = mean_.data[i] + std::exp(0.5 * log_var_.data[i]) * eps[0];
      if (i + 1 < n) {
        x.data[i + 1] = mean_.data[i + 1] + std::exp(0.5 * log_var_.data[i + 1]) * eps[1];
      }
    }
    return x;
  }

  /// Copy with every log-variance replaced by `s` (used to switch off input uncertainty).
  DiagGaussianImage with_log_var(double s) const {
    return DiagGaussianImage(mean_, Image(rows(), cols(), s));
  }

 private:
  Image mean_;
  Image log_var_;
};

/// Finite mixture of point masses over images. Sampling draws one atom per stream.
class DiscreteImageDist {
 public:
  DiscreteImageDist(std::vector<Image> atoms, std::vector<double> weights)
      : atoms_(std::move(atoms)), weights_(std::move(weights)) {
    if (atoms_.empty() || atoms_.size() != weights_.size()) {
      throw std::invalid_argument("DiscreteImageDist: need one weight per atom");
    }
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw std::invalid_argument("DiscreteImageDist: weights must be finite and non-negative");
      }
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("DiscreteImageDist: weights sum to " + std::to_string(total));
    }
    for (const auto& a : atoms_) require_same_shape(a, atoms_.front(), "DiscreteImageDist");
    cumulative_.resize(weights_.size());
    std::partial_sum(weights_.begin(), weights_.end(), cumulative_.begin());
  }

  const std::vector<Image>& atoms() const { return atoms_; }
  const std::vector<double>& weights() const { return weights_; }

  std::size_t sample_index(const SeedSpec& seed) const {
    const double u = uniform01(seed, 0) * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), atoms_.size() - 1);
  }

  Image sample(const SeedSpec& seed) const { return atoms_[sample_index(seed)]; }

 private:
  std::vector<Image> atoms_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

/// Gaussian over a scalar target; for a downstream regression head this is (y_hat, delta).
struct ScalarGaussian {
  double mean = 0.0;
  double log_var = 0.0;

  double variance() const { return std::exp(log_var); }

  void validate() const {
    if (!std::isfinite(mean) || !std::isfinite(log_var) || !(std::exp(log_var) > 0.0) ||
        !std::isfinite(std::exp(log_var))) {
      throw std::invalid_argument("ScalarGaussian: non-finite mean or log-variance");
    }
  }
};

/// Entropy in nats with 0 log 0 = 0 and a floor inside the logarithm.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(std::max(p, kProbFloor));
  }
  return h;
}

struct CategoricalDist {
  std::vector<double> probs;

  std::size_t num_classes() const { return probs.size(); }

  void validate() const {
    if (probs.size() < 2) throw std::invalid_argument("CategoricalDist: need at least 2 classes");
    double total = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("CategoricalDist: probability " + std::to_string(p) +
                                    " outside [0, 1]");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("CategoricalDist: probabilities sum to " + std::to_string(total));
    }
  }

  double entropy() const { return uncprop::entropy(probs); }

  /// Most probable class; ties go to the lowest index.
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
};

/// Negative log density of N(pred.mean, exp(pred.log_var)) at `target`, constant included.
inline double gaussian_nll(const ScalarGaussian& pred, double target) {
  pred.validate();
  if (!std::isfinite(target)) throw std::invalid_argument("gaussian_nll: non-finite target");
  const double r = target - pred.mean;
  return kHalfLog2Pi + 0.5 * pred.log_var + 0.5 * r * r * std::exp(-pred.log_var);
}

/// Mean per-pixel Gaussian NLL.
inline double image_nll(const DiagGaussianImage& pred, const Image& target) {
  require_same_shape(pred.mean(), target, "image_nll");
  if (!all_finite(target.view())) throw std::invalid_argument("image_nll: non-finite target");
  const auto& m = pred.mean().data;
  const auto& s = pred.log_var().data;
  double acc = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double r = target.data[i] - m[i];
    acc += kHalfLog2Pi + 0.5 * s[i] + 0.5 * r * r * std::exp(-s[i]);
  }
  return acc / static_cast<double>(m.size());
}

}  // namespace uncprop
