#pragma once
// Monte Carlo marginalization of an upstream image distribution through a
// downstream model:
//
//   p(y|z) = \int p(y|x) p(x|z) dx  ~  (1/T) sum_t p(y|x_t),   x_t ~ p(x|z)
//
// Regression heads return (y_hat_t, delta_t) with Delta_t = exp(delta_t); the
// joint variance splits into the spread of the y_hat_t (propagated part) and
// the mean of the Delta_t (downstream part). Classification heads return a
// categorical per sample; the entropy of the mean splits into the mean entropy
// (downstream part) and the mutual information (propagated part).
//
// Sample t always uses stream seed.stream_id + t, and every reduction sums its
// terms in ascending order, so results do not depend on the order or the
// number of threads that evaluated the samples.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "uncprop/core/errors.hpp"
#include "uncprop/core/image.hpp"
#include "uncprop/core/parallel.hpp"
#include "uncprop/core/rng.hpp"
#include "uncprop/distributions.hpp"

namespace uncprop {

template <typename D>
concept ImageSampler = requires(const D& d, const SeedSpec& s) {
  { d.sample(s) } -> std::convertible_to<Image>;
};

template <typename F>
concept RegressionHead = std::is_invocable_r_v<ScalarGaussian, const F&, const Image&>;

template <typename F>
concept ClassificationHead = std::is_invocable_r_v<CategoricalDist, const F&, const Image&>;

struct McConfig {
  std::size_t num_samples = 256;
  SeedSpec seed{};
  unsigned threads = 1;
};

struct RegressionJoint {
  double mu_hat = 0.0;     // mean of y_hat_t
  double var_prop = 0.0;   // unbiased sample variance of y_hat_t
  double mu_delta = 0.0;   // mean of exp(delta_t)
  double var_joint = 0.0;  // var_prop + mu_delta
};

struct ClassificationJoint {
  CategoricalDist mean_probs;
  double entropy = 0.0;       // H of mean_probs
  double cond_entropy = 0.0;  // mean of per-sample entropies
  double mutual_info = 0.0;   // entropy - cond_entropy
};

namespace detail {

inline double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc;
}

// Shifted by the smallest element, so a constant sample averages to itself exactly.
inline double sorted_mean(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double lo = v.front();
  double acc = 0.0;
  for (double x : v) acc += x - lo;
  return lo + acc / static_cast<double>(v.size());
}

inline double sample_stddev(const std::vector<double>& v) {
  const double m = sorted_mean(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return std::sqrt(sorted_sum(std::move(sq)) / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Aggregation of per-sample downstream outputs

inline RegressionJoint aggregate_regression(std::span<const ScalarGaussian> samples) {
  const std::size_t T = samples.size();
  if (T < 2) throw std::invalid_argument("aggregate_regression: need at least 2 samples");
  std::vector<double> y(T), delta(T);
  for (std::size_t t = 0; t < T; ++t) {
    y[t] = samples[t].mean;
    delta[t] = std::exp(samples[t].log_var);
  }
  RegressionJoint j;
  j.mu_hat = detail::sorted_mean(y);
  std::vector<double> sq(T);
  for (std::size_t t = 0; t < T; ++t) sq[t] = (y[t] - j.mu_hat) * (y[t] - j.mu_hat);
  j.var_prop = detail::sorted_sum(std::move(sq)) / static_cast<double>(T - 1);
  j.mu_delta = detail::sorted_mean(std::move(delta));
  j.var_joint = j.var_prop + j.mu_delta;
  if (!std::isfinite(j.var_joint) || !std::isfinite(j.mu_hat)) {
    throw NumericalError("aggregate_regression: non-finite aggregate");
  }
  return j;
}

inline ClassificationJoint aggregate_classification(std::span<const CategoricalDist> samples) {
  const std::size_t T = samples.size();
  if (T == 0) throw std::invalid_argument("aggregate_classification: no samples");
  const std::size_t C = samples.front().num_classes();
  for (const auto& s : samples) {
    if (s.num_classes() != C) {
      throw std::invalid_argument("aggregate_classification: inconsistent class count (" +
                                  std::to_string(s.num_classes()) + " vs " + std::to_string(C) + ")");
    }
    s.validate();
  }
  ClassificationJoint j;
  j.mean_probs.probs.resize(C);
  std::vector<double> column(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) column[t] = samples[t].probs[c];
    j.mean_probs.probs[c] = detail::sorted_mean(column);
  }
  std::vector<double> h(T);
  for (std::size_t t = 0; t < T; ++t) h[t] = samples[t].entropy();
  j.entropy = j.mean_probs.entropy();
  j.cond_entropy = detail::sorted_mean(std::move(h));
  j.mutual_info = j.entropy - j.cond_entropy;
  return j;
}

/// Sample covariance between y_hat_t and Delta_t. Not part of the joint
/// variance; exposed to inspect how strongly the two parts co-vary.
inline double prediction_residual_covariance(std::span<const ScalarGaussian> samples) {
  const std::size_t T = samples.size();
  if (T < 2) throw std::invalid_argument("prediction_residual_covariance: need at least 2 samples");
  std::vector<double> y(T), d(T);
  for (std::size_t t = 0; t < T; ++t) {
    y[t] = samples[t].mean;
    d[t] = std::exp(samples[t].log_var);
  }
  const double my = detail::sorted_mean(y);
  const double md = detail::sorted_mean(d);
  std::vector<double> prod(T);
  for (std::size_t t = 0; t < T; ++t) prod[t] = (y[t] - my) * (d[t] - md);
  return detail::sorted_sum(std::move(prod)) / static_cast<double>(T - 1);
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation

/// Draws x_t from `upstream` and evaluates `f` on each, t = 0..T-1.
template <ImageSampler Upstream, typename F>
auto mc_outputs(const Upstream& upstream, const F& f, const McConfig& cfg) {
  using Out = std::invoke_result_t<const F&, const Image&>;
  if (cfg.num_samples == 0) throw std::invalid_argument("mc_outputs: num_samples must be positive");
  std::vector<Out> out(cfg.num_samples);
  parallel_for(cfg.num_samples, cfg.threads, [&](std::size_t t) {
    const SeedSpec s{cfg.seed.master_seed, cfg.seed.stream_id + t};
    out[t] = f(upstream.sample(s));
  });
  if constexpr (std::is_same_v<Out, ScalarGaussian>) {
    for (const auto& o : out) {
      if (!std::isfinite(o.mean) || !std::isfinite(o.log_var)) {
        throw NumericalError("mc_outputs: downstream produced a non-finite output");
      }
    }
  }
  return out;
}

template <ImageSampler Upstream, RegressionHead F>
RegressionJoint propagate_regression(const Upstream& upstream, const F& f, const McConfig& cfg) {
  if (cfg.num_samples < 2) {
    throw std::invalid_argument("propagate_regression: need T >= 2, got " +
                                std::to_string(cfg.num_samples));
  }
  const auto out = mc_outputs(upstream, f, cfg);
  return aggregate_regression(out);
}

template <ImageSampler Upstream, ClassificationHead F>
ClassificationJoint propagate_classification(const Upstream& upstream, const F& f,
                                             const McConfig& cfg) {
  const auto out = mc_outputs(upstream, f, cfg);
  return aggregate_classification(out);
}

// ---------------------------------------------------------------------------
// Exact marginalization over a discrete upstream (brute-force reference)

inline constexpr std::size_t kMaxOracleSupport = 64;

/// Enumerates every atom. Regression returns the law-of-total-variance split
/// Var[E[y|x]] + E[Var[y|x]]; classification returns exact mixture entropies.
template <typename F>
auto marginal_oracle_discrete(const DiscreteImageDist& support, const F& f) {
  using Out = std::invoke_result_t<const F&, const Image&>;
  const auto& atoms = support.atoms();
  const auto& w = support.weights();
  if (atoms.size() > kMaxOracleSupport) {
    throw std::invalid_argument("marginal_oracle_discrete: support larger than " +
                                std::to_string(kMaxOracleSupport));
  }
  std::vector<Out> vals;
  vals.reserve(atoms.size());
  for (const auto& a : atoms) vals.push_back(f(a));

  if constexpr (std::is_same_v<Out, ScalarGaussian>) {
    RegressionJoint j;
    for (std::size_t i = 0; i < vals.size(); ++i) j.mu_hat += w[i] * vals[i].mean;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double d = vals[i].mean - j.mu_hat;
      j.var_prop += w[i] * d * d;
      j.mu_delta += w[i] * vals[i].variance();
    }
    j.var_joint = j.var_prop + j.mu_delta;
    return j;
  } else {
    static_assert(std::is_same_v<Out, CategoricalDist>, "downstream must return ScalarGaussian or CategoricalDist");
    const std::size_t C = vals.front().num_classes();
    ClassificationJoint j;
    j.mean_probs.probs.assign(C, 0.0);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (vals[i].num_classes() != C) {
        throw std::invalid_argument("marginal_oracle_discrete: inconsistent class count");
      }
      for (std::size_t c = 0; c < C; ++c) j.mean_probs.probs[c] += w[i] * vals[i].probs[c];
      j.cond_entropy += w[i] * vals[i].entropy();
    }
    j.entropy = j.mean_probs.entropy();
    j.mutual_info = j.entropy - j.cond_entropy;
    return j;
  }
}

// ---------------------------------------------------------------------------
// Monte Carlo standard errors (delta method for the nonlinear statistics)

struct RegressionStdErrors {
  double mu_hat = 0.0;
  double var_prop = 0.0;
  double mu_delta = 0.0;
  double var_joint = 0.0;
};

struct ClassificationStdErrors {
  std::vector<double> mean_probs;
  double entropy = 0.0;
  double cond_entropy = 0.0;
  double mutual_info = 0.0;
};

inline RegressionStdErrors standard_errors(std::span<const ScalarGaussian> samples) {
  const std::size_t T = samples.size();
  if (T < 3) throw std::invalid_argument("standard_errors: need at least 3 samples");
  const double sqrtT = std::sqrt(static_cast<double>(T));
  std::vector<double> y(T), d(T);
  for (std::size_t t = 0; t < T; ++t) {
    y[t] = samples[t].mean;
    d[t] = samples[t].variance();
  }
  const double my = detail::sorted_mean(y);
  std::vector<double> sq(T);
  for (std::size_t t = 0; t < T; ++t) sq[t] = (y[t] - my) * (y[t] - my);
  RegressionStdErrors se;
  se.mu_hat = detail::sample_stddev(y) / sqrtT;
  se.var_prop = detail::sample_stddev(sq) / sqrtT;
  se.mu_delta = detail::sample_stddev(d) / sqrtT;
  std::vector<double> combined(T);
  for (std::size_t t = 0; t < T; ++t) combined[t] = sq[t] + d[t];
  se.var_joint = detail::sample_stddev(combined) / sqrtT;
  return se;
}

inline ClassificationStdErrors standard_errors(std::span<const CategoricalDist> samples) {
  const std::size_t T = samples.size();
  if (T < 3) throw std::invalid_argument("standard_errors: need at least 3 samples");
  const double sqrtT = std::sqrt(static_cast<double>(T));
  const auto joint = aggregate_classification(samples);
  const std::size_t C = joint.mean_probs.num_classes();
  ClassificationStdErrors se;
  std::vector<double> col(T);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < T; ++t) col[t] = samples[t].probs[c];
    se.mean_probs.push_back(detail::sample_stddev(col) / sqrtT);
  }
  // dH/dm_c = -(log m_c + 1): H is linearized into a per-sample score.
  std::vector<double> grad(C);
  for (std::size_t c = 0; c < C; ++c) {
    grad[c] = -(std::log(std::max(joint.mean_probs.probs[c], kProbFloor)) + 1.0);
  }
  std::vector<double> h_lin(T), h(T), mi_lin(T);
  for (std::size_t t = 0; t < T; ++t) {
    double g = 0.0;
    for (std::size_t c = 0; c < C; ++c) g += grad[c] * samples[t].probs[c];
    h_lin[t] = g;
    h[t] = samples[t].entropy();
    mi_lin[t] = g - h[t];
  }
  se.entropy = detail::sample_stddev(h_lin) / sqrtT;
  se.cond_entropy = detail::sample_stddev(h) / sqrtT;
  se.mutual_info = detail::sample_stddev(mi_lin) / sqrtT;
  return se;
}

}  // namespace uncprop
