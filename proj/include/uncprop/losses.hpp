#pragma once
// Training losses together with their gradients on the decoded head outputs.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "uncprop/distributions.hpp"
#include "uncprop/models.hpp"
#include "uncprop/propagation.hpp"

namespace uncprop {

struct LossGrad {
  double loss = 0.0;
  HeadGrad grad;
};

/// Per-sample losses and gradients for a set of Monte Carlo forward passes.
struct McLossGrad {
  double loss = 0.0;
  std::vector<HeadGrad> grads;  // one per sample
};

enum class McObjective {
  aggregate,   // NLL of the T-sample joint distribution
  per_sample,  // mean of per-sample NLLs
};

inline LossGrad image_nll_grad(const DiagGaussianImage& pred, const Image& target) {
  LossGrad out;
  out.loss = image_nll(pred, target);
  const std::size_t n = target.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  out.grad.d_mean.resize(n);
  out.grad.d_log_var.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = target.data[i] - pred.mean().data[i];
    const double inv_var = std::exp(-pred.log_var().data[i]);
    out.grad.d_mean[i] = -r * inv_var * inv_n;
    out.grad.d_log_var[i] = 0.5 * (1.0 - r * r * inv_var) * inv_n;
  }
  return out;
}

inline LossGrad scalar_nll_grad(const ScalarGaussian& pred, double target) {
  LossGrad out;
  out.loss = gaussian_nll(pred, target);
  const double r = target - pred.mean;
  const double inv_var = std::exp(-pred.log_var);
  out.grad.d_mean = {-r * inv_var};
  out.grad.d_log_var = {0.5 * (1.0 - r * r * inv_var)};
  return out;
}

/// -log p(label), with the probability floored at kProbFloor.
inline LossGrad cross_entropy_grad(const CategoricalDist& pred, std::size_t label) {
  if (label >= pred.num_classes()) throw std::invalid_argument("cross_entropy_grad: label out of range");
  LossGrad out;
  out.loss = -std::log(std::max(pred.probs[label], kProbFloor));
  out.grad.d_logits = pred.probs;
  out.grad.d_logits[label] -= 1.0;
  return out;
}

/// Joint regression loss over T samples: NLL of N(mu_hat, var_prop + mu_delta) at the label.
inline McLossGrad mc_regression_loss(std::span<const ScalarGaussian> samples, double target,
                                     McObjective objective = McObjective::aggregate) {
  const std::size_t T = samples.size();
  McLossGrad out;
  out.grads.resize(T);
  if (objective == McObjective::per_sample) {
    if (T == 0) throw std::invalid_argument("mc_regression_loss: no samples");
    const double inv_t = 1.0 / static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) {
      auto lg = scalar_nll_grad(samples[t], target);
      out.loss += lg.loss * inv_t;
      out.grads[t].d_mean = {lg.grad.d_mean[0] * inv_t};
      out.grads[t].d_log_var = {lg.grad.d_log_var[0] * inv_t};
    }
    return out;
  }
  const RegressionJoint j = aggregate_regression(samples);
  const double V = j.var_joint;
  const double r = target - j.mu_hat;
  out.loss = kHalfLog2Pi + 0.5 * std::log(V) + 0.5 * r * r / V;
  const double d_mu = -r / V;
  const double d_var = 0.5 / V - 0.5 * r * r / (V * V);
  const double inv_t = 1.0 / static_cast<double>(T);
  const double inv_t1 = 1.0 / static_cast<double>(T - 1);
  for (std::size_t t = 0; t < T; ++t) {
    out.grads[t].d_mean = {d_mu * inv_t + d_var * 2.0 * (samples[t].mean - j.mu_hat) * inv_t1};
    out.grads[t].d_log_var = {d_var * samples[t].variance() * inv_t};
  }
  return out;
}

/// Joint classification loss over T samples: cross-entropy of the mean probabilities.
inline McLossGrad mc_classification_loss(std::span<const CategoricalDist> samples, std::size_t label,
                                         McObjective objective = McObjective::aggregate) {
  const std::size_t T = samples.size();
  if (T == 0) throw std::invalid_argument("mc_classification_loss: no samples");
  const std::size_t C = samples.front().num_classes();
  if (label >= C) throw std::invalid_argument("mc_classification_loss: label out of range");
  const double inv_t = 1.0 / static_cast<double>(T);
  McLossGrad out;
  out.grads.resize(T);
  if (objective == McObjective::per_sample) {
    for (std::size_t t = 0; t < T; ++t) {
      auto lg = cross_entropy_grad(samples[t], label);
      out.loss += lg.loss * inv_t;
      for (double& g : lg.grad.d_logits) g *= inv_t;
      out.grads[t] = std::move(lg.grad);
    }
    return out;
  }
  const ClassificationJoint j = aggregate_classification(samples);
  const double m = j.mean_probs.probs[label];
  out.loss = -std::log(std::max(m, kProbFloor));
  // d(-log m)/d logit_{t,k} = -(1/(T m)) p_{t,label} (1[k == label] - p_{t,k})
  const double scale = m > kProbFloor ? -inv_t / m : 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const auto& p = samples[t].probs;
    auto& g = out.grads[t].d_logits;
    g.resize(C);
    for (std::size_t k = 0; k < C; ++k) {
      g[k] = scale * p[label] * ((k == label ? 1.0 : 0.0) - p[k]);
    }
  }
  return out;
}

}  // namespace uncprop
