#pragma once
// Heteroscedastic training loops.
//
// Upstream: image NLL of (degraded input -> ground truth) pairs.
// Downstream: for every example, T samples are drawn from the frozen upstream
// output distribution, passed through the downstream network, and the joint
// loss over the T outputs is backpropagated through all of them.
//
// Per-example gradients are summed into a fixed number of contiguous chunks,
// and chunks are added in index order, so the result does not depend on the
// number of worker threads.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "uncprop/core/errors.hpp"
#include "uncprop/core/parallel.hpp"
#include "uncprop/core/rng.hpp"
#include "uncprop/distributions.hpp"
#include "uncprop/losses.hpp"
#include "uncprop/models.hpp"

namespace uncprop {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t mc_samples_train = 8;
  std::size_t mc_samples_eval = 256;
  McObjective objective = McObjective::aggregate;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be positive");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
      throw std::invalid_argument("TrainConfig: invalid Adam hyperparameters");
    }
    if (mc_samples_train < 2) throw std::invalid_argument("TrainConfig: mc_samples_train must be >= 2");
    if (mc_samples_eval < 2) throw std::invalid_argument("TrainConfig: mc_samples_eval must be >= 2");
  }
};

/// Plain SGD or Adam over a flat parameter vector.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg) {
    if (cfg_.optimizer == OptimizerKind::adam) {
      m_.assign(n, 0.0);
      v_.assign(n, 0.0);
    }
  }

  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Optimizer::step: size mismatch");
    const double lr = cfg_.learning_rate;
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
      return;
    }
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }

  std::size_t steps() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Mlp model;
  std::vector<EpochLog> log;
};

struct UpstreamExample {
  std::vector<double> input;  // degraded image (+ optional side information)
  Image target;
};

/// Frozen upstream output for one downstream training example.
struct DownstreamExample {
  DiagGaussianImage upstream;
  double target = 0.0;    // regression
  std::size_t label = 0;  // classification
};

using EpochCallback = std::function<void(const EpochLog&)>;

namespace detail {

inline constexpr std::size_t kGradChunks = 8;

/// One loss evaluation: returns the loss and accumulates its gradient into `grad`.
using ExampleGrad = std::function<double(std::size_t epoch, std::size_t example, std::span<double> grad)>;

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  StreamRng rng(SeedSpec{derive_seed(seed, 0x5348554Full, epoch), 0});  // "SHUF"
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

inline void check_finite_loss(double loss, const char* stage, std::size_t epoch, std::size_t example) {
  if (!std::isfinite(loss)) {
    throw NumericalError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) +
                         ", example " + std::to_string(example));
  }
}

/// Generic minibatch loop shared by both stages.
inline std::vector<EpochLog> run_epochs(Mlp& model, std::size_t n_train, const TrainConfig& cfg,
                                        const ExampleGrad& train_grad,
                                        const std::function<double()>& val_loss, const char* stage,
                                        const EpochCallback& on_epoch) {
  const std::size_t P = model.store().size();
  Optimizer opt(cfg, P);
  std::vector<EpochLog> log;
  std::vector<std::vector<double>> chunk_grads(kGradChunks, std::vector<double>(P));
  std::vector<double> chunk_loss(kGradChunks);
  std::vector<double> grad(P);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(n_train, cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n_train; begin += cfg.batch_size) {
      const std::size_t end = std::min(n_train, begin + cfg.batch_size);
      const std::size_t B = end - begin;
      parallel_for(kGradChunks, cfg.threads, [&](std::size_t c) {
        auto& g = chunk_grads[c];
        std::fill(g.begin(), g.end(), 0.0);
        chunk_loss[c] = 0.0;
        for (std::size_t k = begin + c * B / kGradChunks; k < begin + (c + 1) * B / kGradChunks; ++k) {
          const double l = train_grad(epoch, order[k], g);
          check_finite_loss(l, stage, epoch, order[k]);
          chunk_loss[c] += l;
        }
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t c = 0; c < kGradChunks; ++c) {
        for (std::size_t i = 0; i < P; ++i) grad[i] += chunk_grads[c][i];
        epoch_loss += chunk_loss[c];
      }
      const double inv_b = 1.0 / static_cast<double>(B);
      for (double& g : grad) g *= inv_b;
      opt.step(model.params(), grad);
    }
    for (double p : model.params()) {
      if (!std::isfinite(p)) {
        throw NumericalError(std::string(stage) + ": parameters diverged at epoch " + std::to_string(epoch));
      }
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_nll = epoch_loss / static_cast<double>(n_train);
    e.val_nll = val_loss ? val_loss() : 0.0;
    e.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace detail

/// Trains an image-Gaussian network by minimizing the mean image NLL.
inline TrainResult train_upstream(const std::vector<UpstreamExample>& train,
                                  const std::vector<UpstreamExample>& val, const MlpSpec& spec,
                                  const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_upstream: empty dataset");
  if (spec.head != HeadKind::image_gaussian) throw std::invalid_argument("train_upstream: needs an image_gaussian head");
  for (const auto& ex : train) {
    if (ex.input.size() != spec.input_dim || ex.target.rows != spec.image_rows || ex.target.cols != spec.image_cols) {
      throw std::invalid_argument("train_upstream: example shape does not match the model spec");
    }
  }
  TrainResult result{Mlp(spec, derive_seed(cfg.seed, 0x494E4954ull)), {}};  // "INIT"
  Mlp& model = result.model;

  const detail::ExampleGrad grad_fn = [&](std::size_t, std::size_t i, std::span<double> g) {
    Tape tape;
    const auto pred = model.forward_image(train[i].input, &tape);
    const auto lg = image_nll_grad(pred, train[i].target);
    model.backward(tape, lg.grad, g);
    return lg.loss;
  };
  const auto val_fn = [&]() {
    if (val.empty()) return 0.0;
    std::vector<double> losses(val.size());
    parallel_for(val.size(), cfg.threads, [&](std::size_t i) {
      losses[i] = image_nll(model.forward_image(val[i].input), val[i].target);
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(val.size());
  };
  result.log = detail::run_epochs(model, train.size(), cfg, grad_fn, val_fn, "train_upstream", on_epoch);
  return result;
}

/// Seed of the Monte Carlo draws for one downstream example in one epoch.
inline SeedSpec downstream_mc_seed(std::uint64_t seed, std::size_t epoch, std::size_t example) {
  return {derive_seed(seed, 0x44534D43ull, epoch, example), 0};  // "DSMC"
}

/// Joint MC loss of one example; when `grad` is non-empty, accumulates the gradient too.
inline double downstream_example_loss(const Mlp& model, const DownstreamExample& ex, const SeedSpec& seed,
                                      std::size_t T, McObjective objective, std::span<double> grad) {
  const bool need_grad = !grad.empty();
  std::vector<Tape> tapes(need_grad ? T : 0);
  std::vector<std::vector<double>> raws(T);
  for (std::size_t t = 0; t < T; ++t) {
    const Image x = ex.upstream.sample({seed.master_seed, seed.stream_id + t});
    raws[t] = model.forward_raw(x.view(), need_grad ? &tapes[t] : nullptr);
  }
  McLossGrad lg;
  if (model.spec().head == HeadKind::scalar_gaussian) {
    std::vector<ScalarGaussian> outs(T);
    for (std::size_t t = 0; t < T; ++t) outs[t] = model.decode_scalar(raws[t]);
    lg = mc_regression_loss(outs, ex.target, objective);
  } else if (model.spec().head == HeadKind::softmax) {
    std::vector<CategoricalDist> outs(T);
    for (std::size_t t = 0; t < T; ++t) outs[t] = model.decode_categorical(raws[t]);
    lg = mc_classification_loss(outs, ex.label, objective);
  } else {
    throw std::invalid_argument("downstream_example_loss: downstream head must be scalar_gaussian or softmax");
  }
  if (need_grad) {
    for (std::size_t t = 0; t < T; ++t) model.backward(tapes[t], lg.grads[t], grad);
  }
  return lg.loss;
}

/// Trains a downstream network on Monte Carlo samples of frozen upstream outputs.
inline TrainResult train_downstream(const std::vector<DownstreamExample>& train,
                                    const std::vector<DownstreamExample>& val, const MlpSpec& spec,
                                    const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw std::invalid_argument("train_downstream: empty dataset");
  if (spec.head == HeadKind::image_gaussian) throw std::invalid_argument("train_downstream: image head not allowed");
  for (const auto& ex : train) {
    if (ex.upstream.mean().size() != spec.input_dim) {
      throw std::invalid_argument("train_downstream: upstream image size " + std::to_string(ex.upstream.mean().size()) +
                                  " != downstream input_dim " + std::to_string(spec.input_dim));
    }
    if (spec.head == HeadKind::softmax && ex.label >= spec.num_classes) {
      throw std::invalid_argument("train_downstream: label out of range");
    }
  }
  TrainResult result{Mlp(spec, derive_seed(cfg.seed, 0x494E4954ull)), {}};
  Mlp& model = result.model;
  const detail::ExampleGrad grad_fn = [&](std::size_t epoch, std::size_t i, std::span<double> g) {
    return downstream_example_loss(model, train[i], downstream_mc_seed(cfg.seed, epoch, i), cfg.mc_samples_train,
                                   cfg.objective, g);
  };
  const auto val_fn = [&]() {
    if (val.empty()) return 0.0;
    std::vector<double> losses(val.size());
    parallel_for(val.size(), cfg.threads, [&](std::size_t i) {
      losses[i] = downstream_example_loss(model, val[i], downstream_mc_seed(cfg.seed, ~std::size_t{0}, i),
                                          cfg.mc_samples_train, McObjective::aggregate, {});
    });
    return std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(val.size());
  };
  result.log = detail::run_epochs(model, train.size(), cfg, grad_fn, val_fn, "train_downstream", on_epoch);
  return result;
}

}  // namespace uncprop
