#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "uncprop/core/rng.hpp"
#include "uncprop/training.hpp"

using namespace uncprop;

namespace {

Image random_image(std::size_t n, StreamRng& rng) {
  Image img(n, n);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

MlpSpec image_spec(std::size_t n, bool residual) {
  MlpSpec s;
  s.input_dim = n * n;
  s.hidden = {16};
  s.head = HeadKind::image_gaussian;
  s.image_rows = n;
  s.image_cols = n;
  s.residual = residual;
  return s;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Downstream toy: upstream mean encodes the label in pixel 0.
std::vector<DownstreamExample> downstream_toy(std::size_t count, double log_var, std::uint64_t seed) {
  StreamRng rng({seed, 0});
  std::vector<DownstreamExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    Image m = random_image(3, rng);
    DownstreamExample ex{DiagGaussianImage(m, Image(3, 3)), 0.0, 0};
    ex.upstream = ex.upstream.with_log_var(log_var);
    ex.target = 2.0 * m.data[0] - m.data[4];
    ex.label = m.data[0] > 0.5 ? 1 : 0;
    out.push_back(std::move(ex));
  }
  return out;
}

MlpSpec downstream_spec(HeadKind head) {
  MlpSpec s;
  s.input_dim = 9;
  s.hidden = {8};
  s.activation = Activation::tanh;
  s.head = head;
  s.num_classes = 2;
  return s;
}

}  // namespace

TEST(Optimizer, AdamMatchesReferenceUpdate) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  Optimizer opt(cfg, 2);
  std::vector<double> p = {1.0, -2.0};
  // values from an independent evaluation of the bias-corrected update
  opt.step(p, std::vector<double>{0.5, -1.0});
  EXPECT_NEAR(p[0], 0.900000002, 1e-12);
  EXPECT_NEAR(p[1], -1.900000001, 1e-12);
  opt.step(p, std::vector<double>{-0.25, 2.0});
  EXPECT_NEAR(p[0], 0.8733662987078463, 1e-12);
  EXPECT_NEAR(p[1], -1.9366103534720749, 1e-12);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Optimizer, Sgd) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 0.5;
  Optimizer opt(cfg, 2);
  std::vector<double> p = {1.0, 1.0};
  opt.step(p, std::vector<double>{2.0, -4.0});
  EXPECT_DOUBLE_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 3.0);
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  cfg.mc_samples_train = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.epochs = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(TrainUpstream, EmptyAndMismatchedRejected) {
  TrainConfig cfg;
  EXPECT_THROW(train_upstream({}, {}, image_spec(4, false), cfg), std::invalid_argument);
  std::vector<UpstreamExample> bad = {{std::vector<double>(5), Image(4, 4)}};
  EXPECT_THROW(train_upstream(bad, {}, image_spec(4, false), cfg), std::invalid_argument);
}

TEST(TrainUpstream, IdentityTask) {
  StreamRng rng({5, 0});
  std::vector<UpstreamExample> train;
  for (int i = 0; i < 64; ++i) {
    Image x = random_image(4, rng);
    train.push_back({x.data, x});
  }
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 16;
  cfg.epochs = 60;
  cfg.seed = 3;
  const auto res = train_upstream(train, {}, image_spec(4, true), cfg);
  double var = 0.0, l2 = 0.0;
  for (const auto& ex : train) {
    const auto pred = res.model.forward_image(ex.input);
    var += pred.mean_variance();
    double se = 0.0;
    for (std::size_t i = 0; i < ex.target.size(); ++i) se += std::pow(pred.mean().data[i] - ex.target.data[i], 2);
    l2 += std::sqrt(se / static_cast<double>(ex.target.size()));
  }
  EXPECT_LT(var / train.size(), 0.05);
  EXPECT_LT(l2 / train.size(), 0.05);
  EXPECT_LT(res.log.back().train_nll, 0.8 * res.log.front().train_nll);
}

TEST(TrainUpstream, ConstantTarget) {
  StreamRng rng({6, 0});
  Image c(4, 4);
  for (double& v : c.data) v = 0.7;
  std::vector<UpstreamExample> train;
  for (int i = 0; i < 64; ++i) train.push_back({random_image(4, rng).data, c});
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 16;
  cfg.epochs = 400;
  cfg.seed = 4;
  const auto res = train_upstream(train, {}, image_spec(4, false), cfg);
  const auto pred = res.model.forward_image(random_image(4, rng).data);
  for (double m : pred.mean().data) EXPECT_NEAR(m, 0.7, 1e-2);
}

TEST(TrainUpstream, HeteroscedasticToy) {
  // std 0.3 on the left half, 0.05 on the right
  const std::size_t n = 6;
  StreamRng rng({7, 0});
  std::vector<double> true_std(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) true_std[r * n + c] = c < n / 2 ? 0.3 : 0.05;
  std::vector<UpstreamExample> train;
  for (int i = 0; i < 400; ++i) {
    Image x = random_image(n, rng);
    Image y = x;
    for (std::size_t k = 0; k < y.size(); ++k) y.data[k] += true_std[k] * rng.normal();
    train.push_back({x.data, y});
  }
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.epochs = 40;
  cfg.seed = 8;
  const auto res = train_upstream(train, {}, image_spec(n, true), cfg);
  std::vector<double> learned(n * n, 0.0);
  for (int i = 0; i < 50; ++i) {
    const auto pred = res.model.forward_image(random_image(n, rng).data);
    const Image v = pred.variance();
    for (std::size_t k = 0; k < learned.size(); ++k) learned[k] += std::sqrt(v.data[k]) / 50.0;
  }
  EXPECT_GT(pearson(learned, true_std), 0.8);
}

TEST(TrainUpstream, DeterministicAcrossThreads) {
  StreamRng rng({9, 0});
  std::vector<UpstreamExample> train;
  for (int i = 0; i < 40; ++i) {
    Image x = random_image(4, rng);
    train.push_back({x.data, x});
  }
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 7;
  cfg.seed = 1;
  cfg.threads = 1;
  const auto a = train_upstream(train, {}, image_spec(4, false), cfg);
  cfg.threads = 4;
  const auto b = train_upstream(train, {}, image_spec(4, false), cfg);
  EXPECT_EQ(a.model.store().params, b.model.store().params);
}

TEST(TrainDownstream, ZeroVarianceReducesToPlainLoss) {
  const auto data = downstream_toy(10, -50.0, 11);
  for (HeadKind head : {HeadKind::scalar_gaussian, HeadKind::softmax}) {
    Mlp net(downstream_spec(head), 12);
    for (const auto& ex : data) {
      const double mc = downstream_example_loss(net, ex, {1, 0}, 8, McObjective::aggregate, {});
      const auto x = ex.upstream.mean().data;
      const double plain = head == HeadKind::softmax
                               ? -std::log(net.forward_categorical(x).probs[ex.label])
                               : gaussian_nll(net.forward_scalar(x), ex.target);
      EXPECT_NEAR(mc, plain, 1e-9);
    }
  }
}

TEST(TrainDownstream, AggregateGradientMatchesFiniteDifferences) {
  const auto data = downstream_toy(3, std::log(0.05), 13);
  for (HeadKind head : {HeadKind::scalar_gaussian, HeadKind::softmax}) {
    for (McObjective obj : {McObjective::aggregate, McObjective::per_sample}) {
      Mlp net(downstream_spec(head), 14);
      const SeedSpec seed{21, 0};
      std::vector<double> grad(net.params().size(), 0.0);
      downstream_example_loss(net, data[0], seed, 8, obj, grad);
      StreamRng rng({15, 0});
      for (int k = 0; k < 20; ++k) {
        const std::size_t i = rng.below(grad.size());
        const double h = 1e-4, p0 = net.params()[i];
        net.params()[i] = p0 + h;
        const double up = downstream_example_loss(net, data[0], seed, 8, obj, {});
        net.params()[i] = p0 - h;
        const double dn = downstream_example_loss(net, data[0], seed, 8, obj, {});
        net.params()[i] = p0;
        const double fd = (up - dn) / (2 * h);
        EXPECT_LT(std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i])), 1e-3)
            << "param " << i;
      }
    }
  }
}

TEST(TrainDownstream, PerSampleObjectiveIsMeanOfSampleLosses) {
  const auto data = downstream_toy(1, std::log(0.1), 16);
  Mlp net(downstream_spec(HeadKind::scalar_gaussian), 17);
  const SeedSpec seed{3, 0};
  const double got = downstream_example_loss(net, data[0], seed, 8, McObjective::per_sample, {});
  double want = 0.0;
  for (std::size_t t = 0; t < 8; ++t) {
    const Image x = data[0].upstream.sample({seed.master_seed, seed.stream_id + t});
    want += gaussian_nll(net.forward_scalar(x.data), data[0].target) / 8.0;
  }
  EXPECT_NEAR(got, want, 1e-12);
}

TEST(TrainDownstream, LearnsAndIsThreadIndependent) {
  const auto train = downstream_toy(200, std::log(0.01), 18);
  const auto val = downstream_toy(50, std::log(0.01), 19);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.epochs = 15;
  cfg.seed = 20;
  cfg.threads = 1;
  const auto a = train_downstream(train, val, downstream_spec(HeadKind::softmax), cfg);
  cfg.threads = 3;
  const auto b = train_downstream(train, val, downstream_spec(HeadKind::softmax), cfg);
  EXPECT_EQ(a.model.store().params, b.model.store().params);
  EXPECT_LT(a.log.back().train_nll, 0.8 * a.log.front().train_nll);
  std::size_t hits = 0;
  for (const auto& ex : val) hits += a.model.forward_categorical(ex.upstream.mean().data).argmax() == ex.label;
  EXPECT_GE(hits, 45u);
}

TEST(TrainDownstream, ShapeMismatchRejected) {
  const auto train = downstream_toy(4, 0.0, 1);
  auto spec = downstream_spec(HeadKind::scalar_gaussian);
  spec.input_dim = 10;
  EXPECT_THROW(train_downstream(train, {}, spec, TrainConfig{}), std::invalid_argument);
}
