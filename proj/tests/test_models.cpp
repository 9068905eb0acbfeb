#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "uncprop/core/parallel.hpp"
#include "uncprop/losses.hpp"
#include "uncprop/models.hpp"

using namespace uncprop;

namespace {

MlpSpec tiny_spec(HeadKind head) {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden = {4};
  s.head = head;
  s.num_classes = 2;
  return s;
}

// Hand-set 2-4-2 network.
std::vector<double> tiny_params() {
  return {
      1, 0, 0, 1, 1, 1, 1, -1,    // W1 (4x2)
      0, 0.5, 0, -1,              // b1
      1, 2, 3, 4, -1, 0, 1, 0.5,  // W2 (2x4)
      0.1, -0.1,                  // b2
  };
}

// Relative-error gradient check against central differences on `count` random parameters.
void check_gradient(Mlp& net, const std::function<double()>& loss, const std::vector<double>& analytic,
                    std::uint64_t seed, int count = 20) {
  StreamRng rng({seed, 0});
  const double h = 1e-4;
  for (int k = 0; k < count; ++k) {
    const std::size_t i = rng.below(net.params().size());
    const double saved = net.params()[i];
    net.params()[i] = saved + h;
    const double up = loss();
    net.params()[i] = saved - h;
    const double down = loss();
    net.params()[i] = saved;
    const double fd = (up - down) / (2 * h);
    EXPECT_LT(std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8), 1e-3)
        << "param " << i << " analytic " << analytic[i] << " fd " << fd;
  }
}

}  // namespace

TEST(MlpSpec, Validation) {
  MlpSpec s = tiny_spec(HeadKind::softmax);
  s.hidden.clear();
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny_spec(HeadKind::softmax);
  s.num_classes = 1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = tiny_spec(HeadKind::image_gaussian);
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Forward, ZeroOutputLayerGivesUniformSoftmax) {
  MlpSpec s = tiny_spec(HeadKind::softmax);
  s.num_classes = 5;
  Mlp net(s, 3);
  net.zero_output_layer();
  const auto p = net.forward_categorical(std::vector<double>{0.3, -1.2});
  for (double v : p.probs) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Forward, FreshLogVarianceHeadHasUnitVariance) {
  MlpSpec s;
  s.input_dim = 6;
  s.hidden = {5, 3};
  s.head = HeadKind::image_gaussian;
  s.image_rows = 2;
  s.image_cols = 3;
  Mlp net(s, 11);
  const auto d = net.forward_image(std::vector<double>{1, 2, 3, 4, 5, 6});
  for (double v : d.variance().data) EXPECT_EQ(v, 1.0);

  Mlp reg(tiny_spec(HeadKind::scalar_gaussian), 2);
  EXPECT_EQ(reg.forward_scalar(std::vector<double>{0.7, 0.1}).variance(), 1.0);
}

TEST(Forward, HandComputedTinyNetwork) {
  // x = (1, -2): pre = (1, -1.5, -1, 2) -> h = (1, 0, 0, 2) -> raw = (9.1, -0.1)
  const std::vector<double> x{1.0, -2.0};
  const Mlp soft(tiny_spec(HeadKind::softmax), tiny_params());
  EXPECT_EQ(soft.forward_raw(x), (std::vector<double>{9.1, -0.1}));
  const auto p = soft.forward_categorical(x);
  EXPECT_NEAR(p.probs[0], 1.0 / (1.0 + std::exp(-9.2)), 1e-15);

  const Mlp reg(tiny_spec(HeadKind::scalar_gaussian), tiny_params());
  const auto g = reg.forward_scalar(x);
  EXPECT_DOUBLE_EQ(g.mean, 9.1);
  EXPECT_DOUBLE_EQ(g.log_var, -0.1);

  MlpSpec t = tiny_spec(HeadKind::scalar_gaussian);
  t.activation = Activation::tanh;
  const Mlp th(t, tiny_params());
  const double h0 = std::tanh(1.0), h1 = std::tanh(-1.5), h2 = std::tanh(-1.0), h3 = std::tanh(2.0);
  EXPECT_NEAR(th.forward_scalar(x).mean, h0 + 2 * h1 + 3 * h2 + 4 * h3 + 0.1, 1e-14);
}

TEST(Forward, ScalarHeadTargetAffine) {
  MlpSpec s = tiny_spec(HeadKind::scalar_gaussian);
  s.target_shift = 100.0;
  s.target_scale = 10.0;
  const Mlp net(s, tiny_params());
  const auto g = net.forward_scalar(std::vector<double>{1.0, -2.0});
  EXPECT_DOUBLE_EQ(g.mean, 191.0);
  EXPECT_NEAR(g.log_var, -0.1 + 2 * std::log(10.0), 1e-14);
}

TEST(Forward, ShapeMismatch) {
  const Mlp net(tiny_spec(HeadKind::softmax), 1);
  EXPECT_THROW(net.forward_raw(std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(net.forward_scalar(std::vector<double>{1, 2}), std::invalid_argument);
}

TEST(Forward, LogVarianceIsClamped) {
  MlpSpec s = tiny_spec(HeadKind::scalar_gaussian);
  Mlp net(s, 1);
  for (double& p : net.params()) p = 50.0;
  for (double sign : {1.0, -1.0}) {
    const auto g = net.forward_scalar(std::vector<double>{sign * 10, sign * 10});
    EXPECT_GE(g.variance(), std::exp(kLogVarMin));
    EXPECT_LE(g.variance(), std::exp(kLogVarMax));
  }
  for (double& p : net.params()) p = -50.0;
  const auto g = net.forward_scalar(std::vector<double>{-10, -10});
  EXPECT_GE(g.log_var, kLogVarMin);
}

TEST(Forward, ConcurrentInferenceMatchesSequential) {
  MlpSpec s = tiny_spec(HeadKind::softmax);
  s.input_dim = 16;
  s.hidden = {32, 8};
  s.num_classes = 4;
  const Mlp net(s, 99);
  std::vector<std::vector<double>> inputs(200, std::vector<double>(16));
  StreamRng rng({1, 1});
  for (auto& v : inputs)
    for (double& x : v) x = rng.normal();
  std::vector<std::vector<double>> a(200), b(200);
  for (std::size_t i = 0; i < 200; ++i) a[i] = net.forward_raw(inputs[i]);
  parallel_for(200, 6, [&](std::size_t i) { b[i] = net.forward_raw(inputs[i]); });
  EXPECT_EQ(a, b);
}

TEST(Backward, RequiresForward) {
  const Mlp net(tiny_spec(HeadKind::softmax), 1);
  std::vector<double> grad(net.params().size());
  Tape empty;
  EXPECT_THROW(net.backward(empty, std::vector<double>{1.0, 0.0}, grad), std::logic_error);
}

TEST(Backward, ZeroHeadGradientGivesZeroParameterGradient) {
  const Mlp net(tiny_spec(HeadKind::scalar_gaussian), 4);
  Tape tape;
  net.forward_raw(std::vector<double>{0.4, 0.9}, &tape);
  std::vector<double> grad(net.params().size(), 0.0);
  net.backward(tape, std::vector<double>{0.0, 0.0}, grad);
  for (double g : grad) EXPECT_EQ(g, 0.0);
}

TEST(Backward, SoftmaxCrossEntropyAtUniform) {
  Mlp net(tiny_spec(HeadKind::softmax), 4);
  net.zero_output_layer();
  const auto p = net.forward_categorical(std::vector<double>{0.4, 0.9});
  const auto lg = cross_entropy_grad(p, 1);
  EXPECT_NEAR(lg.grad.d_logits[0], 0.5, 1e-15);
  EXPECT_NEAR(lg.grad.d_logits[1], -0.5, 1e-15);
  EXPECT_NEAR(lg.loss, std::log(2.0), 1e-15);
}

TEST(Backward, FiniteDifferenceScalarNll) {
  for (Activation act : {Activation::relu, Activation::tanh}) {
    MlpSpec s;
    s.input_dim = 5;
    s.hidden = {7, 6};
    s.activation = act;
    s.head = HeadKind::scalar_gaussian;
    s.target_shift = 0.5;
    s.target_scale = 2.0;
    Mlp net(s, 21);
    StreamRng rng({21, 3});
    for (double& p : net.params()) p += 0.2 * rng.normal();
    const std::vector<double> x{0.3, -0.1, 0.8, 0.05, -0.6};
    const double y = 1.7;
    auto loss = [&] { return gaussian_nll(net.forward_scalar(x), y); };
    Tape tape;
    const auto out = net.forward_scalar(x, &tape);
    std::vector<double> grad(net.params().size(), 0.0);
    net.backward(tape, scalar_nll_grad(out, y).grad, grad);
    check_gradient(net, loss, grad, 5);
  }
}

TEST(Backward, FiniteDifferenceImageNll) {
  MlpSpec s;
  s.input_dim = 9;
  s.hidden = {8};
  s.head = HeadKind::image_gaussian;
  s.image_rows = 3;
  s.image_cols = 3;
  s.residual = true;
  s.activation = Activation::tanh;
  Mlp net(s, 8);
  StreamRng rng({8, 3});
  for (double& p : net.params()) p += 0.2 * rng.normal();
  std::vector<double> x(9);
  Image target(3, 3);
  for (std::size_t i = 0; i < 9; ++i) {
    x[i] = rng.uniform();
    target.data[i] = x[i] + 0.1 * rng.normal();
  }
  auto loss = [&] { return image_nll(net.forward_image(x), target); };
  Tape tape;
  const auto out = net.forward_image(x, &tape);
  std::vector<double> grad(net.params().size(), 0.0);
  net.backward(tape, image_nll_grad(out, target).grad, grad);
  check_gradient(net, loss, grad, 6);
}

TEST(Backward, FiniteDifferenceCrossEntropy) {
  MlpSpec s = tiny_spec(HeadKind::softmax);
  s.input_dim = 4;
  s.hidden = {6};
  s.num_classes = 3;
  s.activation = Activation::tanh;
  Mlp net(s, 13);
  const std::vector<double> x{0.2, -0.4, 0.9, 0.1};
  auto loss = [&] { return cross_entropy_grad(net.forward_categorical(x), 2).loss; };
  Tape tape;
  const auto out = net.forward_categorical(x, &tape);
  std::vector<double> grad(net.params().size(), 0.0);
  net.backward(tape, cross_entropy_grad(out, 2).grad, grad);
  check_gradient(net, loss, grad, 7);
}

TEST(Backward, ClampedLogVarianceHasZeroGradient) {
  Mlp net(tiny_spec(HeadKind::scalar_gaussian), 1);
  Tape tape;
  net.params().back() = 40.0;  // delta bias far above the clamp
  const auto out = net.forward_scalar(std::vector<double>{0.0, 0.0}, &tape);
  EXPECT_EQ(out.log_var, kLogVarMax);
  const auto d = net.raw_gradient(tape, scalar_nll_grad(out, 0.0).grad);
  EXPECT_EQ(d[1], 0.0);
}
