#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "uncprop/core/rng.hpp"
#include "uncprop/metrics.hpp"

using namespace uncprop;

namespace {

Image random_image(std::size_t r, std::size_t c, std::uint64_t seed) {
  StreamRng rng({seed, 0});
  Image x(r, c);
  for (double& v : x.data) v = rng.uniform();
  return x;
}

// Direct sliding-window SSIM: 2-D Gaussian weights, explicit centered moments.
double naive_ssim(const Image& a, const Image& b, const SsimParams& p) {
  const int w = p.window, r = w / 2;
  const double sigma = w / 6.0;
  std::vector<double> k(static_cast<std::size_t>(w * w));
  double total_w = 0.0;
  for (int i = 0; i < w; ++i) {
    for (int j = 0; j < w; ++j) {
      const double v = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2 * sigma * sigma));
      k[static_cast<std::size_t>(i * w + j)] = v;
      total_w += v;
    }
  }
  for (double& v : k) v /= total_w;
  const double c1 = std::pow(p.k1 * p.dynamic_range, 2), c2 = std::pow(p.k2 * p.dynamic_range, 2);
  double sum = 0.0;
  int count = 0;
  for (std::size_t y = 0; y + static_cast<std::size_t>(w) <= a.rows; ++y) {
    for (std::size_t x = 0; x + static_cast<std::size_t>(w) <= a.cols; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
          const double kk = k[static_cast<std::size_t>(i * w + j)];
          ma += kk * a(y + i, x + j);
          mb += kk * b(y + i, x + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j) {
          const double kk = k[static_cast<std::size_t>(i * w + j)];
          const double da = a(y + i, x + j) - ma, db = b(y + i, x + j) - mb;
          va += kk * da * da;
          vb += kk * db * db;
          cov += kk * da * db;
        }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return sum / count;
}

}  // namespace

TEST(Ssim, SelfSimilarityIsOne) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = random_image(12, 10, s);
    EXPECT_NEAR(ssim(x, x, SsimParams::for_reference(x)), 1.0, 1e-12);
  }
  const Image flat(9, 9, 0.3);
  EXPECT_NEAR(ssim(flat, flat, SsimParams::for_reference(flat)), 1.0, 1e-12);
}

TEST(Ssim, AntiCorrelatedStructureIsNegative) {
  Image x(16, 16);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 16; ++c) x(r, c) = std::sin(0.9 * r) * std::cos(0.7 * c);
  Image y = x;
  for (double& v : y.data) v = -v + 2.0;
  SsimParams p;
  p.dynamic_range = 2.0;
  EXPECT_LT(ssim(x, y, p), 0.0);
}

TEST(Ssim, MatchesNaiveSlidingWindow) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_image(8, 8, s);
    const auto b = random_image(8, 8, s + 100);
    const auto p = SsimParams::for_reference(a);
    EXPECT_NEAR(ssim(a, b, p), naive_ssim(a, b, p), 1e-10);
  }
  SsimParams p3;
  p3.window = 3;
  const auto a = random_image(9, 11, 1), b = random_image(9, 11, 2);
  EXPECT_NEAR(ssim(a, b, p3), naive_ssim(a, b, p3), 1e-10);
}

TEST(Ssim, SymmetricAndBoundedProperty) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto a = random_image(10, 10, s);
    auto b = a;
    StreamRng rng({s, 1});
    for (double& v : b.data) v += 0.2 * rng.normal();
    SsimParams p;
    const double ab = ssim(a, b, p);
    EXPECT_NEAR(ab, ssim(b, a, p), 1e-12);
    EXPECT_LE(ab, 1.0);
    EXPECT_LT(ab, 1.0 - 1e-6);
  }
}

TEST(Ssim, Errors) {
  SsimParams p;
  EXPECT_THROW(ssim(Image(8, 8), Image(8, 9), p), std::invalid_argument);
  p.dynamic_range = 0.0;
  EXPECT_THROW(ssim(Image(8, 8), Image(8, 8), p), std::invalid_argument);
  SsimParams even;
  even.window = 6;
  EXPECT_THROW(even.validate(), std::invalid_argument);
  EXPECT_THROW(ssim(Image(5, 5), Image(5, 5), SsimParams{}), std::invalid_argument);
}

TEST(L1L2, HandValues) {
  const auto same = l1_l2(3.0, 3.0);
  EXPECT_EQ(same.l1, 0.0);
  EXPECT_EQ(same.l2, 0.0);
  const std::vector<double> preds{0.0, 2.0}, targets{0.0, 0.0};
  const auto r = l1_l2(preds, targets);
  EXPECT_DOUBLE_EQ(r.l1, 1.0);
  EXPECT_DOUBLE_EQ(r.l2, std::sqrt(2.0));
}

TEST(L1L2, MatchesNaiveLoop) {
  StreamRng rng({8, 0});
  std::vector<double> p(100), t(100);
  double abs_sum = 0, sq_sum = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    p[i] = rng.normal() * 10;
    t[i] = rng.normal() * 10;
    abs_sum += std::abs(p[i] - t[i]);
    sq_sum += (p[i] - t[i]) * (p[i] - t[i]);
  }
  const auto r = l1_l2(p, t);
  EXPECT_EQ(r.l1, abs_sum / 100);
  EXPECT_EQ(r.l2, std::sqrt(sq_sum / 100));
}

TEST(Accuracy, Cases) {
  const std::vector<CategoricalDist> onehot{{{1, 0}}, {{0, 1}}, {{0, 1}}};
  const std::vector<std::size_t> labels{0, 1, 1};
  EXPECT_EQ(accuracy(onehot, labels), 1.0);

  const std::vector<CategoricalDist> uniform{{{0.5, 0.5}}, {{0.5, 0.5}}};
  const std::vector<std::size_t> zeros{0, 0}, ones{1, 1};
  EXPECT_EQ(accuracy(uniform, zeros), 1.0);
  EXPECT_EQ(accuracy(uniform, ones), 0.0);

  EXPECT_THROW(accuracy(std::vector<CategoricalDist>{}, std::vector<std::size_t>{}), std::invalid_argument);
  EXPECT_THROW(accuracy(uniform, labels), std::invalid_argument);
}

TEST(Accuracy, TenMixedInstancesHandCount) {
  const std::vector<CategoricalDist> preds{
      {{0.9, 0.1, 0.0}}, {{0.2, 0.7, 0.1}}, {{0.3, 0.3, 0.4}}, {{0.4, 0.4, 0.2}}, {{0.1, 0.1, 0.8}},
      {{0.6, 0.3, 0.1}}, {{0.2, 0.2, 0.6}}, {{0.0, 1.0, 0.0}}, {{0.34, 0.33, 0.33}}, {{0.25, 0.5, 0.25}}};
  // argmax: 0 1 2 0 2 0 2 1 0 1
  const std::vector<std::size_t> labels{0, 1, 1, 1, 2, 2, 2, 1, 0, 0};
  // hits:   y y n n y n y y y n  -> 6
  EXPECT_DOUBLE_EQ(accuracy(preds, labels), 0.6);
}

TEST(Accuracy, InvariantUnderMonotoneRescaling) {
  StreamRng rng({12, 0});
  std::vector<CategoricalDist> preds(50), squashed(50);
  std::vector<std::size_t> labels(50);
  for (std::size_t i = 0; i < 50; ++i) {
    const double a = rng.uniform(), b = rng.uniform() * (1 - a);
    preds[i].probs = {a, b, 1 - a - b};
    // p -> p^3, renormalized: strictly monotone in each entry
    double z = 0;
    for (double p : preds[i].probs) z += p * p * p;
    for (double p : preds[i].probs) squashed[i].probs.push_back(p * p * p / z);
    labels[i] = rng.below(3);
  }
  EXPECT_EQ(accuracy(preds, labels), accuracy(squashed, labels));
}

TEST(AggregateUncertainty, SqrtOfMeanOrder) {
  const std::vector<double> one{4.0};
  EXPECT_EQ(sqrt_of_mean(one), 2.0);
  const std::vector<double> v{1.0, 3.0};
  EXPECT_DOUBLE_EQ(sqrt_of_mean(v), std::sqrt(2.0));
  EXPECT_GT(std::abs(sqrt_of_mean(v) - (1.0 + std::sqrt(3.0)) / 2.0), 1e-3);
  EXPECT_THROW(sqrt_of_mean(std::vector<double>{}), std::invalid_argument);
}

TEST(AggregateUncertainty, RegressionRowsSingleAndMany) {
  const std::vector<RegressionJoint> one{{1.0, 4.0, 9.0, 13.0}};
  const auto s1 = aggregate_uncertainty(one);
  EXPECT_DOUBLE_EQ(s1.sqrt_var_prop, 2.0);
  EXPECT_DOUBLE_EQ(s1.sqrt_mu_delta, 3.0);
  EXPECT_DOUBLE_EQ(s1.sqrt_var_joint, std::sqrt(13.0));

  const std::vector<RegressionJoint> rows{{0, 484.0, 3588.01, 4072.01}, {0, 400.0, 3600.0, 4000.0}};
  const auto s = aggregate_uncertainty(rows);
  EXPECT_DOUBLE_EQ(s.sqrt_var_prop, std::sqrt(442.0));
  EXPECT_DOUBLE_EQ(s.sqrt_mu_delta, std::sqrt(3594.005));
  EXPECT_DOUBLE_EQ(s.sqrt_var_joint, std::sqrt(4036.005));
  // identity survives: joint^2 = prop^2 + delta^2 on the aggregated columns
  EXPECT_NEAR(s.sqrt_var_joint * s.sqrt_var_joint,
              s.sqrt_var_prop * s.sqrt_var_prop + s.sqrt_mu_delta * s.sqrt_mu_delta, 1e-9);
}

TEST(AggregateUncertainty, ClassificationRowsArePlainMeans) {
  // Rows shaped like the knee table (values in units of 1e-2).
  std::vector<ClassificationJoint> rows(3);
  const double mi[] = {0.32e-2, 0.76e-2, 1.74e-2};
  const double ce[] = {1.63e-2, 2.14e-2, 5.20e-2};
  for (int i = 0; i < 3; ++i) {
    rows[static_cast<std::size_t>(i)].mutual_info = mi[i];
    rows[static_cast<std::size_t>(i)].cond_entropy = ce[i];
    rows[static_cast<std::size_t>(i)].entropy = mi[i] + ce[i];
  }
  const auto s = aggregate_uncertainty(rows);
  EXPECT_NEAR(s.mutual_info, (0.32e-2 + 0.76e-2 + 1.74e-2) / 3, 1e-15);
  EXPECT_NEAR(s.cond_entropy, (1.63e-2 + 2.14e-2 + 5.20e-2) / 3, 1e-15);
  EXPECT_NEAR(s.entropy - s.mutual_info - s.cond_entropy, 0.0, 1e-15);
}
