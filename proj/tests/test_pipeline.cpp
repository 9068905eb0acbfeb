#include <gtest/gtest.h>

#include <cmath>

#include "uncprop/pipeline.hpp"

using namespace uncprop;

namespace {

const std::vector<Acceleration> kAccels = {{2, 0.16}, {4, 0.08}};

const Dataset& small_dataset() {
  static const Dataset ds = generate_dataset({16, 20, 0.3, 77});
  return ds;
}

Mlp upstream_net() { return Mlp(make_upstream_spec(16, {8}, Activation::relu), 1); }

Mlp downstream_net(Task t, std::uint64_t seed = 2) {
  return Mlp(make_downstream_spec(t, 16, {6}, Activation::tanh, 150.0, 40.0), seed);
}

}  // namespace

TEST(Pipeline, UpstreamInputLayout) {
  const auto& e = small_dataset().examples[0];
  const auto z = sample_input(small_dataset().config, e, 4, 0.08);
  const auto in = upstream_input(z);
  ASSERT_EQ(in.size(), 16u * 16u + 16u);
  const Image zf = zero_filled_recon(z);
  for (std::size_t i = 0; i < zf.size(); ++i) EXPECT_EQ(in[i], zf.data[i]);
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(in[256 + c], z.mask[c] ? 1.0 : 0.0);
}

TEST(Pipeline, FullMaskIdentityUpstreamGivesHighSsim) {
  // zero noise, every column kept: after identity training the upstream mean is the image
  const Dataset ds = generate_dataset({16, 12, 0.0, 5});
  std::vector<UpstreamExample> train;
  for (const auto& e : ds.examples) train.push_back({upstream_input(sample_input(ds.config, e, 1.0, 0.5)), e.image});
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 1;
  const Mlp up = train_upstream(train, {}, make_upstream_spec(16, {8}, Activation::relu), cfg).model;
  const auto rec = run_example(sample_input(ds.config, ds.examples[0], 1.0, 0.5), ds.examples[0].image, 0, 0.0, 0,
                               up, downstream_net(Task::classification), EvalOptions{16, 1, 1, false});
  EXPECT_GT(rec.ssim, 0.99);
}

TEST(Pipeline, ZeroVarianceOverrideCollapses) {
  const auto& ds = small_dataset();
  EvalOptions opt{64, 3, 1, true};
  for (Task t : {Task::classification, Task::regression}) {
    const auto rec = run_example(ds, ds.examples[1], kAccels[1], upstream_net(), downstream_net(t), opt);
    if (t == Task::classification) EXPECT_LE(rec.cls->mutual_info, 1e-9);
    else EXPECT_LE(rec.reg->var_prop, 1e-9);
  }
}

TEST(Pipeline, McStabilityBetweenSampleSizes) {
  const auto& ds = small_dataset();
  const Mlp up = upstream_net();
  const Mlp down = downstream_net(Task::regression);
  const auto a = run_example(ds, ds.examples[2], kAccels[0], up, down, EvalOptions{256, 11, 1, false});
  const auto b = run_example(ds, ds.examples[2], kAccels[0], up, down, EvalOptions{4096, 12, 1, false});
  // standard errors from the larger run's samples, scaled to the smaller run
  const auto z = sample_input(ds.config, ds.examples[2], kAccels[0].R, kAccels[0].c);
  const auto x = up.forward_image(upstream_input(z));
  const auto outs = mc_outputs(x, [&](const Image& s) { return down.forward_scalar(s.data); },
                               McConfig{4096, example_seed(12, 2, 2.0), 1});
  const auto se = standard_errors(outs);
  const double k = std::sqrt(1.0 + 4096.0 / 256.0);  // SE of a difference of independent estimates
  EXPECT_LE(std::abs(a.reg->mu_hat - b.reg->mu_hat), 3 * k * se.mu_hat);
  EXPECT_LE(std::abs(a.reg->var_prop - b.reg->var_prop), 3 * k * se.var_prop);
  EXPECT_LE(std::abs(a.reg->mu_delta - b.reg->mu_delta), 3 * k * se.mu_delta);
}

TEST(Pipeline, SingleExampleRowEqualsRecord) {
  const auto& ds = small_dataset();
  const EvalOptions opt{32, 4, 1, false};
  const Mlp up = upstream_net();
  const Mlp down = downstream_net(Task::regression);
  const auto rep = run_sweep(ds, {&ds.examples[3]}, {kAccels[0]}, up, down, opt);
  const auto rec = run_example(ds, ds.examples[3], kAccels[0], up, down, opt);
  ASSERT_EQ(rep.rows.size(), 1u);
  const auto& row = rep.rows[0];
  EXPECT_EQ(row.n, 1u);
  EXPECT_EQ(row.ssim_mean(), rec.ssim);
  EXPECT_EQ(row.sqrt_var_prop(), std::sqrt(rec.reg->var_prop));
  EXPECT_EQ(row.sqrt_var_joint(), std::sqrt(rec.reg->var_joint));
  EXPECT_EQ(row.l1(), rec.abs_error());
}

TEST(Pipeline, SweepShapeIdentitiesAndDeterminism) {
  const auto& ds = small_dataset();
  const auto test = ds.subset(Split::test);
  for (Task t : {Task::classification, Task::regression}) {
    const Mlp up = upstream_net();
    const Mlp down = downstream_net(t);
    const auto a = run_sweep(ds, test, kAccels, up, down, EvalOptions{24, 9, 1, false});
    const auto b = run_sweep(ds, test, kAccels, up, down, EvalOptions{24, 9, 3, false});
    EXPECT_EQ(a.records.size(), test.size() * kAccels.size());
    EXPECT_EQ(a.rows.size(), kAccels.size());
    EXPECT_LT(a.max_identity_residual(), kIdentityTolerance);
    EXPECT_EQ(sweep_report_csv(a), sweep_report_csv(b));
    EXPECT_EQ(scatter_csv(a), scatter_csv(b));
    const std::string scatter = scatter_csv(a);
    EXPECT_EQ(std::count(scatter.begin(), scatter.end(), '\n'), static_cast<long>(a.records.size() + 1));
  }
}

TEST(Pipeline, PerExampleSeedsAreOrderIndependent) {
  const auto& ds = small_dataset();
  auto fwd = ds.subset(Split::test);
  auto rev = fwd;
  std::reverse(rev.begin(), rev.end());
  const Mlp up = upstream_net();
  const Mlp down = downstream_net(Task::classification);
  const auto a = run_sweep(ds, fwd, kAccels, up, down, EvalOptions{16, 2, 1, false});
  const auto b = run_sweep(ds, rev, {kAccels[1], kAccels[0]}, up, down, EvalOptions{16, 2, 1, false});
  for (const auto& ra : a.records) {
    const auto it = std::find_if(b.records.begin(), b.records.end(),
                                 [&](const ExampleRecord& r) { return r.id == ra.id && r.accel == ra.accel; });
    ASSERT_NE(it, b.records.end());
    EXPECT_EQ(it->cls->mean_probs.probs, ra.cls->mean_probs.probs);
    EXPECT_EQ(it->cls->mutual_info, ra.cls->mutual_info);
  }
}

TEST(Pipeline, ScatterRoundTripReproducesReport) {
  const auto& ds = small_dataset();
  for (Task t : {Task::classification, Task::regression}) {
    const auto rep = run_sweep(ds, ds.subset(Split::test), kAccels, upstream_net(), downstream_net(t),
                               EvalOptions{16, 5, 1, false});
    const auto back = parse_scatter_csv(scatter_csv(rep));
    EXPECT_EQ(back.task, t);
    EXPECT_EQ(sweep_report_csv(back), sweep_report_csv(rep));
    EXPECT_EQ(scatter_csv(back), scatter_csv(rep));
  }
  EXPECT_THROW(parse_scatter_csv("a,b\n1,2\n"), std::runtime_error);
}

TEST(Pipeline, ReportFormatting) {
  EXPECT_EQ(fmt_sig4(0.0123456), "0.01235");
  EXPECT_EQ(fmt_sig4(63.81), "63.81");
  EXPECT_EQ(fmt_sig4(2.0), "2");
  EXPECT_EQ(std::stod(fmt_full(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(Pipeline, IncompatibleCheckpointsRejected) {
  const auto& ds = small_dataset();
  const Mlp wrong_up(make_upstream_spec(20, {4}, Activation::relu), 1);
  EXPECT_THROW(run_sweep(ds, ds.subset(Split::test), kAccels, wrong_up, downstream_net(Task::regression), {}),
               ConfigError);
  const Mlp wrong_down(make_downstream_spec(Task::regression, 20, {4}, Activation::tanh), 1);
  EXPECT_THROW(run_sweep(ds, ds.subset(Split::test), kAccels, upstream_net(), wrong_down, {}), ConfigError);
  EXPECT_THROW(run_sweep(ds, {}, kAccels, upstream_net(), downstream_net(Task::regression), {}),
               std::invalid_argument);
}

TEST(Pipeline, TargetStats) {
  std::vector<DownstreamExample> xs;
  for (double t : {1.0, 2.0, 4.0}) xs.push_back({DiagGaussianImage(Image(1, 1), Image(1, 1)), t, 0});
  const auto [m, sd] = target_stats(xs);
  EXPECT_DOUBLE_EQ(m, 7.0 / 3.0);
  EXPECT_NEAR(sd, std::sqrt(7.0 / 3.0), 1e-15);  // unbiased variance of {1,2,4} is 7/3
}
