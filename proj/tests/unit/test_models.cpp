#include "helpers.hpp"

#include "advmem/testing/oracles.hpp"

using namespace advmem;
using namespace advmem::test;

TEST(Models, InitDeterministic)
{
    const auto a = init_model(mlp_arch(6, {5}, 3, 4));
    const auto b = init_model(mlp_arch(6, {5}, 3, 4));
    EXPECT_TRUE(a.flatten() == b.flatten());
    EXPECT_FALSE(a.flatten() == init_model(mlp_arch(6, {5}, 3, 5)).flatten());
}

TEST(Models, LinearStructure)
{
    const auto p = init_model(linear_arch(2, 2));
    ASSERT_EQ(p.groups.size(), 2u);
    EXPECT_EQ(p.groups[0].role, ParamRole::dense);
    EXPECT_EQ(p.groups[1].role, ParamRole::bias);
    EXPECT_EQ(p.layer_count, 1u);
}

TEST(Models, MlpParameterCount)
{
    const std::size_t d = 7, C = 3;
    EXPECT_EQ(init_model(mlp_arch(d, {8}, C)).parameter_count(), d * 8 + 8 + 8 * C + C);
}

TEST(Models, ZeroWeightsGiveZeroLogits)
{
    const auto p = zero_model(linear_arch(3, 4));
    EXPECT_TRUE(forward_logits(p, uniform_matrix(5, 3, 1)).isZero(0.0));
}

TEST(Models, LinearForwardMatchesHandComputation)
{
    Matrix W(2, 3);
    W << 1, -2, 0.5, 0, 3, -1;
    Vector b(2);
    b << 0.25, -0.5;
    const auto p = linear_model(W, b);
    Matrix x(1, 3);
    x << 0.2, 0.4, 0.6;
    const Matrix z = forward_logits(p, x);
    EXPECT_NEAR(z(0, 0), 0.2 - 0.8 + 0.3 + 0.25, 1e-15);
    EXPECT_NEAR(z(0, 1), 1.2 - 0.6 - 0.5, 1e-15);
}

TEST(Models, SoftmaxExamples)
{
    const Matrix u = softmax_rows(Matrix::Zero(1, 4));
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(u(0, c), 0.25);
    Matrix big(1, 2);
    big << 1000, 0;
    const Matrix p = softmax_rows(big);
    EXPECT_EQ(p(0, 0), 1.0);
    EXPECT_EQ(p(0, 1), 0.0);
    EXPECT_TRUE(p.allFinite());
    const Matrix r = softmax_rows(uniform_matrix(20, 5, 3, -30, 30));
    for (Eigen::Index i = 0; i < r.rows(); ++i) EXPECT_NEAR(r.row(i).sum(), 1.0, 1e-6);
}

TEST(Models, ConvAndResnetShapes)
{
    ArchSpec a;
    a.family = Family::convnet;
    a.widths = {3, 4};
    a.class_count = 5;
    a.input_shape = InputShape::image(6, 6, 2);
    const auto p = init_model(a);
    EXPECT_EQ(forward_logits(p, uniform_matrix(3, 72, 2)).cols(), 5);
    a.family = Family::resnet_small;
    a.widths = {3, 4, 4};
    const auto r = init_model(a);
    EXPECT_EQ(forward_logits(r, uniform_matrix(2, 72, 2)).rows(), 2);
    a.input_shape = InputShape::flat(72);
    EXPECT_THROW(a.validate(), Error);
}

TEST(Models, ConvAdjointIsTranspose)
{
    ArchSpec a;
    a.family = Family::convnet;
    a.widths = {3};
    a.class_count = 2;
    a.input_shape = InputShape::image(5, 5, 2);
    const auto p = init_model(a);
    const auto& g = p.groups.front();
    ASSERT_TRUE(g.conv.has_value());
    const Matrix x = uniform_matrix(1, static_cast<Eigen::Index>(g.conv->in_size()), 4, -1, 1);
    const Matrix y = uniform_matrix(1, static_cast<Eigen::Index>(g.conv->out_size()), 5, -1, 1);
    const double lhs = (conv_apply(g, x).array() * y.array()).sum();
    const double rhs = (x.array() * conv_adjoint(g, y).array()).sum();
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
}

TEST(Models, GroupNorms)
{
    Matrix W = Matrix::Identity(3, 3);
    const auto p = linear_model(W, Vector::Zero(3));
    const auto views = param_group_views(p);
    EXPECT_DOUBLE_EQ(views[0].l1, 3.0);
    EXPECT_DOUBLE_EQ(views[0].l2, std::sqrt(3.0));
    EXPECT_DOUBLE_EQ(views[1].l1, 0.0);
    EXPECT_DOUBLE_EQ(views[1].l2, 0.0);
    const auto q = init_model(mlp_arch(4, {6}, 3));
    double ss = 0.0;
    for (const auto& v : param_group_views(q)) ss += v.l2 * v.l2;
    EXPECT_NEAR(std::sqrt(ss), q.flatten().norm(), 1e-12);
}

TEST(Checkpoint, RoundTripBitwise)
{
    const auto p = init_model(mlp_arch(4, {6}, 3, 9));
    auto opt = OptimizerState::for_params(p, 0.9, 5e-4);
    for (auto& b : opt.buffers) b.setConstant(0.125);
    const auto dir = scratch_dir("ckpt_roundtrip");
    save_checkpoint(p, opt, CheckpointMetadata{7, "abc", io::json{{"note", 1}}}, dir);
    const auto ck = load_checkpoint(dir);
    EXPECT_TRUE(ck.params.flatten() == p.flatten());
    EXPECT_EQ(ck.params.arch_tag, p.arch_tag);
    EXPECT_EQ(ck.metadata.epoch, 7);
    EXPECT_EQ(ck.metadata.config_hash, "abc");
    ASSERT_EQ(ck.optimizer.buffers.size(), opt.buffers.size());
    EXPECT_TRUE(ck.optimizer.buffers[0] == opt.buffers[0]);
}

TEST(Checkpoint, WrongArchTagRejected)
{
    const auto p = init_model(linear_arch(4, 3));
    const auto dir = scratch_dir("ckpt_tag");
    save_checkpoint(p, OptimizerState::for_params(p, 0.9, 0.0), {}, dir);
    EXPECT_THROW(load_checkpoint(dir, std::string("mlp-w8-in4-c3")), Error);
    EXPECT_NO_THROW(load_checkpoint(dir, p.arch_tag));
}

TEST(Checkpoint, TruncatedArrayRejected)
{
    const auto p = init_model(linear_arch(4, 3));
    const auto dir = scratch_dir("ckpt_trunc");
    save_checkpoint(p, OptimizerState::for_params(p, 0.9, 0.0), {}, dir);
    io::write_text(dir / "param_0.bin", "xx");
    EXPECT_THROW(load_checkpoint(dir), Error);
}

TEST(Optim, PlainGradientDescent)
{
    auto p = init_model(linear_arch(3, 2, 2));
    const Vector theta = p.flatten();
    auto s = OptimizerState::for_params(p, 0.0, 0.0);
    const Vector g = Vector::LinSpaced(theta.size(), -1, 1);
    sgd_step(p, s, g, 0.1);
    EXPECT_TRUE(advmem::testing::rel_error(p.flatten(), Vector(theta - 0.1 * g)) < 1e-15);
}

TEST(Optim, ZeroGradientNoDecayIsNoop)
{
    auto p = init_model(linear_arch(3, 2, 2));
    const Vector theta = p.flatten();
    auto s = OptimizerState::for_params(p, 0.9, 0.0);
    sgd_step(p, s, Vector::Zero(theta.size()), 0.1);
    EXPECT_TRUE(p.flatten() == theta);
}

TEST(Optim, TwoMomentumSteps)
{
    auto p = init_model(linear_arch(3, 2, 2));
    const Vector theta = p.flatten();
    const double mu = 0.9, lr = 0.05;
    auto s = OptimizerState::for_params(p, mu, 0.0);
    const Vector g = Vector::Constant(theta.size(), 0.3);
    sgd_step(p, s, g, lr);
    sgd_step(p, s, g, lr);
    EXPECT_LT(advmem::testing::rel_error(Vector(theta - p.flatten()), Vector(lr * (2.0 + mu) * g)), 1e-14);
}

TEST(Optim, WeightDecaySkipsBiases)
{
    auto p = init_model(linear_arch(3, 2, 2));
    p.groups[1].values.setConstant(1.0);
    auto s = OptimizerState::for_params(p, 0.0, 0.5);
    const Vector w0 = p.groups[0].values;
    sgd_step(p, s, Vector::Zero(static_cast<Eigen::Index>(p.parameter_count())), 0.1);
    EXPECT_TRUE(p.groups[1].values == Vector::Constant(2, 1.0));
    EXPECT_LT(advmem::testing::rel_error(p.groups[0].values, Vector(w0 * (1.0 - 0.05))), 1e-15);
}

TEST(Schedule, PiecewiseMilestones)
{
    const auto s = Schedule::piecewise(0.1, {100, 150});
    EXPECT_DOUBLE_EQ(schedule_value(s, 99), 0.1);
    EXPECT_NEAR(schedule_value(s, 100), 0.01, 1e-17);
    EXPECT_NEAR(schedule_value(s, 150), 0.001, 1e-18);
}

TEST(Schedule, GaussianRampEndpoints)
{
    const auto s = Schedule::gaussian_ramp(20);
    EXPECT_NEAR(schedule_value(s, 0), 0.006738, 1e-6);
    EXPECT_EQ(schedule_value(s, 20), 1.0);
    EXPECT_EQ(schedule_value(s, 55), 1.0);
    EXPECT_DOUBLE_EQ(schedule_value(Schedule::linear_ramp(10), 5), 0.5);
    EXPECT_THROW(schedule_value(s, -1), Error);
}

TEST(Schedule, CosineEndpoints)
{
    const auto s = Schedule::cosine(0.01, 80);
    EXPECT_DOUBLE_EQ(schedule_value(s, 0), 0.01);
    EXPECT_NEAR(schedule_value(s, 80), 0.0, 1e-18);
    EXPECT_NEAR(schedule_value(s, 40), 0.005, 1e-15);
}
