#include "helpers.hpp"

using namespace advmem;
using namespace advmem::test;

namespace {

PerturbationSpec linf(double eps, double alpha, int steps, bool random_start = false, std::uint64_t seed = 0)
{
    PerturbationSpec s;
    s.epsilon = eps;
    s.step_size = alpha;
    s.steps = steps;
    s.random_start = random_start;
    s.seed = seed;
    return s;
}

}  // namespace

TEST(Project, Examples)
{
    const Matrix x = Matrix::Constant(1, 4, 0.5);
    EXPECT_TRUE(project(x, x, Norm::linf, 0.1) == x);
    const Matrix far = (x.array() + 0.2).matrix();
    const Matrix p = project(far, x, Norm::linf, 0.1);
    for (Eigen::Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(p(0, j), 0.6);

    Matrix c = Matrix::Constant(1, 3, 0.5);
    Matrix dir(1, 3);
    dir << 0.6, -0.8, 0.0;
    const double eps = 0.1;
    const Matrix q = project((c + 2.0 * eps * dir).eval(), c, Norm::l2, eps);
    EXPECT_NEAR((q - c).norm(), eps, 1e-15);
    EXPECT_NEAR(((q - c) / eps - dir).norm(), 0.0, 1e-14);
}

TEST(Project, BoxClipApplies)
{
    const Matrix x = Matrix::Constant(1, 2, 0.98);
    const Matrix p = project(Matrix::Constant(1, 2, 1.1), x, Norm::linf, 0.1);
    EXPECT_EQ(p(0, 0), 1.0);
}

TEST(Pgd, ZeroStepsIsIdentity)
{
    const auto p = init_model(linear_arch(4, 3, 2));
    const auto b = make_batch(uniform_matrix(3, 4, 1), {0, 1, 2});
    EXPECT_TRUE(pgd_attack(p, b, linf(0.1, 0.01, 0)) == b.inputs);
}

TEST(Pgd, SingleFullStepEqualsFgsm)
{
    const auto p = init_model(mlp_arch(6, {5}, 3, 2));
    const auto b = make_batch(uniform_matrix(8, 6, 1), {0, 1, 2, 0, 1, 2, 0, 1});
    const auto s = linf(0.03, 0.03, 1);
    EXPECT_TRUE(pgd_attack(p, b, s) == fgsm(p, b, s));
}

TEST(Pgd, ZeroGradientLeavesInputs)
{
    const auto p = zero_model(linear_arch(4, 3));
    const auto b = make_batch(uniform_matrix(3, 4, 1), {0, 1, 2});
    EXPECT_TRUE(fgsm(p, b, linf(0.1, 0.1, 1)) == b.inputs);
    EXPECT_TRUE(pgd_attack(p, b, linf(0.1, 0.02, 5)) == b.inputs);
}

TEST(Pgd, DeterministicAndBatchIndependent)
{
    const auto p = init_model(mlp_arch(6, {5}, 3, 2));
    const auto b = make_batch(uniform_matrix(6, 6, 1), {0, 1, 2, 0, 1, 2});
    const auto s = linf(0.05, 0.01, 7, true, 42);
    const Matrix a = pgd_attack(p, b, s);
    EXPECT_TRUE(a == pgd_attack(p, b, s));
    // The same sample attacked alone, with the same id, lands at the same point.
    ExampleBatch one = b;
    one.inputs = b.inputs.row(3);
    one.labels = {b.labels[3]};
    one.sample_ids = {b.sample_ids[3]};
    EXPECT_TRUE(Matrix(a.row(3)) == pgd_attack(p, one, s));
}

TEST(Pgd, IteratesStayFeasible)
{
    const auto p = init_model(mlp_arch(6, {5}, 3, 2));
    const auto b = make_batch(uniform_matrix(6, 6, 1), {0, 1, 2, 0, 1, 2});
    for (auto norm : {Norm::linf, Norm::l2}) {
        auto s = linf(0.2, 0.07, 12, true, 3);
        s.norm = norm;
        AttackContext ctx;
        ctx.on_step = [&](int, const Matrix& adv) {
            ASSERT_GE(adv.minCoeff(), 0.0);
            ASSERT_LE(adv.maxCoeff(), 1.0);
            for (Eigen::Index i = 0; i < adv.rows(); ++i) {
                ASSERT_LE(perturbation_norm(norm, adv.row(i) - b.inputs.row(i)), s.epsilon + 1e-9);
            }
        };
        pgd_attack(p, b, s, ctx);
    }
}

TEST(Pgd, CwAndKlAttacksIncreaseTheirLoss)
{
    const auto p = init_model(mlp_arch(6, {8}, 3, 5));
    const auto b = make_batch(uniform_matrix(6, 6, 1, 0.2, 0.8), {0, 1, 2, 0, 1, 2});
    auto s = linf(0.1, 0.02, 10);
    s.loss_kind = InputLossKind::cw;
    const Matrix a = pgd_attack(p, b, s);
    EXPECT_GT(cw_margin_loss(forward_logits(p, a), b.labels), cw_margin_loss(forward_logits(p, b.inputs), b.labels));

    s.loss_kind = InputLossKind::kl_vs_clean;
    s.random_start = true;
    const Matrix clean = forward_probs(p, b.inputs);
    EXPECT_THROW(pgd_attack(p, b, s), Error);
    AttackContext ctx;
    ctx.clean_probs = &clean;
    EXPECT_GT(kl_divergence(clean, forward_probs(p, pgd_attack(p, b, s, ctx))), 0.0);
}

TEST(VertexOracle, ZeroEpsilonIsCleanLoss)
{
    const auto p = init_model(linear_arch(3, 3, 7));
    const auto b = make_batch(uniform_matrix(4, 3, 2), {0, 1, 2, 1});
    auto s = linf(0.1, 0.1, 1);
    s.epsilon = 0.0;
    const auto r = vertex_oracle(p, b, s);
    const auto clean = ce_logits(forward_logits(p, b.inputs), b.labels).values;
    EXPECT_LT((r.max_loss - clean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(VertexOracle, OneDimensionIsBestEndpoint)
{
    const auto p = init_model(linear_arch(1, 2, 3));
    const auto b = make_batch(Matrix::Constant(1, 1, 0.4), {1});
    const auto s = linf(0.1, 0.1, 1);
    const auto r = vertex_oracle(p, b, s);
    const auto lo = ce_logits(forward_logits(p, Matrix::Constant(1, 1, 0.3)), {1}).values[0];
    const auto hi = ce_logits(forward_logits(p, Matrix::Constant(1, 1, 0.5)), {1}).values[0];
    EXPECT_DOUBLE_EQ(r.max_loss[0], std::max(lo, hi));
}

TEST(VertexOracle, NeverBeatenByPgd)
{
    for (std::uint64_t t = 0; t < 20; ++t) {
        const auto p = init_model(linear_arch(6, 3, 100 + t));
        const auto b = make_batch(uniform_matrix(4, 6, 200 + t), {0, 1, 2, 0});
        const auto s = linf(0.1, 0.025, 20, true, t);
        const auto r = vertex_oracle(p, b, s);
        const auto got = ce_logits(forward_logits(p, pgd_attack(p, b, s)), b.labels).values;
        EXPECT_LE((got - r.max_loss).maxCoeff(), 1e-9);
    }
    auto big = init_model(linear_arch(13, 2));
    EXPECT_THROW(vertex_oracle(big, make_batch(Matrix::Zero(1, 13), {0}), linf(0.1, 0.1, 1)), Error);
}
