#pragma once

#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"

#include <cmath>
#include <functional>
#include <string>

namespace advmem {

enum class Norm { linf, l2 };

inline std::string to_string(Norm n) { return n == Norm::linf ? "linf" : "l2"; }

inline Norm norm_from_string(const std::string& s)
{
    if (s == "linf") return Norm::linf;
    if (s == "l2") return Norm::l2;
    throw Error("unknown norm: " + s);
}

/// Threat model plus attack schedule: S(x) = {x' : ||x' - x||_p <= eps} within [0,1]^d.
struct PerturbationSpec {
    Norm norm = Norm::linf;
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int steps = 10;
    bool random_start = true;
    InputLossKind loss_kind = InputLossKind::ce;
    std::uint64_t seed = 0;

    void validate() const
    {
        require(epsilon > 0.0, "PerturbationSpec: epsilon must be > 0");
        require(step_size > 0.0, "PerturbationSpec: step_size must be > 0");
        require(steps >= 0, "PerturbationSpec: steps must be >= 0");
    }

    [[nodiscard]] PerturbationSpec with_seed(std::uint64_t s) const
    {
        auto c = *this;
        c.seed = s;
        return c;
    }
};

/// Distance between two inputs in the spec's norm.
inline double perturbation_norm(Norm norm, const Eigen::Ref<const Eigen::RowVectorXd>& delta)
{
    return norm == Norm::linf ? delta.cwiseAbs().maxCoeff() : delta.norm();
}

namespace detail {
inline void project_row(Norm norm, double eps, Eigen::Ref<Eigen::RowVectorXd> adv,
                        const Eigen::Ref<const Eigen::RowVectorXd>& clean)
{
    if (norm == Norm::linf) {
        for (Eigen::Index j = 0; j < adv.size(); ++j) {
            adv[j] = std::min(std::max(adv[j], clean[j] - eps), clean[j] + eps);
            adv[j] = std::min(std::max(adv[j], 0.0), 1.0);
        }
        return;
    }
    // l2: radial projection onto the ball, then the box. Clipping moves every
    // coordinate toward the (feasible) clean point, so it cannot leave the
    // ball; the second pass only guards against rounding.
    for (int pass = 0; pass < 2; ++pass) {
        Eigen::RowVectorXd delta = adv - clean;
        const double n = delta.norm();
        if (n > eps) {
            delta *= eps / n;
        }
        adv = (clean + delta).cwiseMax(0.0).cwiseMin(1.0);
        if ((adv - clean).norm() <= eps) {
            break;
        }
    }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
}  // namespace detail

/// Projection onto S(x) intersected with [0,1]^d, per sample.
inline Matrix project(const Matrix& x_adv, const Matrix& x_clean, Norm norm, double epsilon)
{
    require(x_adv.rows() == x_clean.rows() && x_adv.cols() == x_clean.cols(), "project: shape mismatch");
    Matrix out = x_adv;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        detail::project_row(norm, epsilon, out.row(i), x_clean.row(i));
    }
    return out;
}

inline Matrix project(const Matrix& x_adv, const Matrix& x_clean, const PerturbationSpec& spec)
{
    return project(x_adv, x_clean, spec.norm, spec.epsilon);
}

/// Optional inputs for the inner maximisation beyond labels.
struct AttackContext {
    const Matrix* clean_probs = nullptr;  ///< required for kl_vs_clean
    const Matrix* te_targets = nullptr;   ///< ascend te_weight * TE as well when set
    double te_weight = 0.0;
    double smoothing = 0.0;
    /// Called after every projected step with (step index, iterate).
    std::function<void(int, const Matrix&)> on_step;
};

/// Random start for one sample, seeded by (spec.seed, sample_id) so that
/// results do not depend on batch composition.
inline void random_start_row(const PerturbationSpec& spec, std::int64_t sample_id, Eigen::Ref<Eigen::RowVectorXd> adv,
                             const Eigen::Ref<const Eigen::RowVectorXd>& clean)
{
    Rng rng(derive_seed(spec.seed, {stream::attack, static_cast<std::uint64_t>(sample_id)}));
    if (spec.norm == Norm::linf) {
        for (Eigen::Index j = 0; j < adv.size(); ++j) {
            adv[j] = clean[j] + rng.uniform(-spec.epsilon, spec.epsilon);
        }
    } else {
        Eigen::RowVectorXd dir(adv.size());
        for (Eigen::Index j = 0; j < dir.size(); ++j) {
            dir[j] = rng.normal();
        }
        const double n = std::max(dir.norm(), 1e-12);
        const double radius = spec.epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(adv.size()));
        adv = clean + dir * (radius / n);
    }
    detail::project_row(spec.norm, spec.epsilon, adv, clean);
}

/// Multi-step projected gradient ascent on the spec's loss.
inline Matrix pgd_attack(const ModelParameters& params, const ExampleBatch& batch, const PerturbationSpec& spec,
                         const AttackContext& ctx = {})
{
    spec.validate();
    if (spec.loss_kind == InputLossKind::kl_vs_clean) {
        require(ctx.clean_probs != nullptr, "pgd_attack: kl_vs_clean attack needs clean probabilities");
    }
    const Network net(params.arch);
    const Matrix& x = batch.inputs;
    Matrix adv = x;
    if (spec.random_start) {
        for (Eigen::Index i = 0; i < adv.rows(); ++i) {
            random_start_row(spec, batch.sample_ids[static_cast<std::size_t>(i)], adv.row(i), x.row(i));
        }
    }
    InputLoss loss;
    loss.kind = spec.loss_kind;
    loss.labels = &batch.labels;
    loss.clean_probs = ctx.clean_probs;
    loss.smoothing = ctx.smoothing;
    loss.te_targets = ctx.te_targets;
    loss.te_weight = ctx.te_weight;
    for (int t = 0; t < spec.steps; ++t) {
        const Matrix g = input_gradient(net, params, adv, loss).grad;
        if (spec.norm == Norm::linf) {
            adv += spec.step_size * g.unaryExpr([](double v) { return detail::sign(v); });
        } else {
            for (Eigen::Index i = 0; i < adv.rows(); ++i) {
                adv.row(i) += (spec.step_size / std::max(g.row(i).norm(), 1e-12)) * g.row(i);
            }
        }
        adv = project(adv, x, spec);
        if (ctx.on_step) {
            ctx.on_step(t, adv);
        }
    }
    return adv;
}

/// x + eps * sign(grad_x CE), clipped to [0,1]; sign(0) = 0.
inline Matrix fgsm(const ModelParameters& params, const ExampleBatch& batch, const PerturbationSpec& spec)
{
    spec.validate();
    const Matrix g = grad_input(InputLossKind::ce, params, batch.inputs, &batch.labels);
    Matrix adv = batch.inputs;
    for (Eigen::Index i = 0; i < adv.rows(); ++i) {
        for (Eigen::Index j = 0; j < adv.cols(); ++j) {
            adv(i, j) = std::min(std::max(adv(i, j) + spec.epsilon * detail::sign(g(i, j)), 0.0), 1.0);
        }
    }
    return adv;
}

struct VertexOracleResult {
    Vector max_loss;   ///< per-sample exact maximum CE over S(x)
    Matrix maximizer;  ///< attaining vertex per sample
};

inline constexpr std::size_t vertex_oracle_max_dim = 12;

/// Exact l-inf inner maximum for linear-softmax models. CE is convex in the
/// input there, so the maximum over the box S(x) lies on one of its 2^d
/// vertices (coordinates clipped to [0,1]).
inline VertexOracleResult vertex_oracle(const ModelParameters& params, const ExampleBatch& batch,
                                        const PerturbationSpec& spec)
{
    require(params.arch.family == Family::linear, "vertex_oracle: only defined for linear models");
    require(spec.norm == Norm::linf, "vertex_oracle: only defined for the l-inf threat model");
    require(spec.epsilon >= 0.0, "vertex_oracle: epsilon must be >= 0");
    const auto d = static_cast<std::size_t>(batch.inputs.cols());
    require(d <= vertex_oracle_max_dim, "vertex_oracle: input dimension above " +
                                            std::to_string(vertex_oracle_max_dim));
    const std::size_t vertices = std::size_t{1} << d;
    const Network net(params.arch);
    VertexOracleResult out{Vector(batch.inputs.rows()), Matrix(batch.inputs.rows(), batch.inputs.cols())};
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        Matrix cand(static_cast<Eigen::Index>(vertices), static_cast<Eigen::Index>(d));
        for (std::size_t m = 0; m < vertices; ++m) {
            for (std::size_t j = 0; j < d; ++j) {
                const double xj = batch.inputs(i, static_cast<Eigen::Index>(j));
                cand(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) =
                    ((m >> j) & 1U) ? std::min(1.0, xj + spec.epsilon) : std::max(0.0, xj - spec.epsilon);
            }
        }
        const Labels labels(vertices, batch.labels[static_cast<std::size_t>(i)]);
        const auto l = ce_logits(net.forward(params, cand), labels);
        Eigen::Index best = 0;
        out.max_loss[i] = l.values.maxCoeff(&best);
        out.maximizer.row(i) = cand.row(best);
    }
    return out;
}

}  // namespace advmem
