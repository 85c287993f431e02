#pragma once

#include "advmem/attacks.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace advmem {

inline constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

enum class ProbeMethod { pgd_at, trades };

inline std::string to_string(ProbeMethod m) { return m == ProbeMethod::pgd_at ? "pgd_at" : "trades"; }

inline ProbeMethod probe_method_from_string(const std::string& s)
{
    if (s == "pgd_at") return ProbeMethod::pgd_at;
    if (s == "trades") return ProbeMethod::trades;
    throw Error("unknown probe method: " + s);
}

/// Cosine similarity; nullopt when either vector is zero. Identical inputs give exactly 1.
inline std::optional<double> cosine_similarity(const Vector& a, const Vector& b)
{
    require(a.size() == b.size(), "cosine: length mismatch");
    const double na = a.norm();
    const double nb = b.norm();
    if (na <= 0.0 || nb <= 0.0) {
        return std::nullopt;
    }
    if (a == b) {
        return 1.0;
    }
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline std::optional<double> epoch_gradient_cosine(const Vector& grad_a, const Vector& grad_b)
{
    return cosine_similarity(grad_a, grad_b);
}

/// Inputs for the given method's inner maximisation (CE-PGD or KL-PGD).
inline Matrix probe_adversarial(const ModelParameters& params, const ExampleBatch& batch, ProbeMethod method,
                                PerturbationSpec spec)
{
    AttackContext ctx;
    Matrix clean_probs;
    if (method == ProbeMethod::trades) {
        spec.loss_kind = InputLossKind::kl_vs_clean;
        clean_probs = forward_probs(params, batch.inputs);
        ctx.clean_probs = &clean_probs;
    } else {
        spec.loss_kind = InputLossKind::ce;
    }
    return pgd_attack(params, batch, spec, ctx);
}

inline ExampleBatch single(const ExampleBatch& batch, Eigen::Index i)
{
    const auto k = static_cast<std::size_t>(i);
    return ExampleBatch{batch.inputs.row(i), Labels{batch.labels[k]}, SampleIds{batch.sample_ids[k]}, batch.shape};
}

// ---------------------------------------------------------------------------
// Gradient magnitude.

/// Averages of per-sample gradient norms. Entries that do not apply to the method are NaN.
struct GradNorms {
    ProbeMethod method = ProbeMethod::pgd_at;
    double clean_ce = nan_value;
    double adv = nan_value;       ///< ||grad J|| (pgd_at)
    double kl = nan_value;        ///< ||grad beta*KL|| (trades)
    double residual = nan_value;  ///< ||grad (J - CE_clean)|| (pgd_at)
    std::optional<double> ratio;  ///< nullopt when the clean norm vanishes

    [[nodiscard]] double ratio_or_nan() const { return ratio.value_or(nan_value); }
};

/// Norms at precomputed adversarial inputs (e.g. the ones a training step used).
inline GradNorms grad_norm_terms_at(const ModelParameters& params, const ExampleBatch& batch, const Matrix& adv,
                                    ProbeMethod method, double beta = 6.0)
{
    require(batch.size() > 0, "grad_norm_terms: empty batch");
    ObjectiveConfig cfg;
    cfg.kind = method == ProbeMethod::pgd_at ? ObjectiveKind::pgd_at : ObjectiveKind::trades;
    cfg.beta = beta;
    GradNorms out;
    out.method = method;
    double clean = 0.0, adv_n = 0.0, kl = 0.0, res = 0.0;
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        const auto one = single(batch, i);
        const Matrix a = adv.row(i);
        const auto g = grad_params(cfg, params, one, a, nullptr, 0.0, true);
        const auto& c = *g.components;
        clean += c.clean_ce.norm();
        adv_n += c.adv_ce.norm();
        kl += std::abs(beta) * c.kl.norm();
        res += c.residual.norm();
    }
    const auto N = static_cast<double>(batch.size());
    out.clean_ce = clean / N;
    if (method == ProbeMethod::pgd_at) {
        out.adv = adv_n / N;
        out.residual = res / N;
    } else {
        out.kl = kl / N;
    }
    if (out.clean_ce > 1e-12) {
        out.ratio = (method == ProbeMethod::pgd_at ? out.residual : out.kl) / out.clean_ce;
    }
    return out;
}

/// Norms with adversarial points generated fresh from `spec`.
inline GradNorms grad_norm_terms(const ModelParameters& params, const ExampleBatch& batch, ProbeMethod method,
                                 const PerturbationSpec& spec, double beta = 6.0)
{
    return grad_norm_terms_at(params, batch, probe_adversarial(params, batch, method, spec), method, beta);
}

/// pgd_at: ||grad R|| / ||grad CE_clean||; trades: ||grad beta*KL|| / ||grad CE_clean||.
inline std::optional<double> grad_ratio(const ModelParameters& params, const ExampleBatch& batch, ProbeMethod method,
                                        const PerturbationSpec& spec, double beta = 6.0)
{
    return grad_norm_terms(params, batch, method, spec, beta).ratio;
}

struct GradNormRow {
    int epoch = 0;
    GradNorms norms;
};

inline std::string grad_norms_csv(const std::vector<GradNormRow>& rows)
{
    io::CsvWriter w({"epoch", "method", "norm_clean_ce", "norm_adv", "norm_kl", "norm_residual", "ratio"});
    for (const auto& r : rows) {
        const auto& n = r.norms;
        w.add_row({std::to_string(r.epoch), to_string(n.method), io::format_number(n.clean_ce),
                   io::format_number(n.adv), io::format_number(n.kl), io::format_number(n.residual),
                   io::format_number(n.ratio_or_nan())});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// Direction sweeps.

/// Gaussian draw rescaled per group so that ||d_g|| = ||theta_g||; zero groups get zero direction.
inline Vector make_direction(const ModelParameters& params, std::uint64_t seed)
{
    Vector d(static_cast<Eigen::Index>(params.parameter_count()));
    Rng rng(derive_seed(seed, {stream::direction}));
    std::size_t at = 0;
    for (const auto& g : params.groups) {
        auto seg = d.segment(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(g.size()));
        for (Eigen::Index j = 0; j < seg.size(); ++j) {
            seg[j] = rng.normal();
        }
        const double target = g.values.norm();
        const double n = seg.norm();
        if (target <= 0.0 || n <= 0.0) {
            seg.setZero();
        } else {
            seg *= target / n;
        }
        at += g.size();
    }
    return d;
}

struct DirectionSweep {
    std::vector<double> lambdas;
    std::uint64_t seed = 0;

    static DirectionSweep grid(double max_abs, int points, std::uint64_t seed)
    {
        require(points >= 2, "DirectionSweep::grid: need at least 2 points");
        DirectionSweep s;
        s.seed = seed;
        for (int i = 0; i < points; ++i) {
            s.lambdas.push_back(2 * i == points - 1 ? 0.0 : -max_abs + 2.0 * max_abs * i / (points - 1));
        }
        return s;
    }
};

enum class SweepLossKind { pgd_at, trades, clean_ce };

inline std::string to_string(SweepLossKind k)
{
    switch (k) {
    case SweepLossKind::pgd_at: return "pgd_at";
    case SweepLossKind::trades: return "trades";
    case SweepLossKind::clean_ce: return "clean_ce";
    }
    return "?";
}

inline SweepLossKind sweep_loss_kind_from_string(const std::string& s)
{
    if (s == "pgd_at") return SweepLossKind::pgd_at;
    if (s == "trades") return SweepLossKind::trades;
    if (s == "clean_ce") return SweepLossKind::clean_ce;
    throw Error("unknown sweep loss kind: " + s);
}

struct SweepPoint {
    SweepLossKind kind;
    double lambda;
    double l2_dist;  ///< batch mean of per-sample ||g(theta + lambda d) - g(theta)||
    double cosine;   ///< batch mean of per-sample cosines (NaN when undefined for every sample)
    double loss;     ///< batch mean loss at theta + lambda d
};

/// Per-sample parameter gradients (rows) and losses of one loss kind. The
/// attack seed comes from `spec`, so re-running at moved parameters uses the
/// same random starts.
struct SampleGradients {
    Matrix grads;
    Vector losses;
};

inline SampleGradients sample_gradients(const ModelParameters& params, const ExampleBatch& batch, SweepLossKind kind,
                                        const PerturbationSpec& spec, double beta = 6.0)
{
    ObjectiveConfig cfg;
    Matrix adv;
    switch (kind) {
    case SweepLossKind::clean_ce: cfg.kind = ObjectiveKind::standard_ce; break;
    case SweepLossKind::pgd_at:
        cfg.kind = ObjectiveKind::pgd_at;
        adv = probe_adversarial(params, batch, ProbeMethod::pgd_at, spec);
        break;
    case SweepLossKind::trades:
        cfg.kind = ObjectiveKind::trades;
        cfg.beta = beta;
        adv = probe_adversarial(params, batch, ProbeMethod::trades, spec);
        break;
    }
    SampleGradients out{Matrix(batch.inputs.rows(), static_cast<Eigen::Index>(params.parameter_count())),
                        Vector(batch.inputs.rows())};
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        const Matrix a = adv.size() > 0 ? Matrix(adv.row(i)) : Matrix();
        const auto g = grad_params(cfg, params, single(batch, i), a, nullptr, 0.0);
        out.grads.row(i) = g.total.transpose();
        out.losses[i] = g.breakdown.total;
    }
    return out;
}

inline std::vector<SweepPoint> direction_sweep(const ModelParameters& params, const ExampleBatch& batch,
                                               const DirectionSweep& sweep, const std::vector<SweepLossKind>& kinds,
                                               const PerturbationSpec& spec, double beta = 6.0,
                                               const std::optional<Vector>& direction = std::nullopt)
{
    require(!sweep.lambdas.empty(), "direction_sweep: empty lambda grid");
    require(batch.size() > 0, "direction_sweep: empty batch");
    const Vector d = direction ? *direction : make_direction(params, sweep.seed);
    require(static_cast<std::size_t>(d.size()) == params.parameter_count(), "direction_sweep: direction length mismatch");
    std::vector<SweepPoint> out;
    for (const auto kind : kinds) {
        const auto base = sample_gradients(params, batch, kind, spec, beta);
        for (const double lambda : sweep.lambdas) {
            const auto moved = lambda == 0.0 ? base : sample_gradients(params.moved(lambda, d), batch, kind, spec, beta);
            double dist = 0.0;
            double cos_sum = 0.0;
            int cos_count = 0;
            for (Eigen::Index i = 0; i < base.grads.rows(); ++i) {
                const Vector a = base.grads.row(i).transpose();
                const Vector b = moved.grads.row(i).transpose();
                dist += (b - a).norm();
                if (const auto c = cosine_similarity(a, b)) {
                    cos_sum += *c;
                    ++cos_count;
                }
            }
            out.push_back(SweepPoint{kind, lambda, dist / static_cast<double>(batch.size()),
                                     cos_count > 0 ? cos_sum / cos_count : nan_value, moved.losses.mean()});
        }
    }
    return out;
}

inline std::string sweep_csv(const std::vector<SweepPoint>& points)
{
    io::CsvWriter w({"loss_kind", "lambda", "l2_dist", "cosine", "loss"});
    for (const auto& p : points) {
        w.add_row({to_string(p.kind), io::format_number(p.lambda), io::format_number(p.l2_dist),
                   io::format_number(p.cosine), io::format_number(p.loss)});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// Lipschitz estimates and the gradient-stability bound.

struct LipschitzEstimate {
    double k_hat = 0.0;
    std::size_t sample_count = 0;  ///< random draws per input
    std::size_t pairs = 0;         ///< ratios evaluated
    PerturbationSpec spec;
};

namespace detail {
inline double grad_gap_ratio(const Vector& ga, const Vector& gb, Norm norm, const Eigen::RowVectorXd& xa,
                             const Eigen::RowVectorXd& xb)
{
    return (ga - gb).norm() / std::max(perturbation_norm(norm, xa - xb), 1e-12);
}
}  // namespace detail

/// Max over sampled pairs of ||grad_theta CE(x') - grad_theta CE(x)|| / ||x' - x||_p.
/// Draws are uniform in S(x) with seeds nested in the draw index, plus each
/// sample's PGD endpoint.
inline LipschitzEstimate estimate_lipschitz(const ModelParameters& params, const ExampleBatch& batch,
                                            const PerturbationSpec& spec, std::size_t sample_count,
                                            std::uint64_t seed)
{
    require(sample_count >= 1, "estimate_lipschitz: sample_count must be >= 1");
    spec.validate();
    const Network net(params.arch);
    LipschitzEstimate est;
    est.sample_count = sample_count;
    est.spec = spec;
    const Matrix g0 = per_sample_ce_param_grads(net, params, batch.inputs, batch.labels);
    auto ce_spec = spec;
    ce_spec.loss_kind = InputLossKind::ce;
    const Matrix endpoints = pgd_attack(params, batch, ce_spec);
    const Matrix ge = per_sample_ce_param_grads(net, params, endpoints, batch.labels);
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        const Eigen::RowVectorXd x = batch.inputs.row(i);
        est.k_hat = std::max(est.k_hat, detail::grad_gap_ratio(ge.row(i).transpose(), g0.row(i).transpose(), spec.norm,
                                                               endpoints.row(i), x));
        ++est.pairs;
    }
    Matrix draws(batch.inputs.rows(), batch.inputs.cols());
    for (std::size_t s = 0; s < sample_count; ++s) {
        const auto draw_spec = spec.with_seed(derive_seed(seed, {stream::sample, s}));
        for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
            random_start_row(draw_spec, batch.sample_ids[static_cast<std::size_t>(i)], draws.row(i), batch.inputs.row(i));
        }
        const Matrix gd = per_sample_ce_param_grads(net, params, draws, batch.labels);
        for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
            est.k_hat = std::max(est.k_hat, detail::grad_gap_ratio(gd.row(i).transpose(), g0.row(i).transpose(),
                                                                   spec.norm, draws.row(i), batch.inputs.row(i)));
            ++est.pairs;
        }
    }
    return est;
}

/// Points of S(x) on a regular grid with `points_per_dim` values per
/// coordinate, endpoints x -/+ eps included (clipped to [0,1]). l-inf only.
inline Matrix linf_grid(const Eigen::RowVectorXd& x, double epsilon, std::size_t points_per_dim)
{
    require(points_per_dim >= 2, "linf_grid: need at least 2 points per dimension");
    const auto d = static_cast<std::size_t>(x.size());
    std::size_t total = 1;
    for (std::size_t j = 0; j < d; ++j) {
        total *= points_per_dim;
        require(total <= 2'000'000, "linf_grid: grid too large");
    }
    Matrix grid(static_cast<Eigen::Index>(total), x.size());
    for (std::size_t m = 0; m < total; ++m) {
        std::size_t rest = m;
        for (std::size_t j = 0; j < d; ++j) {
            const std::size_t k = rest % points_per_dim;
            rest /= points_per_dim;
            const double xj = x[static_cast<Eigen::Index>(j)];
            double v;
            if (k == 0) {
                v = std::max(0.0, xj - epsilon);
            } else if (k + 1 == points_per_dim) {
                v = std::min(1.0, xj + epsilon);
            } else {
                const double t = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(points_per_dim - 1);
                v = std::min(1.0, std::max(0.0, xj + t * epsilon));
            }
            grid(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(j)) = v;
        }
    }
    return grid;
}

/// K from a dense grid of S(x) for every listed parameter set. The grid holds
/// every vertex, so for linear-softmax models it contains the exact inner maximiser.
inline LipschitzEstimate dense_grid_lipschitz(const std::vector<const ModelParameters*>& param_sets,
                                              const ExampleBatch& batch, const PerturbationSpec& spec,
                                              std::size_t points_per_dim = 3)
{
    require(spec.norm == Norm::linf, "dense_grid_lipschitz: l-inf only");
    LipschitzEstimate est;
    est.spec = spec;
    for (const auto* p : param_sets) {
        const Network net(p->arch);
        for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
            const Eigen::RowVectorXd x = batch.inputs.row(i);
            const Matrix grid = linf_grid(x, spec.epsilon, points_per_dim);
            const Labels labels(static_cast<std::size_t>(grid.rows()), batch.labels[static_cast<std::size_t>(i)]);
            const Vector g0 = per_sample_ce_param_grads(net, *p, x, Labels{labels[0]}).row(0).transpose();
            const Matrix gg = per_sample_ce_param_grads(net, *p, grid, labels);
            for (Eigen::Index m = 0; m < grid.rows(); ++m) {
                est.k_hat = std::max(est.k_hat, detail::grad_gap_ratio(gg.row(m).transpose(), g0, spec.norm,
                                                                       grid.row(m), x));
                ++est.pairs;
            }
        }
    }
    est.sample_count = points_per_dim;
    return est;
}

enum class InnerMax { pgd, vertex_oracle };

struct Theorem1Row {
    std::size_t pair_id = 0;
    std::int64_t sample_id = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    bool violated = false;
    double margin = 0.0;  ///< rhs - lhs
};

struct Theorem1Report {
    std::vector<Theorem1Row> rows;
    double k_hat = 0.0;
    double violation_rate = 0.0;
    /// K_hat lower-bounds the true K, so a violation indicts K_hat, not the bound itself.
    std::string note = "K_hat is a lower bound on K; a violation indicates K_hat underestimates K, not a failure "
                       "of the bound";
};

/// Relative slack allowed for rounding when flagging violations.
inline constexpr double theorem1_rounding = 1e-12;

/// Per sample: lhs = ||grad J(theta1) - grad J(theta2)||, rhs = ||grad L(theta1) -
/// grad L(theta2)|| + 2 eps K_hat, with grad J taken at the inner maximiser.
inline Theorem1Report theorem1_probe(const ModelParameters& params_1, const ModelParameters& params_2,
                                     const ExampleBatch& batch, const PerturbationSpec& spec, double k_hat,
                                     InnerMax inner = InnerMax::pgd, std::size_t pair_offset = 0)
{
    require(params_1.arch_tag == params_2.arch_tag, "theorem1_probe: snapshots have different architectures");
    const Network net(params_1.arch);
    auto maximiser = [&](const ModelParameters& p) {
        if (inner == InnerMax::vertex_oracle) {
            return vertex_oracle(p, batch, spec).maximizer;
        }
        auto s = spec;
        s.loss_kind = InputLossKind::ce;
        return pgd_attack(p, batch, s);
    };
    const Matrix x1 = maximiser(params_1);
    const Matrix x2 = maximiser(params_2);
    const Matrix gj1 = per_sample_ce_param_grads(net, params_1, x1, batch.labels);
    const Matrix gj2 = per_sample_ce_param_grads(net, params_2, x2, batch.labels);
    const Matrix gl1 = per_sample_ce_param_grads(net, params_1, batch.inputs, batch.labels);
    const Matrix gl2 = per_sample_ce_param_grads(net, params_2, batch.inputs, batch.labels);
    Theorem1Report rep;
    rep.k_hat = k_hat;
    std::size_t violations = 0;
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        Theorem1Row r;
        r.pair_id = pair_offset + static_cast<std::size_t>(i);
        r.sample_id = batch.sample_ids[static_cast<std::size_t>(i)];
        r.lhs = (gj1.row(i) - gj2.row(i)).norm();
        r.rhs = (gl1.row(i) - gl2.row(i)).norm() + 2.0 * spec.epsilon * k_hat;
        r.margin = r.rhs - r.lhs;
        r.violated = r.lhs > r.rhs * (1.0 + theorem1_rounding) + theorem1_rounding;
        violations += r.violated ? 1 : 0;
        rep.rows.push_back(r);
    }
    rep.violation_rate = rep.rows.empty() ? 0.0 : static_cast<double>(violations) / static_cast<double>(rep.rows.size());
    return rep;
}

inline std::string theorem1_csv(const std::vector<Theorem1Row>& rows)
{
    io::CsvWriter w({"pair_id", "lhs", "rhs", "violated"});
    for (const auto& r : rows) {
        w.add_row({std::to_string(r.pair_id), io::format_number(r.lhs), io::format_number(r.rhs),
                   r.violated ? "1" : "0"});
    }
    return w.str();
}

// ---------------------------------------------------------------------------
// Per-sample adversarial loss and rank agreement.

/// Max-CE estimate per sample, indexed by sample_id: the largest CE seen at the
/// PGD iterates (and at x itself when there is no random start).
inline Vector per_sample_adv_loss(const ModelParameters& params, const Dataset& dataset, PerturbationSpec spec,
                                  std::size_t batch_size = 256)
{
    spec.loss_kind = InputLossKind::ce;
    const Network net(params.arch);
    Vector out = Vector::Constant(static_cast<Eigen::Index>(dataset.size()), nan_value);
    for (const auto& batch : sequential_batches(dataset, batch_size)) {
        InputLoss loss;
        loss.labels = &batch.labels;
        Vector best = Vector::Constant(batch.inputs.rows(), -std::numeric_limits<double>::infinity());
        auto track = [&](const Matrix& x) {
            best = best.cwiseMax(input_gradient(net, params, x, loss, false).losses);
        };
        if (!spec.random_start) {
            track(batch.inputs);
        }
        AttackContext ctx;
        ctx.on_step = [&](int, const Matrix& x) { track(x); };
        const Matrix adv = pgd_attack(params, batch, spec, ctx);
        if (spec.steps == 0) {
            track(adv);
        }
        for (std::size_t k = 0; k < batch.size(); ++k) {
            const auto id = batch.sample_ids[k];
            require(id >= 0 && id < static_cast<std::int64_t>(dataset.size()), "per_sample_adv_loss: bad sample id");
            out[id] = best[static_cast<Eigen::Index>(k)];
        }
    }
    return out;
}

inline std::string sample_losses_csv(const Vector& losses)
{
    io::CsvWriter w({"sample_id", "adv_loss"});
    for (Eigen::Index i = 0; i < losses.size(); ++i) {
        w.add_row({std::to_string(i), io::format_number(losses[i])});
    }
    return w.str();
}

namespace detail {
inline std::int64_t tie_pairs(const std::vector<double>& sorted)
{
    std::int64_t total = 0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i + 1;
        while (j < sorted.size() && sorted[j] == sorted[i]) {
            ++j;
        }
        const auto t = static_cast<std::int64_t>(j - i);
        total += t * (t - 1) / 2;
        i = j;
    }
    return total;
}

/// Stable merge sort returning the number of inversions (swaps).
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi)
{
    if (hi - lo < 2) {
        return 0;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

inline std::optional<double> tau_b(std::int64_t concordant_minus_discordant, std::int64_t untied_a,
                                   std::int64_t untied_b)
{
    if (untied_a == 0 || untied_b == 0) {
        return std::nullopt;
    }
    return static_cast<double>(concordant_minus_discordant) /
           std::sqrt(static_cast<double>(untied_a) * static_cast<double>(untied_b));
}
}  // namespace detail

/// Kendall tau-b in O(n log n) (Knight's algorithm). nullopt when either input is constant.
inline std::optional<double> kendall_tau(const std::vector<double>& a, const std::vector<double>& b)
{
    require(a.size() == b.size(), "kendall_tau: length mismatch");
    require(a.size() >= 2, "kendall_tau: need at least 2 values");
    const std::size_t n = a.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
        return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
    });
    std::vector<double> sa(n), sb(n);
    for (std::size_t i = 0; i < n; ++i) {
        sa[i] = a[idx[i]];
        sb[i] = b[idx[i]];
    }
    const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
    const std::int64_t n1 = detail::tie_pairs(sa);
    // joint ties: runs equal in both a and b
    std::int64_t n3 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i + 1;
        while (j < n && sa[j] == sa[i] && sb[j] == sb[i]) ++j;
        const auto t = static_cast<std::int64_t>(j - i);
        n3 += t * (t - 1) / 2;
        i = j;
    }
    std::vector<double> buf(n);
    const std::int64_t swaps = detail::merge_count(sb, buf, 0, n);
    const std::int64_t n2 = detail::tie_pairs(sb);
    return detail::tau_b(n0 - n1 - n2 + n3 - 2 * swaps, n0 - n1, n0 - n2);
}

inline std::optional<double> kendall_tau(const Vector& a, const Vector& b)
{
    return kendall_tau(std::vector<double>(a.data(), a.data() + a.size()),
                       std::vector<double>(b.data(), b.data() + b.size()));
}

inline std::string tau_text(const std::optional<double>& tau) { return io::format_number(tau.value_or(nan_value)) + "\n"; }

/// Everything `diagnose` can produce for one snapshot (or pair).
struct DiagnosticsRecord {
    std::vector<GradNormRow> grad_norms;
    std::vector<SweepPoint> sweep;
    std::vector<double> epoch_cosines;
    std::optional<LipschitzEstimate> lipschitz;
    std::optional<Theorem1Report> theorem1;
    std::optional<Vector> sample_losses;
    std::optional<double> tau;
};

}  // namespace advmem
