#pragma once

#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/models.hpp"
#include "advmem/schedule.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace advmem {

/// Floor applied to probabilities before taking logs.
inline constexpr double prob_floor = 1e-12;

enum class ObjectiveKind { standard_ce, pgd_at, trades, interpolated, pgd_at_te, trades_te };

inline std::string to_string(ObjectiveKind k)
{
    switch (k) {
    case ObjectiveKind::standard_ce: return "standard_ce";
    case ObjectiveKind::pgd_at: return "pgd_at";
    case ObjectiveKind::trades: return "trades";
    case ObjectiveKind::interpolated: return "interpolated";
    case ObjectiveKind::pgd_at_te: return "pgd_at_te";
    case ObjectiveKind::trades_te: return "trades_te";
    }
    return "?";
}

inline ObjectiveKind objective_kind_from_string(const std::string& s)
{
    if (s == "standard_ce") return ObjectiveKind::standard_ce;
    if (s == "pgd_at") return ObjectiveKind::pgd_at;
    if (s == "trades") return ObjectiveKind::trades;
    if (s == "interpolated") return ObjectiveKind::interpolated;
    if (s == "pgd_at_te") return ObjectiveKind::pgd_at_te;
    if (s == "trades_te") return ObjectiveKind::trades_te;
    throw Error("unknown objective kind: " + s);
}

[[nodiscard]] inline bool uses_adversarial(ObjectiveKind k) { return k != ObjectiveKind::standard_ce; }
[[nodiscard]] inline bool uses_ensemble(ObjectiveKind k)
{
    return k == ObjectiveKind::pgd_at_te || k == ObjectiveKind::trades_te;
}
[[nodiscard]] inline bool uses_kl(ObjectiveKind k) { return k == ObjectiveKind::trades || k == ObjectiveKind::trades_te; }

struct ObjectiveConfig {
    ObjectiveKind kind = ObjectiveKind::pgd_at;
    double beta = 6.0;
    Schedule gamma_schedule = Schedule::linear_ramp(1.0);
    double te_weight = 30.0;
    double te_momentum = 0.9;
    Schedule te_ramp = Schedule::gaussian_ramp(1.0);
    double label_smoothing = 0.0;
    /// Let the inner maximisation also ascend the TE term (default: CE only).
    bool te_in_attack = false;

    void validate() const
    {
        require(beta >= 0.0, "ObjectiveConfig: beta must be >= 0");
        require(te_weight >= 0.0, "ObjectiveConfig: te_weight must be >= 0");
        require(te_momentum >= 0.0 && te_momentum < 1.0, "ObjectiveConfig: te_momentum must lie in [0,1)");
        require(label_smoothing >= 0.0 && label_smoothing < 1.0, "ObjectiveConfig: label_smoothing must lie in [0,1)");
    }
};

inline double gamma_at(const ObjectiveConfig& c, double epoch) { return schedule_value(c.gamma_schedule, epoch); }
inline double te_weight_at(const ObjectiveConfig& c, double epoch)
{
    return c.te_weight * schedule_value(c.te_ramp, epoch);
}

// ---------------------------------------------------------------------------
// Probability-level losses (batch means).

namespace detail {
inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what)
{
    require(a.rows() == b.rows() && a.cols() == b.cols(), std::string(what) + ": shape mismatch");
}
inline void check_labels(const Matrix& m, const Labels& labels, const char* what)
{
    require(static_cast<std::size_t>(m.rows()) == labels.size(), std::string(what) + ": batch/label size mismatch");
    for (int y : labels) {
        require(y >= 0 && y < m.cols(), std::string(what) + ": label out of range");
    }
}
}  // namespace detail

/// Mean over the batch of -sum_c t_c log p_c with t = (1-s) onehot + s/C.
inline double cross_entropy(const Matrix& probs, const Labels& labels, double smoothing = 0.0)
{
    detail::check_labels(probs, labels, "cross_entropy");
    require(smoothing >= 0.0 && smoothing < 1.0, "cross_entropy: smoothing must lie in [0,1)");
    const auto C = static_cast<double>(probs.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        double row = 0.0;
        for (Eigen::Index c = 0; c < probs.cols(); ++c) {
            const double t = (c == labels[static_cast<std::size_t>(i)] ? 1.0 - smoothing : 0.0) + smoothing / C;
            if (t != 0.0) {
                row -= t * std::log(std::max(probs(i, c), prob_floor));
            }
        }
        total += row;
    }
    return probs.rows() ? total / static_cast<double>(probs.rows()) : 0.0;
}

/// Mean over the batch of sum_c p_c log(p_c / q_c); 0 log 0 = 0.
inline double kl_divergence(const Matrix& p, const Matrix& q)
{
    detail::check_same_shape(p, q, "kl_divergence");
    double total = 0.0;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            if (p(i, c) > 0.0) {
                total += p(i, c) * (std::log(std::max(p(i, c), prob_floor)) - std::log(std::max(q(i, c), prob_floor)));
            }
        }
    }
    return p.rows() ? total / static_cast<double>(p.rows()) : 0.0;
}

/// Mean over the batch of max_{j != y} z_j - z_y (the quantity an attacker ascends).
inline double cw_margin_loss(const Matrix& logits, const Labels& labels)
{
    require(logits.cols() >= 2, "cw_margin_loss: needs at least two classes");
    detail::check_labels(logits, labels, "cw_margin_loss");
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        double best = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (c != y) {
                best = std::max(best, logits(i, c));
            }
        }
        total += best - logits(i, y);
    }
    return logits.rows() ? total / static_cast<double>(logits.rows()) : 0.0;
}

/// Mean over the batch of ||f - p_hat||_2^2.
inline double te_regularizer(const Matrix& adv_probs, const Matrix& ensemble_reads)
{
    detail::check_same_shape(adv_probs, ensemble_reads, "te_regularizer");
    if (adv_probs.rows() == 0) {
        return 0.0;
    }
    return (adv_probs - ensemble_reads).rowwise().squaredNorm().mean();
}

// ---------------------------------------------------------------------------
// Logit-level losses: per-sample values and per-sample logit gradients.
// Computed through log-softmax so values and gradients agree exactly.

struct LogitLoss {
    Vector values;
    Matrix dlogits;
};

inline LogitLoss ce_logits(const Matrix& logits, const Labels& labels, double smoothing = 0.0)
{
    detail::check_labels(logits, labels, "ce_logits");
    const Matrix logp = log_softmax_rows(logits);
    const auto C = static_cast<double>(logits.cols());
    LogitLoss out{Vector(logits.rows()), logp.array().exp().matrix()};
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        double v = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            const double t = (c == labels[static_cast<std::size_t>(i)] ? 1.0 - smoothing : 0.0) + smoothing / C;
            v -= t * logp(i, c);
            out.dlogits(i, c) -= t;
        }
        out.values[i] = v;
    }
    return out;
}

struct KlLoss {
    Vector values;
    Matrix d_clean;
    Matrix d_adv;
};

/// KL(softmax(clean) || softmax(adv)) with gradients for both logit sets.
inline KlLoss kl_logits(const Matrix& clean_logits, const Matrix& adv_logits)
{
    detail::check_same_shape(clean_logits, adv_logits, "kl_logits");
    const Matrix logp = log_softmax_rows(clean_logits);
    const Matrix logq = log_softmax_rows(adv_logits);
    const Matrix p = logp.array().exp().matrix();
    const Matrix q = logq.array().exp().matrix();
    KlLoss out{Vector(p.rows()), Matrix(p.rows(), p.cols()), q - p};
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        double v = 0.0;
        double mean_a = 0.0;
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            const double a = logp(i, c) - logq(i, c);
            if (p(i, c) > 0.0) {
                v += p(i, c) * a;
                mean_a += p(i, c) * a;
            }
        }
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            out.d_clean(i, c) = p(i, c) * ((logp(i, c) - logq(i, c)) - mean_a);
        }
        out.values[i] = v;
    }
    return out;
}

/// KL(p || softmax(adv)) with p held constant.
inline LogitLoss kl_fixed_logits(const Matrix& clean_probs, const Matrix& adv_logits)
{
    detail::check_same_shape(clean_probs, adv_logits, "kl_fixed_logits");
    const Matrix logq = log_softmax_rows(adv_logits);
    LogitLoss out{Vector(adv_logits.rows()), logq.array().exp().matrix() - clean_probs};
    for (Eigen::Index i = 0; i < adv_logits.rows(); ++i) {
        double v = 0.0;
        for (Eigen::Index c = 0; c < adv_logits.cols(); ++c) {
            const double pc = clean_probs(i, c);
            if (pc > 0.0) {
                v += pc * (std::log(std::max(pc, prob_floor)) - logq(i, c));
            }
        }
        out.values[i] = v;
    }
    return out;
}

/// max_{j != y} z_j - z_y; ties resolve to the lowest index.
inline LogitLoss cw_logits(const Matrix& logits, const Labels& labels)
{
    require(logits.cols() >= 2, "cw_logits: needs at least two classes");
    detail::check_labels(logits, labels, "cw_logits");
    LogitLoss out{Vector(logits.rows()), Matrix::Zero(logits.rows(), logits.cols())};
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        Eigen::Index best = -1;
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (c != y && (best < 0 || logits(i, c) > logits(i, best))) {
                best = c;
            }
        }
        out.values[i] = logits(i, best) - logits(i, y);
        out.dlogits(i, best) = 1.0;
        out.dlogits(i, y) = -1.0;
    }
    return out;
}

/// ||softmax(adv) - target||^2 per sample.
inline LogitLoss te_logits(const Matrix& adv_logits, const Matrix& targets)
{
    detail::check_same_shape(adv_logits, targets, "te_logits");
    const Matrix p = softmax_rows(adv_logits);
    const Matrix g = 2.0 * (p - targets);
    LogitLoss out{(p - targets).rowwise().squaredNorm(), Matrix(p.rows(), p.cols())};
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double pg = p.row(i).dot(g.row(i));
        out.dlogits.row(i) = p.row(i).cwiseProduct(g.row(i)).array() - p.row(i).array() * pg;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composite objectives.

/// Components of one objective evaluation. kl_term and te_term are unweighted;
/// residual = adv_ce - clean_ce. Components that do not apply are NaN.
struct LossBreakdown {
    ObjectiveKind kind = ObjectiveKind::pgd_at;
    double total = 0.0;
    double clean_ce = 0.0;
    double adv_ce = std::numeric_limits<double>::quiet_NaN();
    double kl_term = std::numeric_limits<double>::quiet_NaN();
    double te_term = std::numeric_limits<double>::quiet_NaN();
    double residual = std::numeric_limits<double>::quiet_NaN();
    double beta = 0.0;
    double gamma = std::numeric_limits<double>::quiet_NaN();
    double te_weight = 0.0;

    /// The total rebuilt from the components by the kind's formula.
    [[nodiscard]] double reconstruct() const
    {
        switch (kind) {
        case ObjectiveKind::standard_ce: return clean_ce;
        case ObjectiveKind::pgd_at: return adv_ce;
        case ObjectiveKind::trades: return clean_ce + beta * kl_term;
        case ObjectiveKind::interpolated: return (1.0 - gamma) * clean_ce + gamma * adv_ce;
        case ObjectiveKind::pgd_at_te: return adv_ce + te_weight * te_term;
        case ObjectiveKind::trades_te: return clean_ce + beta * kl_term + te_weight * te_term;
        }
        return std::numeric_limits<double>::quiet_NaN();
    }
};

/// Unweighted per-component parameter gradients.
struct ComponentGradients {
    Vector clean_ce;
    Vector adv_ce;
    Vector kl;
    Vector te;
    Vector residual;
};

struct GradientResult {
    Vector total;
    LossBreakdown breakdown;
    std::optional<ComponentGradients> components;
};

namespace detail {

struct CompositeTerms {
    double clean_coef = 0.0;
    double adv_coef = 0.0;
    double kl_coef = 0.0;
    double te_coef = 0.0;
};

inline CompositeTerms composite_terms(const ObjectiveConfig& c, double epoch, LossBreakdown& b)
{
    CompositeTerms t;
    b.kind = c.kind;
    b.beta = c.beta;
    switch (c.kind) {
    case ObjectiveKind::standard_ce: t.clean_coef = 1.0; break;
    case ObjectiveKind::pgd_at: t.adv_coef = 1.0; break;
    case ObjectiveKind::trades:
        t.clean_coef = 1.0;
        t.kl_coef = c.beta;
        break;
    case ObjectiveKind::interpolated:
        b.gamma = gamma_at(c, epoch);
        t.clean_coef = 1.0 - b.gamma;
        t.adv_coef = b.gamma;
        break;
    case ObjectiveKind::pgd_at_te:
        t.adv_coef = 1.0;
        b.te_weight = te_weight_at(c, epoch);
        t.te_coef = b.te_weight;
        break;
    case ObjectiveKind::trades_te:
        t.clean_coef = 1.0;
        t.kl_coef = c.beta;
        b.te_weight = te_weight_at(c, epoch);
        t.te_coef = b.te_weight;
        break;
    }
    return t;
}

inline Matrix add_scaled(const std::optional<Matrix>& acc, double coef, const Matrix& m)
{
    return acc ? Matrix(*acc + coef * m) : Matrix(coef * m);
}

inline Vector backprop(const Network& net, const ModelParameters& params, const Tape& tape, const Matrix& dlogits)
{
    Vector g = Vector::Zero(static_cast<Eigen::Index>(params.parameter_count()));
    net.backward(params, tape, dlogits, &g);
    return g;
}

}  // namespace detail

/// Evaluates the composite objective and its parameter gradient with the
/// adversarial inputs held fixed. `ensemble_reads` is required for TE kinds.
inline GradientResult grad_params(const ObjectiveConfig& config, const ModelParameters& params,
                                  const ExampleBatch& batch, const Matrix& adv_inputs, const Matrix* ensemble_reads,
                                  double epoch, bool with_components = false, bool with_gradient = true)
{
    config.validate();
    const bool need_adv = uses_adversarial(config.kind) || (with_components && adv_inputs.size() > 0);
    if (uses_adversarial(config.kind)) {
        require(adv_inputs.rows() == batch.inputs.rows() && adv_inputs.cols() == batch.inputs.cols(),
                "composite loss: adversarial inputs are not aligned with the batch");
    }
    if (uses_ensemble(config.kind)) {
        require(ensemble_reads != nullptr, "composite loss: ensemble reads are required for " + to_string(config.kind));
        require(ensemble_reads->rows() == batch.inputs.rows() &&
                    ensemble_reads->cols() == params.arch.class_count,
                "composite loss: ensemble reads are not aligned with the batch");
    }
    const auto N = static_cast<double>(batch.size());
    require(batch.size() > 0, "composite loss: empty batch");

    GradientResult result;
    auto& b = result.breakdown;
    const auto terms = detail::composite_terms(config, epoch, b);

    const Network net(params.arch);
    Tape clean_tape;
    Tape adv_tape;
    const Matrix zc = net.forward(params, batch.inputs, &clean_tape);
    const auto ce_c = ce_logits(zc, batch.labels, config.label_smoothing);
    b.clean_ce = ce_c.values.mean();

    std::optional<Matrix> za;
    std::optional<LogitLoss> ce_a;
    std::optional<KlLoss> kl;
    std::optional<LogitLoss> te;
    if (need_adv) {
        za = net.forward(params, adv_inputs, &adv_tape);
        ce_a = ce_logits(*za, batch.labels, config.label_smoothing);
        b.adv_ce = ce_a->values.mean();
        b.residual = b.adv_ce - b.clean_ce;
        if (uses_kl(config.kind)) {
            kl = kl_logits(zc, *za);
            b.kl_term = kl->values.mean();
        }
        if (uses_ensemble(config.kind)) {
            te = te_logits(*za, *ensemble_reads);
            b.te_term = te->values.mean();
        }
    }

    switch (config.kind) {
    case ObjectiveKind::standard_ce: b.total = b.clean_ce; break;
    case ObjectiveKind::pgd_at: b.total = b.adv_ce; break;
    case ObjectiveKind::trades: b.total = b.clean_ce + config.beta * b.kl_term; break;
    case ObjectiveKind::interpolated: b.total = terms.clean_coef * b.clean_ce + terms.adv_coef * b.adv_ce; break;
    case ObjectiveKind::pgd_at_te:
        b.total = terms.te_coef == 0.0 ? b.adv_ce : b.adv_ce + terms.te_coef * b.te_term;
        break;
    case ObjectiveKind::trades_te:
        b.total = b.clean_ce + config.beta * b.kl_term;
        if (terms.te_coef != 0.0) {
            b.total += terms.te_coef * b.te_term;
        }
        break;
    }

    if (!with_gradient) {
        return result;
    }

    std::optional<Matrix> dzc;
    std::optional<Matrix> dza;
    if (terms.clean_coef != 0.0) {
        dzc = detail::add_scaled(dzc, terms.clean_coef, ce_c.dlogits);
    }
    if (kl && terms.kl_coef != 0.0) {
        dzc = detail::add_scaled(dzc, terms.kl_coef, kl->d_clean);
        dza = detail::add_scaled(dza, terms.kl_coef, kl->d_adv);
    }
    if (ce_a && terms.adv_coef != 0.0) {
        dza = detail::add_scaled(dza, terms.adv_coef, ce_a->dlogits);
    }
    if (te && terms.te_coef != 0.0) {
        dza = detail::add_scaled(dza, terms.te_coef, te->dlogits);
    }

    result.total = Vector::Zero(static_cast<Eigen::Index>(params.parameter_count()));
    if (dzc) {
        result.total = detail::backprop(net, params, clean_tape, *dzc / N);
    }
    if (dza) {
        const Vector ga = detail::backprop(net, params, adv_tape, *dza / N);
        if (dzc) {
            result.total += ga;
        } else {
            result.total = ga;
        }
    }

    if (with_components) {
        ComponentGradients comp;
        const auto P = static_cast<Eigen::Index>(params.parameter_count());
        comp.clean_ce = detail::backprop(net, params, clean_tape, ce_c.dlogits / N);
        comp.adv_ce = ce_a ? detail::backprop(net, params, adv_tape, ce_a->dlogits / N) : Vector::Zero(P);
        comp.residual = comp.adv_ce - comp.clean_ce;
        if (kl) {
            comp.kl = detail::backprop(net, params, clean_tape, kl->d_clean / N) +
                      detail::backprop(net, params, adv_tape, kl->d_adv / N);
        } else if (za) {
            // KL(clean || adv) for reporting even when the objective does not use it.
            const auto k = kl_logits(zc, *za);
            comp.kl = detail::backprop(net, params, clean_tape, k.d_clean / N) +
                      detail::backprop(net, params, adv_tape, k.d_adv / N);
        } else {
            comp.kl = Vector::Zero(P);
        }
        comp.te = te ? detail::backprop(net, params, adv_tape, te->dlogits / N) : Vector::Zero(P);
        result.components = std::move(comp);
    }
    return result;
}

inline LossBreakdown composite_loss(const ObjectiveConfig& config, const ModelParameters& params,
                                    const ExampleBatch& batch, const Matrix& adv_inputs, const Matrix* ensemble_reads,
                                    double epoch)
{
    return grad_params(config, params, batch, adv_inputs, ensemble_reads, epoch, false, false).breakdown;
}

// ---------------------------------------------------------------------------
// Input gradients.

enum class InputLossKind { ce, kl_vs_clean, cw };

inline std::string to_string(InputLossKind k)
{
    switch (k) {
    case InputLossKind::ce: return "ce";
    case InputLossKind::kl_vs_clean: return "kl_vs_clean";
    case InputLossKind::cw: return "cw";
    }
    return "?";
}

inline InputLossKind input_loss_kind_from_string(const std::string& s)
{
    if (s == "ce") return InputLossKind::ce;
    if (s == "kl_vs_clean" || s == "kl") return InputLossKind::kl_vs_clean;
    if (s == "cw") return InputLossKind::cw;
    throw Error("unknown input loss kind: " + s);
}

/// What the inner maximisation ascends. Optionally adds te_weight * TE(adv, te_targets).
struct InputLoss {
    InputLossKind kind = InputLossKind::ce;
    const Labels* labels = nullptr;
    const Matrix* clean_probs = nullptr;
    double smoothing = 0.0;
    const Matrix* te_targets = nullptr;
    double te_weight = 0.0;
};

struct InputGradient {
    Vector losses;  ///< per-sample loss values
    Matrix grad;    ///< row i: gradient of sample i's loss w.r.t. its input
};

inline InputGradient input_gradient(const Network& net, const ModelParameters& params, const Matrix& inputs,
                                    const InputLoss& loss, bool with_gradient = true)
{
    Tape tape;
    const Matrix z = net.forward(params, inputs, with_gradient ? &tape : nullptr);
    LogitLoss l;
    switch (loss.kind) {
    case InputLossKind::ce:
        require(loss.labels != nullptr, "input gradient: ce loss needs labels");
        l = ce_logits(z, *loss.labels, loss.smoothing);
        break;
    case InputLossKind::kl_vs_clean:
        require(loss.clean_probs != nullptr, "input gradient: kl_vs_clean loss needs clean probabilities");
        l = kl_fixed_logits(*loss.clean_probs, z);
        break;
    case InputLossKind::cw:
        require(loss.labels != nullptr, "input gradient: cw loss needs labels");
        l = cw_logits(z, *loss.labels);
        break;
    }
    if (loss.te_targets != nullptr && loss.te_weight != 0.0) {
        const auto t = te_logits(z, *loss.te_targets);
        l.values += loss.te_weight * t.values;
        l.dlogits += loss.te_weight * t.dlogits;
    }
    InputGradient out{std::move(l.values), Matrix()};
    if (with_gradient) {
        out.grad = net.backward(params, tape, l.dlogits, nullptr);
    }
    return out;
}

/// Per-sample input gradients of the chosen loss. `labels` serves ce/cw,
/// `clean_probs` serves kl_vs_clean (held constant).
inline Matrix grad_input(InputLossKind kind, const ModelParameters& params, const Matrix& inputs, const Labels* labels,
                         const Matrix* clean_probs = nullptr)
{
    InputLoss loss;
    loss.kind = kind;
    loss.labels = labels;
    loss.clean_probs = clean_probs;
    return input_gradient(Network(params.arch), params, inputs, loss).grad;
}

/// Per-sample loss values without gradients.
inline Vector input_losses(const ModelParameters& params, const Matrix& inputs, const InputLoss& loss)
{
    return input_gradient(Network(params.arch), params, inputs, loss, false).losses;
}

/// Row i: gradient of sample i's cross-entropy w.r.t. the parameters.
inline Matrix per_sample_ce_param_grads(const Network& net, const ModelParameters& params, const Matrix& inputs,
                                        const Labels& labels, double smoothing = 0.0)
{
    const auto P = static_cast<Eigen::Index>(params.parameter_count());
    Matrix out(inputs.rows(), P);
    for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
        Tape tape;
        const Matrix x = inputs.row(i);
        const Matrix z = net.forward(params, x, &tape);
        const auto l = ce_logits(z, Labels{labels[static_cast<std::size_t>(i)]}, smoothing);
        Vector g = Vector::Zero(P);
        net.backward(params, tape, l.dlogits, &g);
        out.row(i) = g.transpose();
    }
    return out;
}

}  // namespace advmem
