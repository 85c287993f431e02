#pragma once

#include "advmem/attacks.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/diagnostics.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace advmem {

/// q-th percentile with linear interpolation between order statistics (numpy's default).
inline double percentile(std::vector<double> values, double q)
{
    require(!values.empty(), "percentile: empty input");
    require(q >= 0.0 && q <= 100.0, "percentile: q must lie in [0,100]");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

/// True-class logit minus the largest other logit, per row.
inline Vector output_margins(const Matrix& logits, const Labels& labels)
{
    require(static_cast<std::size_t>(logits.rows()) == labels.size(), "output_margins: label count mismatch");
    Vector m(logits.rows());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        double other = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < logits.cols(); ++c) {
            if (c != y) {
                other = std::max(other, logits(i, c));
            }
        }
        m[i] = logits(i, y) - other;
    }
    return m;
}

struct MarginEstimate {
    double gamma = 0.0;
    double q = 10.0;
    std::size_t sample_count = 0;

    /// Non-positive margins invert the sign semantics of margin-normalised measures.
    [[nodiscard]] bool positive() const { return gamma > 0.0; }
};

inline MarginEstimate margin_percentile(const ModelParameters& params, const Dataset& dataset, double q = 10.0)
{
    require(dataset.size() > 0, "margin_percentile: empty dataset");
    require(q > 0.0 && q < 100.0, "margin_percentile: q must lie in (0,100)");
    std::vector<double> margins;
    margins.reserve(dataset.size());
    for (const auto& batch : sequential_batches(dataset, 256)) {
        const Vector m = output_margins(forward_logits(params, batch.inputs), batch.labels);
        margins.insert(margins.end(), m.data(), m.data() + m.size());
    }
    return MarginEstimate{percentile(margins, q), q, margins.size()};
}

struct SpectralNorm {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct PowerIterationOptions {
    double tolerance = 1e-13;  ///< relative change between successive estimates
    int max_iterations = 20000;
    std::uint64_t seed = 0;
};

/// Largest singular value of a linear operator given by `apply` and its adjoint.
inline SpectralNorm operator_norm(const std::function<Vector(const Vector&)>& apply,
                                  const std::function<Vector(const Vector&)>& adjoint, Eigen::Index in_dim,
                                  const PowerIterationOptions& opt = {})
{
    Rng rng(derive_seed(opt.seed, {stream::sample}));
    Vector v(in_dim);
    for (Eigen::Index j = 0; j < in_dim; ++j) {
        v[j] = rng.normal();
    }
    v.normalize();
    SpectralNorm out;
    double prev = -1.0;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const Vector w = adjoint(apply(v));
        const double n = w.norm();
        out.iterations = it;
        if (n == 0.0) {
            out.value = 0.0;
            out.converged = true;
            return out;
        }
        out.value = std::sqrt(v.dot(w));  // Rayleigh quotient of W^T W
        v = w / n;
        if (prev >= 0.0 && std::abs(out.value - prev) <= opt.tolerance * out.value) {
            out.converged = true;
            break;
        }
        prev = out.value;
    }
    return out;
}

/// Spectral norm of a dense weight (as an out x in matrix) or of a conv filter
/// as the operator at its configured input size.
inline SpectralNorm layer_spectral_norm(const ParamGroup& group, const PowerIterationOptions& opt = {})
{
    require(is_weight(group.role), "layer_spectral_norm: " + group.name + " is not a weight group");
    if (group.conv) {
        const auto& g = *group.conv;
        auto apply = [&](const Vector& x) -> Vector {
            const Matrix y = conv_apply(group, Matrix(x.transpose()));
            return y.row(0).transpose();
        };
        auto adjoint = [&](const Vector& y) -> Vector {
            const Matrix x = conv_adjoint(group, Matrix(y.transpose()));
            return x.row(0).transpose();
        };
        return operator_norm(apply, adjoint, static_cast<Eigen::Index>(g.in_size()), opt);
    }
    require(group.shape.size() == 2, "layer_spectral_norm: dense weight must be 2-D");
    const Eigen::Map<const Matrix> W(group.values.data(), static_cast<Eigen::Index>(group.shape[0]),
                                     static_cast<Eigen::Index>(group.shape[1]));
    auto apply = [&](const Vector& x) -> Vector { return W * x; };
    auto adjoint = [&](const Vector& y) -> Vector { return W.transpose() * y; };
    return operator_norm(apply, adjoint, W.cols(), opt);
}

struct LayerNorms {
    std::string name;
    double spectral = 0.0;
    double l1 = 0.0;
    bool converged = true;
};

inline std::vector<LayerNorms> layer_norms(const ModelParameters& params, const PowerIterationOptions& opt = {})
{
    std::vector<LayerNorms> out;
    for (const auto& g : params.groups) {
        if (!is_weight(g.role)) {
            continue;
        }
        const auto s = layer_spectral_norm(g, opt);
        out.push_back(LayerNorms{g.name, s.value, g.values.lpNorm<1>(), s.converged});
    }
    return out;
}

/// A margin-normalised value; undefined when the margin is not positive.
struct NormalizedMeasure {
    double value = nan_value;
    bool defined = false;
};

inline NormalizedMeasure spectral_complexity(const std::vector<LayerNorms>& layers, double gamma_margin)
{
    if (!(gamma_margin > 0.0)) {
        return {};
    }
    double prod = 1.0;
    for (const auto& l : layers) {
        prod *= l.spectral;
    }
    return {prod / gamma_margin, true};
}

inline NormalizedMeasure l1_complexity(const std::vector<LayerNorms>& layers, double gamma_margin)
{
    if (!(gamma_margin > 0.0)) {
        return {};
    }
    double sum = 0.0;
    for (const auto& l : layers) {
        sum += l.l1;
    }
    return {sum / gamma_margin, true};
}

inline NormalizedMeasure spectral_complexity(const ModelParameters& params, double gamma_margin)
{
    return spectral_complexity(layer_norms(params), gamma_margin);
}

inline NormalizedMeasure l1_complexity(const ModelParameters& params, double gamma_margin)
{
    return l1_complexity(layer_norms(params), gamma_margin);
}

// ---------------------------------------------------------------------------
// Input curvature.

struct EigenEstimate {
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct HessianOptions {
    double h = 1e-4;
    double tolerance = 1e-10;
    int max_iterations = 2000;
    std::uint64_t seed = 0;
};

/// Dominant (largest-magnitude) Hessian eigenvalue at x0 by power iteration on
/// central finite-difference Hessian-vector products of `grad_fn`.
inline EigenEstimate dominant_hessian_eigenvalue(const std::function<Vector(const Vector&)>& grad_fn, const Vector& x0,
                                                 const HessianOptions& opt = {})
{
    Rng rng(derive_seed(opt.seed, {stream::sample}));
    Vector v(x0.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) {
        v[j] = rng.normal();
    }
    v.normalize();
    auto hvp = [&](const Vector& u) -> Vector {
        return (grad_fn(x0 + opt.h * u) - grad_fn(x0 - opt.h * u)) / (2.0 * opt.h);
    };
    EigenEstimate out;
    double prev = 0.0;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        const Vector w = hvp(v);
        out.iterations = it;
        out.value = v.dot(w);
        const double n = w.norm();
        if (n == 0.0) {
            out.converged = true;
            return out;
        }
        v = w / n;
        if (it > 1 && std::abs(out.value - prev) <= opt.tolerance * std::max(std::abs(out.value), 1e-300)) {
            out.converged = true;
            break;
        }
        prev = out.value;
    }
    return out;
}

struct CurvatureEstimate {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::vector<double> per_sample;
    bool converged = true;
};

/// Batch mean of the per-sample dominant eigenvalue of the input Hessian of CE.
inline CurvatureEstimate input_curvature(const ModelParameters& params, const ExampleBatch& batch,
                                         const HessianOptions& opt = {})
{
    require(batch.size() > 0, "input_curvature: empty batch");
    const Network net(params.arch);
    CurvatureEstimate out;
    for (Eigen::Index i = 0; i < batch.inputs.rows(); ++i) {
        const Labels label{batch.labels[static_cast<std::size_t>(i)]};
        InputLoss loss;
        loss.labels = &label;
        auto grad_fn = [&](const Vector& x) -> Vector {
            return input_gradient(net, params, Matrix(x.transpose()), loss).grad.row(0).transpose();
        };
        auto o = opt;
        o.seed = derive_seed(opt.seed, {static_cast<std::uint64_t>(batch.sample_ids[static_cast<std::size_t>(i)])});
        const auto e = dominant_hessian_eigenvalue(grad_fn, batch.inputs.row(i).transpose(), o);
        out.per_sample.push_back(e.value);
        out.converged = out.converged && e.converged;
    }
    const auto n = static_cast<double>(out.per_sample.size());
    double sum = 0.0;
    for (double v : out.per_sample) sum += v;
    out.mean = sum / n;
    double ss = 0.0;
    for (double v : out.per_sample) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = out.per_sample.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : nan_value;
    return out;
}

// ---------------------------------------------------------------------------
// Weight-landscape flatness.

/// Mean adversarial CE on the dataset with a fixed attack seed.
inline double adversarial_loss(const ModelParameters& params, const Dataset& dataset, PerturbationSpec spec,
                               std::size_t batch_size = 256)
{
    spec.loss_kind = InputLossKind::ce;
    const Network net(params.arch);
    double total = 0.0;
    for (const auto& batch : sequential_batches(dataset, batch_size)) {
        const Matrix adv = pgd_attack(params, batch, spec);
        InputLoss loss;
        loss.labels = &batch.labels;
        total += input_gradient(net, params, adv, loss, false).losses.sum();
    }
    return total / static_cast<double>(dataset.size());
}

struct FlatnessEstimate {
    double mean = 0.0;
    double stderr_ = nan_value;
    std::vector<double> per_direction;
};

/// Mean over directions and lambdas of |J(theta + lambda d) - J(theta)|.
inline FlatnessEstimate weight_flatness(const ModelParameters& params, const Dataset& dataset,
                                        const PerturbationSpec& spec, const std::vector<std::uint64_t>& direction_seeds,
                                        const std::vector<double>& lambdas)
{
    require(!direction_seeds.empty(), "weight_flatness: need at least one direction seed");
    require(!lambdas.empty(), "weight_flatness: empty lambda grid");
    const double j0 = adversarial_loss(params, dataset, spec);
    FlatnessEstimate out;
    for (const auto seed : direction_seeds) {
        const Vector d = make_direction(params, seed);
        double acc = 0.0;
        for (const double lambda : lambdas) {
            if (lambda != 0.0) {
                acc += std::abs(adversarial_loss(params.moved(lambda, d), dataset, spec) - j0);
            }
        }
        out.per_direction.push_back(acc / static_cast<double>(lambdas.size()));
    }
    const auto n = static_cast<double>(out.per_direction.size());
    double sum = 0.0;
    for (double v : out.per_direction) sum += v;
    out.mean = sum / n;
    if (out.per_direction.size() > 1) {
        double ss = 0.0;
        for (double v : out.per_direction) ss += (v - out.mean) * (v - out.mean);
        out.stderr_ = std::sqrt(ss / (n - 1.0) / n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report.

struct ComplexityOptions {
    double margin_q = 10.0;
    std::size_t curvature_samples = 64;
    HessianOptions hessian;
    std::size_t flatness_samples = 256;
    std::vector<std::uint64_t> direction_seeds = {1, 2, 3, 4, 5};
    std::vector<double> lambdas = {-0.05, -0.025, 0.025, 0.05};
    PerturbationSpec attack;
};

struct ComplexityReport {
    std::string run_id;
    MarginEstimate margin;
    std::vector<LayerNorms> layers;
    NormalizedMeasure spectral;
    NormalizedMeasure l1;
    CurvatureEstimate curvature;
    FlatnessEstimate flatness;

    [[nodiscard]] std::vector<std::string> flags() const
    {
        std::vector<std::string> f;
        if (!margin.positive()) f.emplace_back("margin_nonpositive");
        for (const auto& l : layers) {
            if (!l.converged) {
                f.emplace_back("spectral_unconverged");
                break;
            }
        }
        if (!curvature.converged) f.emplace_back("curvature_unconverged");
        return f;
    }
};

inline ComplexityReport complexity_report(const std::string& run_id, const ModelParameters& params,
                                          const Dataset& train_set, const ComplexityOptions& opt = {})
{
    ComplexityReport r;
    r.run_id = run_id;
    r.margin = margin_percentile(params, train_set, opt.margin_q);
    r.layers = layer_norms(params);
    r.spectral = spectral_complexity(r.layers, r.margin.gamma);
    r.l1 = l1_complexity(r.layers, r.margin.gamma);
    r.curvature = input_curvature(params, as_batch(head(train_set, opt.curvature_samples)), opt.hessian);
    r.flatness = weight_flatness(params, head(train_set, opt.flatness_samples), opt.attack, opt.direction_seeds,
                                 opt.lambdas);
    return r;
}

inline std::string complexity_csv(const std::vector<ComplexityReport>& reports)
{
    io::CsvWriter w({"run_id", "gamma_margin", "spectral_complexity", "l1_complexity", "input_curvature",
                     "input_curvature_stderr", "weight_flatness", "weight_flatness_stderr", "flags"});
    for (const auto& r : reports) {
        std::string flags;
        for (const auto& f : r.flags()) {
            flags += (flags.empty() ? "" : ";") + f;
        }
        w.add_row({r.run_id, io::format_number(r.margin.gamma), io::format_number(r.spectral.value),
                   io::format_number(r.l1.value), io::format_number(r.curvature.mean),
                   io::format_number(r.curvature.stderr_), io::format_number(r.flatness.mean),
                   io::format_number(r.flatness.stderr_), flags.empty() ? "none" : flags});
    }
    return w.str();
}

}  // namespace advmem
