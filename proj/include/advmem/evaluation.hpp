#pragma once

#include "advmem/attacks.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"

#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace advmem {

inline constexpr std::size_t default_eval_batch = 256;

/// Per-sample correctness under the (optional) attack.
inline std::vector<bool> correct_predictions(const ModelParameters& params, const Dataset& dataset,
                                             const std::optional<PerturbationSpec>& spec,
                                             std::size_t batch_size = default_eval_batch)
{
    std::vector<bool> correct;
    correct.reserve(dataset.size());
    for (const auto& batch : sequential_batches(dataset, batch_size)) {
        Matrix inputs = batch.inputs;
        if (spec) {
            AttackContext ctx;
            Matrix clean_probs;
            if (spec->loss_kind == InputLossKind::kl_vs_clean) {
                clean_probs = forward_probs(params, batch.inputs);
                ctx.clean_probs = &clean_probs;
            }
            inputs = pgd_attack(params, batch, *spec, ctx);
        }
        const auto pred = predict(params, inputs);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            correct.push_back(pred[i] == batch.labels[i]);
        }
    }
    return correct;
}

/// Fraction of correctly classified inputs; adversarial when a spec is given.
inline double evaluate(const ModelParameters& params, const Dataset& dataset,
                       const std::optional<PerturbationSpec>& spec = std::nullopt,
                       std::size_t batch_size = default_eval_batch)
{
    require(dataset.size() > 0, "evaluate: empty dataset");
    const auto correct = correct_predictions(params, dataset, spec, batch_size);
    const auto hits = static_cast<double>(std::count(correct.begin(), correct.end(), true));
    return hits / static_cast<double>(correct.size());
}

struct NamedAttack {
    std::string name;
    PerturbationSpec spec;
};

struct AttackSuite {
    std::vector<NamedAttack> entries;

    void validate() const
    {
        std::set<std::string> names;
        for (const auto& e : entries) {
            require(!e.name.empty(), "attack suite: empty attack name");
            require(names.insert(e.name).second, "attack suite: duplicate attack name " + e.name);
            require(e.name != "natural", "attack suite: 'natural' is reserved");
            e.spec.validate();
        }
    }
};

/// pgd10: 10 steps; pgd_long: 100 steps; cw_pgd: 40 steps on the CW margin. All step 2/255.
inline NamedAttack standard_attack(const std::string& name, double epsilon, Norm norm = Norm::linf,
                                   std::uint64_t seed = 0)
{
    PerturbationSpec s;
    s.norm = norm;
    s.epsilon = epsilon;
    s.step_size = 2.0 / 255.0;
    s.random_start = true;
    s.seed = seed;
    if (name == "pgd10") {
        s.steps = 10;
    } else if (name == "pgd_long") {
        s.steps = 100;
    } else if (name == "cw_pgd") {
        s.steps = 40;
        s.loss_kind = InputLossKind::cw;
    } else if (name == "fgsm") {
        s.steps = 1;
        s.step_size = epsilon;
        s.random_start = false;
    } else {
        throw Error("unknown attack name: " + name);
    }
    return NamedAttack{name, s};
}

inline AttackSuite make_suite(const std::vector<std::string>& names, double epsilon, Norm norm = Norm::linf,
                              std::uint64_t seed = 0)
{
    AttackSuite suite;
    for (const auto& n : names) {
        suite.entries.push_back(standard_attack(n, epsilon, norm, seed));
    }
    suite.validate();
    return suite;
}

inline AttackSuite default_suite(double epsilon = 8.0 / 255.0, std::uint64_t seed = 0)
{
    return make_suite({"pgd10", "pgd_long", "cw_pgd"}, epsilon, Norm::linf, seed);
}

/// One Best/Final/Diff triple (accuracies in percent).
struct ReportRow {
    std::string method;
    std::string metric;
    double best = 0.0;
    double final = 0.0;

    [[nodiscard]] double diff() const { return best - final; }
};

inline std::vector<ReportRow> run_suite(const ModelParameters& best, const ModelParameters& final,
                                        const Dataset& dataset, const AttackSuite& suite,
                                        const std::string& method = "model")
{
    suite.validate();
    std::vector<ReportRow> rows;
    rows.push_back({method, "natural", 100.0 * evaluate(best, dataset), 100.0 * evaluate(final, dataset)});
    for (const auto& e : suite.entries) {
        rows.push_back({method, e.name, 100.0 * evaluate(best, dataset, e.spec), 100.0 * evaluate(final, dataset, e.spec)});
    }
    return rows;
}

/// Columns: method, metric, best, final, diff (two decimals; diff recomputed here).
inline std::string render_report_csv(const std::vector<ReportRow>& rows)
{
    io::CsvWriter w({"method", "metric", "best", "final", "diff"});
    for (const auto& r : rows) {
        w.add_row({r.method, r.metric, io::fixed(r.best, 2), io::fixed(r.final, 2), io::fixed(r.diff(), 2)});
    }
    return w.str();
}

/// Best/Final/Diff grouped per metric, one line per method.
inline std::string render_report_markdown(const std::vector<ReportRow>& rows)
{
    std::vector<std::string> methods;
    std::vector<std::string> metrics;
    std::map<std::pair<std::string, std::string>, ReportRow> cell;
    for (const auto& r : rows) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
            methods.push_back(r.method);
        }
        if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) {
            metrics.push_back(r.metric);
        }
        cell[{r.method, r.metric}] = r;
    }
    std::ostringstream ss;
    ss << "| Method |";
    for (const auto& m : metrics) {
        ss << ' ' << m << " Best | " << m << " Final | " << m << " Diff |";
    }
    ss << "\n|---|";
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        ss << "---:|---:|---:|";
    }
    ss << '\n';
    for (const auto& method : methods) {
        ss << "| " << method << " |";
        for (const auto& m : metrics) {
            auto it = cell.find({method, m});
            if (it == cell.end()) {
                ss << " | | |";
                continue;
            }
            ss << ' ' << io::fixed(it->second.best, 2) << " | " << io::fixed(it->second.final, 2) << " | "
               << io::fixed(it->second.diff(), 2) << " |";
        }
        ss << '\n';
    }
    return ss.str();
}

}  // namespace advmem
