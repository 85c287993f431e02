// Acceptance driver. Prints one "criterion N: PASS|FAIL | name | detail" line
// per criterion and exits nonzero when any printed criterion fails.
//   --oracle   criteria 1-9 (exact oracles and properties, seconds to minutes)
//   --desk     criteria 10-15 (small training runs, tens of minutes)
//   --only     comma list restricting which criteria run
//   --known-failures  criteria documented as unattainable at desk scale; they
//              still print FAIL, and the exit code is 0 only if the failing
//              set is exactly this list (an unexpected pass is an error too)
#include "advmem/advmem.hpp"
#include "advmem/testing/checks.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#ifndef ADVMEM_CONFIG_DIR
#define ADVMEM_CONFIG_DIR "configs"
#endif

using namespace advmem;
using testing::CheckResult;

namespace {

std::string fixed(double v, int digits = 3)
{
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

struct Run {
    ExperimentConfig cfg;
    Dataset train_set;
    Dataset test_set;
};

Run prepare(const std::filesystem::path& path, std::optional<std::uint64_t> seed = std::nullopt)
{
    Run r;
    r.cfg = load_config(path, seed);
    r.cfg.train.out_dir.clear();
    std::tie(r.train_set, r.test_set) = load_datasets(r.cfg.data);
    bind_model_to_data(r.cfg.train, r.train_set);
    return r;
}

TrainHooks progress(const std::string& tag, std::ostream& log)
{
    TrainHooks h;
    h.on_epoch_end = [&log, tag](const EpochInfo& e) {
        if (std::isnan(e.row.train_rob_acc) && std::isnan(e.row.test_rob_acc)) return;
        log << "  [" << tag << "] epoch " << e.epoch << " loss " << fixed(e.row.loss_total, 4) << " train "
            << fixed(e.row.train_nat_acc) << "/" << fixed(e.row.train_rob_acc) << " test " << fixed(e.row.test_nat_acc)
            << "/" << fixed(e.row.test_rob_acc) << std::endl;
    };
    return h;
}

/// Robust train accuracy at every evaluated epoch.
std::map<int, double> train_robust(const History& h)
{
    std::map<int, double> out;
    for (const auto& r : h.rows) {
        if (!std::isnan(r.train_rob_acc)) out[r.epoch] = r.train_rob_acc;
    }
    return out;
}

class Desk {
public:
    Desk(std::filesystem::path configs, std::ostream& log) : dir_(std::move(configs)), log_(log) {}

    // Random-label runs; the grad-ratio hook runs on the first 1000 iterations.
    struct LabelRun {
        History history;
        double mean_ratio = nan_value;
        std::size_t ratio_count = 0;
    };

    const LabelRun& random_labels(const std::string& kind)
    {
        auto it = label_runs_.find(kind);
        if (it != label_runs_.end()) return it->second;
        auto run = prepare(dir_ / ("random_labels_" + kind + ".json"));
        auto hooks = progress(kind, log_);
        LabelRun out;
        double sum = 0.0;
        if (kind != "interpolated") {
            const auto method = kind == "trades" ? ProbeMethod::trades : ProbeMethod::pgd_at;
            const double beta = run.cfg.train.objective.beta;
            hooks.on_iteration = [&](const IterationInfo& info) {
                if (info.iteration >= 1000) return;
                const auto n = grad_norm_terms_at(info.params, info.batch, info.adv_inputs, method, beta);
                if (n.ratio) {
                    sum += *n.ratio;
                    ++out.ratio_count;
                }
            };
        }
        out.history = train(run.cfg.train, run.train_set, run.test_set, hooks).history;
        if (out.ratio_count > 0) out.mean_ratio = sum / static_cast<double>(out.ratio_count);
        return label_runs_.emplace(kind, std::move(out)).first->second;
    }

    const TrainResult& overfit(const std::string& name, std::optional<std::uint64_t> seed = std::nullopt)
    {
        const auto key = name + (seed ? "#" + std::to_string(*seed) : "");
        auto it = overfit_runs_.find(key);
        if (it != overfit_runs_.end()) return it->second;
        auto run = prepare(dir_ / ("robust_overfit_" + name + ".json"), seed);
        if (!train_set_) train_set_ = run.train_set;
        auto res = train(run.cfg.train, run.train_set, run.test_set, progress(key, log_));
        attack_ = run.cfg.train.eval.selection_attack;
        return overfit_runs_.emplace(key, std::move(res)).first->second;
    }

    CheckResult c10()
    {
        CheckResult r{10, "TRADES memorizes random labels while PGD-AT stays near chance", false, "", 0};
        const auto tr = train_robust(random_labels("trades").history);
        const auto pg = train_robust(random_labels("pgd_at").history);
        std::ostringstream d;
        for (const auto& [epoch, acc] : tr) {
            if (acc < 0.9 || !pg.count(epoch)) continue;
            const double gap = acc - pg.at(epoch);
            d << "epoch " << epoch << ": trades " << fixed(acc) << ", pgd_at " << fixed(pg.at(epoch)) << ", gap "
              << fixed(gap) << " (need >= 0.900 and gap >= 0.400)";
            r.pass = gap >= 0.4;
            r.detail = d.str();
            return r;
        }
        const double best = tr.empty() ? 0.0 : std::max_element(tr.begin(), tr.end(), [](auto& a, auto& b) {
                                                   return a.second < b.second;
                                               })->second;
        r.detail = "trades never reached 0.900 robust train accuracy (best " + fixed(best) + ")";
        return r;
    }

    CheckResult c11()
    {
        CheckResult r{11, "interpolated objective memorizes random labels", false, "", 0};
        const auto acc = train_robust(random_labels("interpolated").history);
        double best = 0.0;
        int at = -1;
        for (const auto& [e, a] : acc) {
            if (a > best) {
                best = a;
                at = e;
            }
        }
        r.pass = best >= 0.8;
        r.detail = "best robust train accuracy " + fixed(best) + " at epoch " + std::to_string(at) + " (need >= 0.800)";
        return r;
    }

    CheckResult c12()
    {
        CheckResult r{12, "grad-norm ratio larger for PGD-AT than TRADES", false, "", 0};
        const auto& pg = random_labels("pgd_at");
        const auto& tr = random_labels("trades");
        r.pass = pg.mean_ratio > tr.mean_ratio;
        r.detail = "mean ratio over first " + std::to_string(pg.ratio_count) + "/" + std::to_string(tr.ratio_count) +
                   " iterations: pgd_at " + fixed(pg.mean_ratio, 4) + ", trades " + fixed(tr.mean_ratio, 4);
        return r;
    }

    CheckResult c13()
    {
        CheckResult r{13, "adversarial gradient moves faster than clean gradient near init", false, "", 0};
        const auto run = prepare(dir_ / "sweep_init.json");
        const auto& t = run.cfg.train;
        const auto params = init_model(t.model);
        const auto batch = as_batch(head(run.train_set, 64));
        auto spec = t.attack;
        spec.seed = derive_seed(t.optim.seed, {stream::attack});
        const auto sweep = DirectionSweep::grid(0.05, 11, derive_seed(t.optim.seed, {stream::direction}));
        const auto pts = direction_sweep(params, batch, sweep, {SweepLossKind::pgd_at, SweepLossKind::clean_ce}, spec,
                                         t.objective.beta);
        double adv = 0.0, clean = 0.0, center = 0.0;
        for (const auto& p : pts) {
            if (p.lambda == 0.0) center = std::max(center, p.l2_dist);
            if (std::abs(std::abs(p.lambda) - 0.05) > 1e-12) continue;
            (p.kind == SweepLossKind::pgd_at ? adv : clean) += 0.5 * p.l2_dist;
        }
        r.pass = center == 0.0 && adv >= 2.0 * clean;
        r.detail = "mean l2 distance at |lambda|=0.05: pgd_at " + testing::sci(adv) + ", clean_ce " +
                   testing::sci(clean) + ", ratio " + fixed(adv / clean, 2) + " (need >= 2), at 0: " +
                   testing::sci(center);
        return r;
    }

    CheckResult c14()
    {
        CheckResult r{14, "temporal ensembling shrinks the best-final robust gap", false, "", 0};
        auto gap = [](const TrainResult& t) { return 100.0 * (t.best_robust_acc - t.history.rows.back().test_rob_acc); };
        const double g_at = gap(overfit("pgd_at"));
        const double g_te = gap(overfit("pgd_at_te"));
        const double g_small = gap(overfit("pgd_at_eps1"));
        r.pass = g_at >= 3.0 && g_te <= 0.5 * g_at && g_small <= 1.0;
        r.detail = "best-final robust gap (points): pgd_at " + fixed(g_at, 2) + " (need >= 3), pgd_at_te " +
                   fixed(g_te, 2) + " (need <= " + fixed(0.5 * g_at, 2) + "), eps=1/255 " + fixed(g_small, 2) +
                   " (need <= 1)";
        return r;
    }

    CheckResult c15()
    {
        CheckResult r{15, "per-sample adversarial loss ranks agree across seeds", false, "", 0};
        const auto& a = overfit("pgd_at");
        const auto base = prepare(dir_ / "robust_overfit_pgd_at.json").cfg.train.optim.seed;
        const auto& b = overfit("pgd_at", base + 1);
        auto spec = *attack_;
        const Vector la = per_sample_adv_loss(a.final_params, *train_set_, spec);
        const Vector lb = per_sample_adv_loss(b.final_params, *train_set_, spec);
        const auto tau = kendall_tau(la, lb);
        r.pass = tau && *tau > 0.3;
        r.detail = "Kendall tau over " + std::to_string(la.size()) + " training samples: " +
                   (tau ? fixed(*tau) : std::string("undefined")) + " (need > 0.3)";
        return r;
    }

private:
    std::filesystem::path dir_;
    std::ostream& log_;
    std::map<std::string, LabelRun> label_runs_;
    std::map<std::string, TrainResult> overfit_runs_;
    std::optional<Dataset> train_set_;
    std::optional<PerturbationSpec> attack_;
};

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"advmem acceptance criteria"};
    bool oracle = false, desk = false;
    std::string only, known, configs = ADVMEM_CONFIG_DIR;
    app.add_flag("--oracle", oracle, "criteria 1-9");
    app.add_flag("--desk", desk, "criteria 10-15");
    app.add_option("--only", only, "comma-separated criterion ids");
    app.add_option("--known-failures", known, "comma-separated criterion ids expected to fail");
    app.add_option("--configs", configs, "directory holding the desk configs");
    CLI11_PARSE(app, argc, argv);
    if (!oracle && !desk) oracle = desk = true;

    auto ids = [](const std::string& list) {
        std::set<int> out;
        std::stringstream ss(list);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) out.insert(std::stoi(tok));
        }
        return out;
    };
    const auto wanted = ids(only);
    const auto expected_fail = ids(known);
    auto want = [&](int id) { return wanted.empty() || wanted.count(id) > 0; };

    std::vector<CheckResult> results;
    auto record = [&](int id, const std::function<CheckResult()>& fn) {
        if (!want(id)) return;
        const auto t0 = std::chrono::steady_clock::now();
        CheckResult r;
        try {
            r = fn();
        } catch (const std::exception& e) {
            r = CheckResult{id, "exception", false, e.what(), 0};
        }
        r.id = id;
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << testing::format_result(r) << " (" << fixed(r.seconds, 1) << "s)" << std::endl;
        results.push_back(r);
    };

    if (oracle) {
        const std::vector<std::function<CheckResult()>> checks = {
            [] { return testing::check_gradients(); },        [] { return testing::check_attack_vs_oracle(); },
            [] { return testing::check_fgsm_equivalence(); }, [] { return testing::check_feasibility(); },
            [] { return testing::check_theorem1(); },         [] { return testing::check_ensemble(); },
            [] { return testing::check_kendall(); },          [] { return testing::check_spectral_and_curvature(); },
            [] { return testing::check_corruption_statistics(); }};
        for (int id = 1; id <= 9; ++id) record(id, checks[static_cast<std::size_t>(id - 1)]);
    }
    if (desk) {
        Desk d(configs, std::cerr);
        record(10, [&] { return d.c10(); });
        record(11, [&] { return d.c11(); });
        record(12, [&] { return d.c12(); });
        record(13, [&] { return d.c13(); });
        record(14, [&] { return d.c14(); });
        record(15, [&] { return d.c15(); });
    }

    std::size_t failed = 0;
    bool as_expected = true;
    for (const auto& r : results) {
        failed += !r.pass;
        const bool known_fail = expected_fail.count(r.id) > 0;
        if (r.pass == known_fail) {
            as_expected = false;
            std::cout << "criterion " << r.id << ": " << (r.pass ? "unexpected PASS (listed as a known failure)"
                                                                 : "unexpected FAIL")
                      << std::endl;
        }
    }
    std::cout << results.size() - failed << "/" << results.size() << " criteria passed";
    if (!expected_fail.empty()) std::cout << "; known failures: " << known;
    std::cout << std::endl;
    return as_expected ? 0 : 1;
}
