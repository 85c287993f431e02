#include "advmem/advmem.hpp"
#include "advmem/testing/checks.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace advmem;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string suite;
    std::vector<std::string> ckpt;
    std::string device = "cpu";
};

void add_common(CLI::App* sub, Common& c)
{
    sub->add_option("--config", c.config, "training config (JSON)");
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--seed", c.seed, "run seed (overrides optim.seed)");
    sub->add_option("--suite", c.suite, "comma-separated attack names (pgd10, pgd_long, cw_pgd, fgsm)");
    sub->add_option("--ckpt", c.ckpt, "checkpoint or run directory (repeatable)");
    sub->add_option("--device", c.device, "compute device tag (only 'cpu')");
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

ExperimentConfig need_config(const Common& c)
{
    require(!c.config.empty(), "--config is required");
    return load_config(c.config, c.seed);
}

fs::path need_out(const Common& c, const std::string& fallback = "")
{
    const std::string out = c.out.empty() ? fallback : c.out;
    require(!out.empty(), "--out is required");
    fs::create_directories(out);
    return out;
}

/// A run directory (holding best/ and final/) or a single checkpoint directory.
struct Snapshots {
    Checkpoint best;
    Checkpoint final;
};

Snapshots load_snapshots(const fs::path& p)
{
    if (fs::exists(p / "best" / "manifest.json") && fs::exists(p / "final" / "manifest.json")) {
        return {load_checkpoint(p / "best"), load_checkpoint(p / "final")};
    }
    auto ck = load_checkpoint(p);
    return {ck, ck};
}

AttackSuite suite_for(const Common& c, const ExperimentConfig& cfg)
{
    const auto names = c.suite.empty() ? cfg.train.eval.suite : split_list(c.suite);
    return make_suite(names, cfg.train.attack.epsilon, cfg.train.attack.norm,
                      derive_seed(cfg.train.optim.seed, {stream::eval_attack}));
}

void check_device(const Common& c) { require(c.device == "cpu", "unsupported --device '" + c.device + "' (only cpu)"); }

int cmd_train(const Common& c)
{
    auto cfg = need_config(c);
    if (!c.out.empty()) cfg.train.out_dir = c.out;
    require(!cfg.train.out_dir.empty(), "no output directory: pass --out or set 'out' in the config");
    const auto [train_set, test_set] = load_datasets(cfg.data);
    bind_model_to_data(cfg.train, train_set);
    const fs::path out = cfg.train.out_dir;
    fs::create_directories(out);
    auto resolved = io::read_json(c.config);
    resolved["optim"]["seed"] = cfg.train.optim.seed;
    resolved["out"] = out.string();
    io::write_json(out / "config.json", resolved);
    TrainHooks hooks;
    hooks.on_epoch_end = [](const EpochInfo& e) {
        std::cout << "epoch " << e.epoch << " lr " << io::format_number(e.row.lr) << " loss "
                  << io::fixed(e.row.loss_total, 4) << " test_nat " << io::format_number(e.row.test_nat_acc)
                  << " test_rob " << io::format_number(e.row.test_rob_acc) << std::endl;
    };
    const auto result = train(cfg.train, train_set, test_set, hooks);
    std::cout << "best epoch " << result.best_epoch << " (robust " << io::fixed(100.0 * result.best_robust_acc, 2)
              << "%), run directory " << out.string() << std::endl;
    return 0;
}

int cmd_corrupt(const Common& c, const std::string& data, double rate)
{
    const auto out = need_out(c);
    Dataset ds;
    if (!data.empty()) {
        ds = load_dataset(data);
    } else {
        auto cfg = need_config(c);
        cfg.data.corruption.reset();
        ds = load_datasets(cfg.data).first;
    }
    const std::uint64_t seed = c.seed.value_or(0);
    const auto corrupted = corrupt_labels(ds, CorruptionSpec(rate, seed));
    save_dataset(corrupted, out, PackedDtype::f32);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) changed += corrupted.labels[i] != ds.labels[i] ? 1 : 0;
    std::cout << "corrupted " << changed << " of " << ds.size() << " labels (rate " << rate << ") -> " << out.string()
              << std::endl;
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& method)
{
    require(!c.ckpt.empty(), "--ckpt is required");
    const auto cfg = need_config(c);
    const auto out = need_out(c);
    const auto test_set = load_datasets(cfg.data).second;
    const auto snaps = load_snapshots(c.ckpt.front());
    const auto rows = run_suite(snaps.best.params, snaps.final.params, test_set, suite_for(c, cfg),
                                method.empty() ? to_string(cfg.train.objective.kind) : method);
    io::write_text(out / "report.csv", render_report_csv(rows));
    io::write_text(out / "report.md", render_report_markdown(rows));
    std::cout << render_report_markdown(rows);
    return 0;
}

int cmd_diagnose(const Common& c, std::size_t samples, double lambda_max, int lambda_points)
{
    require(!c.ckpt.empty(), "--ckpt is required");
    const auto cfg = need_config(c);
    const auto out = need_out(c);
    const auto train_set = load_datasets(cfg.data).first;
    const auto first = load_snapshots(c.ckpt.front()).final.params;
    const auto probe = head(train_set, samples);
    const auto batch = as_batch(probe);
    auto spec = cfg.train.attack;
    spec.seed = derive_seed(cfg.train.optim.seed, {stream::eval_attack});
    const double beta = cfg.train.objective.beta;

    std::vector<GradNormRow> norms;
    for (const auto m : {ProbeMethod::pgd_at, ProbeMethod::trades}) {
        norms.push_back({0, grad_norm_terms(first, batch, m, spec, beta)});
    }
    io::write_text(out / "grad_norms.csv", grad_norms_csv(norms));

    const auto sweep = DirectionSweep::grid(lambda_max, lambda_points, derive_seed(cfg.train.optim.seed, {stream::direction}));
    io::write_text(out / "sweep.csv", sweep_csv(direction_sweep(first, batch, sweep,
                                                                {SweepLossKind::pgd_at, SweepLossKind::trades,
                                                                 SweepLossKind::clean_ce},
                                                                spec, beta)));
    const Vector losses = per_sample_adv_loss(first, probe, spec);
    io::write_text(out / "sample_losses.csv", sample_losses_csv(losses));

    if (c.ckpt.size() >= 2) {
        const auto second = load_snapshots(c.ckpt[1]).final.params;
        const auto k = estimate_lipschitz(first, batch, spec, 8, spec.seed);
        const auto k2 = estimate_lipschitz(second, batch, spec, 8, spec.seed);
        const auto rep = theorem1_probe(first, second, batch, spec, std::max(k.k_hat, k2.k_hat));
        io::write_text(out / "theorem1.csv", theorem1_csv(rep.rows));
        const Vector other = per_sample_adv_loss(second, probe, spec);
        io::write_text(out / "tau.txt", tau_text(kendall_tau(losses, other)));
        std::cout << "stability-bound violation rate " << rep.violation_rate << " (" << rep.note << ")" << std::endl;
    }
    std::cout << "diagnostics written to " << out.string() << std::endl;
    return 0;
}

int cmd_complexity(const Common& c, const std::string& run_id)
{
    require(!c.ckpt.empty(), "--ckpt is required");
    const auto cfg = need_config(c);
    const auto out = need_out(c);
    const auto train_set = load_datasets(cfg.data).first;
    std::vector<ComplexityReport> reports;
    for (const auto& path : c.ckpt) {
        ComplexityOptions opt;
        opt.attack = cfg.train.attack;
        opt.attack.seed = derive_seed(cfg.train.optim.seed, {stream::eval_attack});
        const auto id = run_id.empty() ? fs::path(path).lexically_normal().string() : run_id;
        reports.push_back(complexity_report(id, load_snapshots(path).final.params, train_set, opt));
    }
    io::write_text(out / "complexity.csv", complexity_csv(reports));
    std::cout << complexity_csv(reports);
    return 0;
}

int cmd_report(const Common& c)
{
    require(!c.out.empty() || !c.ckpt.empty(), "pass the run directory with --out (or --ckpt)");
    const fs::path run = c.out.empty() ? fs::path(c.ckpt.front()) : fs::path(c.out);
    const auto history = History::from_csv(run / "history.csv");
    io::write_text(run / "curves.csv", emit_curves(history));
    Common cc = c;
    if (cc.config.empty()) cc.config = (run / "config.json").string();
    const auto cfg = need_config(cc);
    const auto test_set = load_datasets(cfg.data).second;
    const auto snaps = load_snapshots(run);
    const auto rows = run_suite(snaps.best.params, snaps.final.params, test_set, suite_for(cc, cfg),
                                to_string(cfg.train.objective.kind));
    io::write_text(run / "report.csv", render_report_csv(rows));
    io::write_text(run / "report.md", render_report_markdown(rows));
    std::cout << render_report_markdown(rows);
    return 0;
}

int cmd_selftest()
{
    const auto results = testing::run_oracle_checks(&std::cout);
    bool ok = true;
    for (const auto& r : results) ok = ok && r.pass;
    std::cout << (ok ? "selftest passed" : "selftest FAILED") << std::endl;
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"advmem: adversarial training memorization laboratory"};
    app.require_subcommand(1);
    Common common;

    auto* train_cmd = app.add_subcommand("train", "train a model from a config");
    add_common(train_cmd, common);

    auto* corrupt_cmd = app.add_subcommand("corrupt", "write a label-corrupted copy of a dataset");
    add_common(corrupt_cmd, common);
    std::string data;
    double rate = 0.0;
    corrupt_cmd->add_option("--data", data, "packed dataset directory (default: the config's training split)");
    corrupt_cmd->add_option("--rate", rate, "noise rate in [0,1]")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate best/final checkpoints against an attack suite");
    add_common(eval_cmd, common);
    std::string method;
    eval_cmd->add_option("--method", method, "method name for the report rows");

    auto* diag_cmd = app.add_subcommand("diagnose", "gradient diagnostics for one or two snapshots");
    add_common(diag_cmd, common);
    std::size_t samples = 64;
    double lambda_max = 0.05;
    int lambda_points = 11;
    diag_cmd->add_option("--samples", samples, "training samples probed");
    diag_cmd->add_option("--lambda-max", lambda_max, "sweep range [-l, l]");
    diag_cmd->add_option("--lambda-points", lambda_points, "sweep grid size");

    auto* cx_cmd = app.add_subcommand("complexity", "complexity measures of snapshots");
    add_common(cx_cmd, common);
    std::string run_id;
    cx_cmd->add_option("--run-id", run_id, "run_id column value");

    auto* report_cmd = app.add_subcommand("report", "best/final table and curve data for a run directory");
    add_common(report_cmd, common);

    auto* self_cmd = app.add_subcommand("selftest", "run the oracle checks");
    add_common(self_cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        check_device(common);
        if (*train_cmd) return cmd_train(common);
        if (*corrupt_cmd) return cmd_corrupt(common, data, rate);
        if (*eval_cmd) return cmd_evaluate(common, method);
        if (*diag_cmd) return cmd_diagnose(common, samples, lambda_max, lambda_points);
        if (*cx_cmd) return cmd_complexity(common, run_id);
        if (*report_cmd) return cmd_report(common);
        if (*self_cmd) return cmd_selftest();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 1;
}
