#pragma once

#include "advmem/attacks.hpp"
#include "advmem/checkpoint.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/evaluation.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"
#include "advmem/optim.hpp"
#include "advmem/schedule.hpp"

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace advmem {

// ---------------------------------------------------------------------------
// Temporal-ensembling buffer.

/// Per-sample running predictions p_i <- eta p_i + (1 - eta) f(x_i).
class EnsembleBuffer {
public:
    struct Read {
        Matrix rows;             ///< normalised p_hat rows
        std::vector<bool> cold;  ///< true where the sample was never updated (uniform fallback)
    };

    EnsembleBuffer(std::size_t n, int class_count, double momentum)
        : raw_(Matrix::Zero(static_cast<Eigen::Index>(n), class_count)), momentum_(momentum),
          updates_(n, 0), last_epoch_(n, -1)
    {
        require(class_count >= 2, "EnsembleBuffer: class_count must be >= 2");
        require(momentum >= 0.0 && momentum < 1.0, "EnsembleBuffer: momentum must lie in [0,1)");
    }

    /// At most one update per sample per epoch.
    void update(const SampleIds& ids, const Matrix& probs, int epoch)
    {
        require(static_cast<std::size_t>(probs.rows()) == ids.size() && probs.cols() == raw_.cols(),
                "EnsembleBuffer::update: probabilities not aligned with sample ids");
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const auto i = checked(ids[k]);
            require(last_epoch_[i] != epoch, "EnsembleBuffer::update: sample " + std::to_string(ids[k]) +
                                                 " updated twice in epoch " + std::to_string(epoch));
            last_epoch_[i] = epoch;
            raw_.row(static_cast<Eigen::Index>(i)) =
                momentum_ * raw_.row(static_cast<Eigen::Index>(i)) + (1.0 - momentum_) * probs.row(static_cast<Eigen::Index>(k));
            ++updates_[i];
        }
    }

    /// Rows divided by their sums; never-updated rows read as uniform and are flagged.
    [[nodiscard]] Read read(const SampleIds& ids) const
    {
        Read out{Matrix(static_cast<Eigen::Index>(ids.size()), raw_.cols()), std::vector<bool>(ids.size(), false)};
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const auto i = checked(ids[k]);
            const double s = raw_.row(static_cast<Eigen::Index>(i)).sum();
            if (updates_[i] == 0 || s <= 0.0) {
                out.rows.row(static_cast<Eigen::Index>(k)).setConstant(1.0 / static_cast<double>(raw_.cols()));
                out.cold[k] = true;
            } else {
                out.rows.row(static_cast<Eigen::Index>(k)) = raw_.row(static_cast<Eigen::Index>(i)) / std::max(s, 1e-12);
            }
        }
        return out;
    }

    [[nodiscard]] const Matrix& raw() const { return raw_; }
    [[nodiscard]] double momentum() const { return momentum_; }
    [[nodiscard]] int update_count(std::int64_t id) const { return updates_[checked(id)]; }

private:
    [[nodiscard]] std::size_t checked(std::int64_t id) const
    {
        require(id >= 0 && id < raw_.rows(), "EnsembleBuffer: sample id out of range");
        return static_cast<std::size_t>(id);
    }

    Matrix raw_;
    double momentum_;
    std::vector<int> updates_;
    std::vector<int> last_epoch_;
};

inline void update_ensemble(EnsembleBuffer& buffer, const SampleIds& ids, const Matrix& probs, int epoch)
{
    buffer.update(ids, probs, epoch);
}

inline EnsembleBuffer::Read ensemble_read(const EnsembleBuffer& buffer, const SampleIds& ids)
{
    return buffer.read(ids);
}

// ---------------------------------------------------------------------------
// Configuration and history.

struct OptimConfig {
    Schedule lr = Schedule::piecewise(0.1, {100, 150});
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t batch_size = 128;
    int epochs = 200;
    std::uint64_t seed = 0;
};

struct EvalConfig {
    int cadence = 1;
    PerturbationSpec selection_attack;  ///< robust accuracy and best-checkpoint selection (PGD-10)
    bool eval_train = true;             ///< also measure train natural/robust accuracy
    std::size_t train_eval_size = 0;    ///< 0: whole training set, else its first k samples
    std::size_t batch_size = default_eval_batch;
    std::vector<std::string> suite = {"pgd10", "pgd_long", "cw_pgd"};
};

struct TrainConfig {
    ArchSpec model;
    ObjectiveConfig objective;
    PerturbationSpec attack;
    AugmentationSpec augmentation;
    OptimConfig optim;
    EvalConfig eval;
    std::string out_dir;      ///< empty: keep everything in memory
    std::string config_hash;  ///< recorded in checkpoints
};

struct HistoryRow {
    int epoch = 0;
    double lr = 0;
    double train_nat_acc = std::numeric_limits<double>::quiet_NaN();
    double train_rob_acc = std::numeric_limits<double>::quiet_NaN();
    double test_nat_acc = std::numeric_limits<double>::quiet_NaN();
    double test_rob_acc = std::numeric_limits<double>::quiet_NaN();
    double loss_total = 0;
    double loss_clean_ce = 0;
    double loss_adv_ce = 0;
    double loss_kl = 0;
    double loss_te = 0;
    double gamma = 0;
    double te_weight = 0;
};

struct History {
    std::vector<HistoryRow> rows;

    static std::vector<std::string> columns()
    {
        return {"epoch",      "lr",           "train_nat_acc", "train_rob_acc", "test_nat_acc",
                "test_rob_acc", "loss_total", "loss_clean_ce", "loss_adv_ce",   "loss_kl",
                "loss_te",    "gamma",        "te_weight"};
    }

    [[nodiscard]] static std::vector<double> values(const HistoryRow& r)
    {
        return {static_cast<double>(r.epoch), r.lr, r.train_nat_acc, r.train_rob_acc, r.test_nat_acc, r.test_rob_acc,
                r.loss_total, r.loss_clean_ce, r.loss_adv_ce, r.loss_kl, r.loss_te, r.gamma, r.te_weight};
    }

    [[nodiscard]] std::string to_csv() const
    {
        io::CsvWriter w(columns());
        for (const auto& r : rows) {
            std::vector<std::string> cells;
            const auto v = values(r);
            cells.push_back(std::to_string(r.epoch));
            for (std::size_t i = 1; i < v.size(); ++i) {
                cells.push_back(io::format_number(v[i]));
            }
            w.add_row(std::move(cells));
        }
        return w.str();
    }

    static History from_csv(const std::filesystem::path& path)
    {
        const auto t = io::read_csv(path);
        History h;
        auto num = [](const std::string& s) {
            return s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        for (const auto& cells : t.rows) {
            HistoryRow r;
            r.epoch = std::stoi(cells[t.column("epoch")]);
            r.lr = num(cells[t.column("lr")]);
            r.train_nat_acc = num(cells[t.column("train_nat_acc")]);
            r.train_rob_acc = num(cells[t.column("train_rob_acc")]);
            r.test_nat_acc = num(cells[t.column("test_nat_acc")]);
            r.test_rob_acc = num(cells[t.column("test_rob_acc")]);
            r.loss_total = num(cells[t.column("loss_total")]);
            r.loss_clean_ce = num(cells[t.column("loss_clean_ce")]);
            r.loss_adv_ce = num(cells[t.column("loss_adv_ce")]);
            r.loss_kl = num(cells[t.column("loss_kl")]);
            r.loss_te = num(cells[t.column("loss_te")]);
            r.gamma = num(cells[t.column("gamma")]);
            r.te_weight = num(cells[t.column("te_weight")]);
            h.rows.push_back(r);
        }
        return h;
    }
};

struct IterationInfo {
    int epoch;
    std::size_t iteration;  ///< global iteration index
    const ModelParameters& params;  ///< pre-step snapshot
    const ExampleBatch& batch;
    const Matrix& adv_inputs;
    const GradientResult& gradient;
};

struct EpochInfo {
    int epoch;
    const ModelParameters& params;
    const HistoryRow& row;
    const EnsembleBuffer* ensemble;
};

struct TrainHooks {
    std::function<void(const IterationInfo&)> on_iteration;
    std::function<void(const EpochInfo&)> on_epoch_end;
};

struct TrainResult {
    History history;
    ModelParameters best_params;
    ModelParameters final_params;
    OptimizerState final_optimizer;
    int best_epoch = -1;
    double best_robust_acc = -1.0;
    std::optional<std::filesystem::path> best_checkpoint;
    std::optional<std::filesystem::path> final_checkpoint;
};

/// Raised when a loss turns non-finite; carries the offending breakdown.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(int epoch, std::size_t iteration, LossBreakdown breakdown)
        : Error("training diverged at epoch " + std::to_string(epoch) + ", iteration " + std::to_string(iteration) +
                ": total=" + io::format_number(breakdown.total) + " clean_ce=" +
                io::format_number(breakdown.clean_ce) + " adv_ce=" + io::format_number(breakdown.adv_ce)),
          epoch_(epoch), iteration_(iteration), breakdown_(breakdown)
    {
    }
    [[nodiscard]] int epoch() const { return epoch_; }
    [[nodiscard]] std::size_t iteration() const { return iteration_; }
    [[nodiscard]] const LossBreakdown& breakdown() const { return breakdown_; }

private:
    int epoch_;
    std::size_t iteration_;
    LossBreakdown breakdown_;
};

/// The inner-maximisation spec used for training batches of `epoch`.
inline PerturbationSpec training_attack(const TrainConfig& cfg, int epoch)
{
    PerturbationSpec s = cfg.attack;
    s.loss_kind = uses_kl(cfg.objective.kind) ? InputLossKind::kl_vs_clean : InputLossKind::ce;
    s.seed = derive_seed(cfg.optim.seed, {stream::attack, static_cast<std::uint64_t>(epoch)});
    return s;
}

/// Adversarial training loop.
///
/// Per batch: (augment), clean forward on the pre-step parameters, inner
/// maximisation (CE-PGD, or KL-PGD for TRADES kinds), composite gradient with
/// the adversarial inputs fixed, one SGD step. TE targets are read before the
/// batch's own ensemble update, which uses the clean predictions.
inline TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& test_set,
                         const TrainHooks& hooks = {})
{
    cfg.objective.validate();
    cfg.attack.validate();
    cfg.eval.selection_attack.validate();
    require(cfg.optim.epochs >= 1, "train: epochs must be >= 1");
    require(cfg.eval.cadence >= 1, "train: eval cadence must be >= 1");
    train_set.validate();
    test_set.validate();
    require(train_set.shape == cfg.model.input_shape, "train: dataset shape does not match the model input shape");
    require(train_set.class_count == cfg.model.class_count, "train: dataset class count does not match the model");

    ModelParameters params = init_model(cfg.model);
    OptimizerState opt = OptimizerState::for_params(params, cfg.optim.momentum, cfg.optim.weight_decay);
    EnsembleBuffer ensemble(train_set.size(), train_set.class_count, cfg.objective.te_momentum);
    const Network net(cfg.model);
    const bool te = uses_ensemble(cfg.objective.kind);
    const Dataset train_eval = cfg.eval.train_eval_size == 0 ? train_set : head(train_set, cfg.eval.train_eval_size);
    const std::filesystem::path out = cfg.out_dir;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(out);
    }

    TrainResult result;
    std::size_t iteration = 0;
    for (int epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        const double lr = schedule_value(cfg.optim.lr, epoch);
        const auto spec = training_attack(cfg, epoch);
        const auto aug_seed = derive_seed(cfg.optim.seed, {stream::augment, static_cast<std::uint64_t>(epoch)});
        HistoryRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.gamma = cfg.objective.kind == ObjectiveKind::interpolated ? gamma_at(cfg.objective, epoch)
                                                                       : std::numeric_limits<double>::quiet_NaN();
        row.te_weight = te ? te_weight_at(cfg.objective, epoch) : 0.0;
        double seen = 0.0;

        for (const auto& raw_batch : iterate_batches(train_set, cfg.optim.batch_size, cfg.optim.seed,
                                                     static_cast<std::uint64_t>(epoch))) {
            const ExampleBatch batch = augment_batch(raw_batch, cfg.augmentation, aug_seed);
            const Matrix clean_probs = softmax_rows(net.forward(params, batch.inputs));

            std::optional<EnsembleBuffer::Read> reads;
            if (te) {
                reads = ensemble.read(batch.sample_ids);
            }
            Matrix adv;
            if (uses_adversarial(cfg.objective.kind)) {
                AttackContext ctx;
                ctx.clean_probs = &clean_probs;
                ctx.smoothing = cfg.objective.label_smoothing;
                if (te && cfg.objective.te_in_attack) {
                    ctx.te_targets = &reads->rows;
                    ctx.te_weight = te_weight_at(cfg.objective, epoch);
                }
                adv = pgd_attack(params, batch, spec, ctx);
            }
            const auto grad = grad_params(cfg.objective, params, batch, adv, te ? &reads->rows : nullptr, epoch);
            const auto& b = grad.breakdown;
            if (!std::isfinite(b.total) || !grad.total.allFinite()) {
                throw TrainingDiverged(epoch, iteration, b);
            }
            if (hooks.on_iteration) {
                hooks.on_iteration(IterationInfo{epoch, iteration, params, batch, adv, grad});
            }
            if (te) {
                ensemble.update(batch.sample_ids, clean_probs, epoch);
            }
            sgd_step(params, opt, grad.total, lr);

            const auto w = static_cast<double>(batch.size());
            seen += w;
            row.loss_total += w * b.total;
            row.loss_clean_ce += w * b.clean_ce;
            row.loss_adv_ce += w * b.adv_ce;
            row.loss_kl += w * b.kl_term;
            row.loss_te += w * b.te_term;
            ++iteration;
        }
        row.loss_total /= seen;
        row.loss_clean_ce /= seen;
        row.loss_adv_ce /= seen;
        row.loss_kl /= seen;
        row.loss_te /= seen;

        const bool evaluate_now = (epoch + 1) % cfg.eval.cadence == 0 || epoch + 1 == cfg.optim.epochs;
        if (evaluate_now) {
            row.test_nat_acc = evaluate(params, test_set, std::nullopt, cfg.eval.batch_size);
            row.test_rob_acc = evaluate(params, test_set, cfg.eval.selection_attack, cfg.eval.batch_size);
            if (cfg.eval.eval_train) {
                row.train_nat_acc = evaluate(params, train_eval, std::nullopt, cfg.eval.batch_size);
                row.train_rob_acc = evaluate(params, train_eval, cfg.eval.selection_attack, cfg.eval.batch_size);
            }
            if (row.test_rob_acc > result.best_robust_acc) {
                result.best_robust_acc = row.test_rob_acc;
                result.best_epoch = epoch;
                result.best_params = params;
                if (!cfg.out_dir.empty()) {
                    save_checkpoint(params, opt, CheckpointMetadata{epoch, cfg.config_hash, {}}, out / "best");
                    result.best_checkpoint = out / "best";
                }
            }
        }
        result.history.rows.push_back(row);
        if (hooks.on_epoch_end) {
            hooks.on_epoch_end(EpochInfo{epoch, params, result.history.rows.back(), te ? &ensemble : nullptr});
        }
        if (!cfg.out_dir.empty()) {
            io::write_text(out / "history.csv", result.history.to_csv());
        }
    }

    result.final_params = params;
    result.final_optimizer = opt;
    if (!cfg.out_dir.empty()) {
        save_checkpoint(params, opt, CheckpointMetadata{cfg.optim.epochs - 1, cfg.config_hash, {}}, out / "final");
        result.final_checkpoint = out / "final";
    }
    return result;
}

}  // namespace advmem
