#pragma once

#include "advmem/attacks.hpp"
#include "advmem/checkpoint.hpp"
#include "advmem/core.hpp"
#include "advmem/data.hpp"
#include "advmem/io.hpp"
#include "advmem/models.hpp"
#include "advmem/objectives.hpp"
#include "advmem/schedule.hpp"
#include "advmem/trainer.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>

namespace advmem {

enum class DataSource { synthetic_images, synthetic_blobs, packed };

struct DataConfig {
    DataSource source = DataSource::synthetic_images;
    SyntheticImageSpec images;
    int per_class_test = 100;
    // blobs
    int blob_dim = 2;
    double blob_separation = 0.5;
    double blob_noise = 0.1;
    std::uint64_t blob_seed = 0;
    // packed
    std::string train_path;
    std::string test_path;
    std::size_t train_limit = 0;  ///< 0: use the whole split
    std::size_t test_limit = 0;
    std::optional<CorruptionSpec> corruption;
};

struct ExperimentConfig {
    DataConfig data;
    TrainConfig train;
};

namespace detail {

inline void check_keys(const io::json& j, const std::set<std::string>& allowed, const std::string& section)
{
    require(j.is_object(), "config: section '" + section + "' must be an object");
    for (const auto& [k, _] : j.items()) {
        require(allowed.count(k) > 0, "config: unknown key '" + k + "' in section '" + section + "'");
    }
}

inline Schedule parse_schedule(const io::json& j, const std::string& section, double default_ramp)
{
    if (j.is_number()) {
        return Schedule::constant(j.get<double>());
    }
    check_keys(j, {"kind", "base", "milestones", "decay", "total_epochs", "ramp_length"}, section);
    Schedule s;
    s.kind = schedule_kind_from_string(j.at("kind").get<std::string>());
    s.base = j.value("base", 1.0);
    s.milestones = j.value("milestones", std::vector<double>{});
    s.decay = j.value("decay", 0.1);
    s.total_epochs = j.value("total_epochs", 1.0);
    s.ramp_length = j.value("ramp_length", default_ramp);
    return s;
}

/// Perturbation fields; `epsilon_255` / `step_size_255` are accepted in pixel units.
inline PerturbationSpec parse_perturbation(const io::json& j, const std::string& section, PerturbationSpec s = {})
{
    check_keys(j, {"norm", "epsilon", "epsilon_255", "step_size", "step_size_255", "steps", "random_start", "loss",
                   "seed"},
               section);
    if (j.contains("norm")) s.norm = norm_from_string(j.at("norm").get<std::string>());
    if (j.contains("epsilon")) s.epsilon = j.at("epsilon").get<double>();
    if (j.contains("epsilon_255")) s.epsilon = j.at("epsilon_255").get<double>() / 255.0;
    if (j.contains("step_size")) s.step_size = j.at("step_size").get<double>();
    if (j.contains("step_size_255")) s.step_size = j.at("step_size_255").get<double>() / 255.0;
    if (j.contains("steps")) s.steps = j.at("steps").get<int>();
    if (j.contains("random_start")) s.random_start = j.at("random_start").get<bool>();
    if (j.contains("loss")) s.loss_kind = input_loss_kind_from_string(j.at("loss").get<std::string>());
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    s.validate();
    return s;
}

}  // namespace detail

/// Parses a training config. `seed_override` replaces optim.seed (the run seed).
inline ExperimentConfig parse_config(const io::json& root, std::optional<std::uint64_t> seed_override = std::nullopt)
{
    ExperimentConfig cfg;
    try {
        detail::check_keys(root, {"data", "model", "objective", "attack", "optim", "eval", "out"}, "root");
        auto& t = cfg.train;

        const auto& o = root.at("optim");
        detail::check_keys(o, {"lr", "momentum", "weight_decay", "batch_size", "epochs", "seed"}, "optim");
        t.optim.epochs = o.value("epochs", 200);
        require(t.optim.epochs >= 1, "config: optim.epochs must be >= 1");
        const double half = 0.5 * t.optim.epochs;
        t.optim.lr = o.contains("lr") ? detail::parse_schedule(o.at("lr"), "optim.lr", half)
                                      : Schedule::piecewise(0.1, {0.5 * t.optim.epochs, 0.75 * t.optim.epochs});
        t.optim.momentum = o.value("momentum", 0.9);
        t.optim.weight_decay = o.value("weight_decay", 5e-4);
        t.optim.batch_size = o.value("batch_size", std::size_t{128});
        t.optim.seed = seed_override ? *seed_override : o.value("seed", std::uint64_t{0});

        const auto& d = root.at("data");
        detail::check_keys(d, {"source", "class_count", "per_class", "per_class_test", "height", "width", "channels",
                               "signal", "amplitude_spread", "noise_std", "waves", "seed", "dim", "separation",
                               "train", "test", "train_limit", "test_limit", "corruption", "augmentation"},
                           "data");
        const auto source = d.value("source", std::string{"synthetic_images"});
        if (source == "synthetic_images") {
            cfg.data.source = DataSource::synthetic_images;
            auto& s = cfg.data.images;
            s.class_count = d.value("class_count", s.class_count);
            s.per_class = d.value("per_class", s.per_class);
            s.height = d.value("height", s.height);
            s.width = d.value("width", s.width);
            s.channels = d.value("channels", s.channels);
            s.signal = d.value("signal", s.signal);
            s.amplitude_spread = d.value("amplitude_spread", s.amplitude_spread);
            s.noise_std = d.value("noise_std", s.noise_std);
            s.waves = d.value("waves", s.waves);
            s.seed = d.value("seed", s.seed);
            cfg.data.per_class_test = d.value("per_class_test", cfg.data.per_class_test);
        } else if (source == "synthetic_blobs") {
            cfg.data.source = DataSource::synthetic_blobs;
            cfg.data.images.class_count = d.value("class_count", 2);
            cfg.data.images.per_class = d.value("per_class", 100);
            cfg.data.per_class_test = d.value("per_class_test", cfg.data.per_class_test);
            cfg.data.blob_dim = d.value("dim", 2);
            cfg.data.blob_separation = d.value("separation", 0.5);
            cfg.data.blob_noise = d.value("noise_std", 0.1);
            cfg.data.blob_seed = d.value("seed", std::uint64_t{0});
        } else if (source == "packed") {
            cfg.data.source = DataSource::packed;
            cfg.data.train_path = d.at("train").get<std::string>();
            cfg.data.test_path = d.at("test").get<std::string>();
        } else {
            throw Error("config: unknown data.source '" + source + "'");
        }
        cfg.data.train_limit = d.value("train_limit", std::size_t{0});
        cfg.data.test_limit = d.value("test_limit", std::size_t{0});
        if (d.contains("corruption")) {
            const auto& c = d.at("corruption");
            detail::check_keys(c, {"rate", "seed"}, "data.corruption");
            cfg.data.corruption = CorruptionSpec(c.at("rate").get<double>(), c.value("seed", std::uint64_t{0}));
        }
        if (d.contains("augmentation")) {
            const auto& a = d.at("augmentation");
            detail::check_keys(a, {"enabled", "crop_padding", "flip_probability"}, "data.augmentation");
            t.augmentation.enabled = a.value("enabled", true);
            t.augmentation.crop_padding = a.value("crop_padding", t.augmentation.crop_padding);
            t.augmentation.flip_probability = a.value("flip_probability", t.augmentation.flip_probability);
        }

        const auto& m = root.at("model");
        detail::check_keys(m, {"family", "widths", "init_seed"}, "model");
        t.model.family = family_from_string(m.at("family").get<std::string>());
        t.model.widths = m.value("widths", std::vector<std::size_t>{});
        t.model.init_seed = m.contains("init_seed") ? m.at("init_seed").get<std::uint64_t>()
                                                    : derive_seed(t.optim.seed, {stream::init});

        const auto& ob = root.at("objective");
        detail::check_keys(ob, {"kind", "beta", "gamma_schedule", "te_weight", "te_momentum", "te_ramp",
                                "label_smoothing", "te_in_attack"},
                           "objective");
        auto& obj = t.objective;
        obj.kind = objective_kind_from_string(ob.at("kind").get<std::string>());
        obj.beta = ob.value("beta", obj.beta);
        obj.gamma_schedule = ob.contains("gamma_schedule")
                                 ? detail::parse_schedule(ob.at("gamma_schedule"), "objective.gamma_schedule", half)
                                 : Schedule::linear_ramp(half);
        obj.te_weight = ob.value("te_weight", obj.te_weight);
        obj.te_momentum = ob.value("te_momentum", obj.te_momentum);
        obj.te_ramp = ob.contains("te_ramp") ? detail::parse_schedule(ob.at("te_ramp"), "objective.te_ramp", half)
                                             : Schedule::gaussian_ramp(half);
        obj.label_smoothing = ob.value("label_smoothing", obj.label_smoothing);
        obj.te_in_attack = ob.value("te_in_attack", obj.te_in_attack);
        obj.validate();

        t.attack = root.contains("attack") ? detail::parse_perturbation(root.at("attack"), "attack") : PerturbationSpec{};

        t.eval.selection_attack = t.attack;
        t.eval.selection_attack.steps = 10;
        t.eval.selection_attack.loss_kind = InputLossKind::ce;
        t.eval.selection_attack.seed = derive_seed(t.optim.seed, {stream::eval_attack});
        if (root.contains("eval")) {
            const auto& e = root.at("eval");
            detail::check_keys(e, {"cadence", "selection_attack", "eval_train", "train_eval_size", "batch_size",
                                   "suite"},
                               "eval");
            t.eval.cadence = e.value("cadence", 1);
            if (e.contains("selection_attack")) {
                t.eval.selection_attack =
                    detail::parse_perturbation(e.at("selection_attack"), "eval.selection_attack", t.eval.selection_attack);
            }
            t.eval.eval_train = e.value("eval_train", true);
            t.eval.train_eval_size = e.value("train_eval_size", std::size_t{0});
            t.eval.batch_size = e.value("batch_size", default_eval_batch);
            t.eval.suite = e.value("suite", t.eval.suite);
        }
        t.out_dir = root.value("out", std::string{});
        t.config_hash = hash_text(root.dump());
    } catch (const io::json::exception& e) {
        throw Error(std::string("malformed config: ") + e.what());
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    std::optional<std::uint64_t> seed_override = std::nullopt)
{
    return parse_config(io::read_json(path), seed_override);
}

/// Materialises the train/test splits; the corruption (if any) applies to the training labels.
inline std::pair<Dataset, Dataset> load_datasets(const DataConfig& d)
{
    Dataset train_set;
    Dataset test_set;
    switch (d.source) {
    case DataSource::synthetic_images: {
        train_set = make_synthetic_images(d.images, Split::train);
        auto ts = d.images;
        ts.per_class = d.per_class_test;
        test_set = make_synthetic_images(ts, Split::test);
        break;
    }
    case DataSource::synthetic_blobs: {
        train_set = make_synthetic(d.images.class_count, d.images.per_class, d.blob_dim, d.blob_separation,
                                   d.blob_seed, d.blob_noise);
        test_set = make_synthetic(d.images.class_count, d.per_class_test, d.blob_dim, d.blob_separation,
                                  derive_seed(d.blob_seed, {stream::synthetic, 1}), d.blob_noise);
        test_set.split = Split::test;
        break;
    }
    case DataSource::packed:
        train_set = load_dataset(d.train_path);
        test_set = load_dataset(d.test_path);
        break;
    }
    if (d.train_limit > 0) train_set = head(train_set, d.train_limit);
    if (d.test_limit > 0) test_set = head(test_set, d.test_limit);
    if (d.corruption) {
        train_set = corrupt_labels(train_set, *d.corruption);
    }
    return {train_set, test_set};
}

/// Fills the model's class count and input shape from the data.
inline void bind_model_to_data(TrainConfig& t, const Dataset& train_set)
{
    t.model.class_count = train_set.class_count;
    t.model.input_shape = train_set.shape;
    t.model.validate();
}

}  // namespace advmem
