#pragma once

#include "advmem/core.hpp"
#include "advmem/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace advmem {

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// A labelled set of inputs in [0,1]. Row i of `inputs` belongs to sample id i.
struct Dataset {
    std::string name;
    Matrix inputs;
    Labels labels;
    int class_count = 0;
    SampleIds sample_ids;
    InputShape shape;
    Split split = Split::train;

    [[nodiscard]] std::size_t size() const { return labels.size(); }

    /// Throws if any invariant is broken.
    void validate() const
    {
        require(class_count >= 2, "dataset: class_count must be >= 2");
        require(static_cast<std::size_t>(inputs.rows()) == labels.size(), "dataset: inputs/labels row mismatch");
        require(static_cast<std::size_t>(inputs.cols()) == shape.size(), "dataset: input width does not match shape");
        require(sample_ids.size() == labels.size(), "dataset: sample_ids size mismatch");
        for (std::size_t i = 0; i < labels.size(); ++i) {
            require(labels[i] >= 0 && labels[i] < class_count,
                    "dataset: label " + std::to_string(labels[i]) + " outside [0," + std::to_string(class_count) + ")");
            require(sample_ids[i] == static_cast<std::int64_t>(i), "dataset: sample_ids must be 0..n-1");
        }
        require(inputs.allFinite(), "dataset: non-finite input value");
        if (inputs.size() > 0) {
            require(inputs.minCoeff() >= 0.0 && inputs.maxCoeff() <= 1.0, "dataset: input values outside [0,1]");
        }
    }
};

/// A slice of a dataset. sample_ids refer back to the source dataset.
struct ExampleBatch {
    Matrix inputs;
    Labels labels;
    SampleIds sample_ids;
    InputShape shape;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
};

inline ExampleBatch as_batch(const Dataset& ds)
{
    return ExampleBatch{ds.inputs, ds.labels, ds.sample_ids, ds.shape};
}

inline ExampleBatch gather(const Dataset& ds, const std::vector<std::size_t>& rows)
{
    ExampleBatch b;
    b.shape = ds.shape;
    b.inputs.resize(static_cast<Eigen::Index>(rows.size()), ds.inputs.cols());
    b.labels.reserve(rows.size());
    b.sample_ids.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        b.inputs.row(static_cast<Eigen::Index>(i)) = ds.inputs.row(static_cast<Eigen::Index>(rows[i]));
        b.labels.push_back(ds.labels[rows[i]]);
        b.sample_ids.push_back(ds.sample_ids[rows[i]]);
    }
    return b;
}

/// New dataset made of the given rows, renumbered 0..k-1.
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& rows)
{
    Dataset out;
    out.name = ds.name;
    out.class_count = ds.class_count;
    out.shape = ds.shape;
    out.split = ds.split;
    auto b = gather(ds, rows);
    out.inputs = std::move(b.inputs);
    out.labels = std::move(b.labels);
    out.sample_ids.resize(rows.size());
    std::iota(out.sample_ids.begin(), out.sample_ids.end(), std::int64_t{0});
    return out;
}

inline Dataset head(const Dataset& ds, std::size_t count)
{
    std::vector<std::size_t> rows(std::min(count, ds.size()));
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return subset(ds, rows);
}

// ---------------------------------------------------------------------------
// Packed on-disk format: manifest.json + inputs.bin + labels.bin.

enum class PackedDtype { u8, f32 };

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir, PackedDtype dtype = PackedDtype::f32)
{
    ds.validate();
    std::filesystem::create_directories(dir);
    const std::size_t count = static_cast<std::size_t>(ds.inputs.size());
    if (dtype == PackedDtype::u8) {
        std::vector<std::uint8_t> raw(count);
        for (std::size_t i = 0; i < count; ++i) {
            raw[i] = static_cast<std::uint8_t>(std::lround(ds.inputs.data()[i] * 255.0));
        }
        io::write_raw(dir / "inputs.bin", raw);
    } else {
        std::vector<float> raw(count);
        for (std::size_t i = 0; i < count; ++i) {
            raw[i] = static_cast<float>(ds.inputs.data()[i]);
        }
        io::write_raw(dir / "inputs.bin", raw);
    }
    std::vector<std::int64_t> labels(ds.labels.begin(), ds.labels.end());
    io::write_raw(dir / "labels.bin", labels);

    io::json manifest;
    manifest["name"] = ds.name;
    manifest["n"] = ds.size();
    manifest["shape"] = ds.shape.dims;
    manifest["class_count"] = ds.class_count;
    manifest["dtype"] = dtype == PackedDtype::u8 ? "u8" : "f32";
    manifest["files"] = {{"inputs", "inputs.bin"}, {"labels", "labels.bin"}};
    manifest["split"] = to_string(ds.split);
    io::write_json(dir / "manifest.json", manifest);
}

/// Loads a packed dataset. u8 inputs are scaled by 1/255.
inline Dataset load_dataset(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / "manifest.json";
    require(std::filesystem::exists(manifest_path), "missing manifest: " + manifest_path.string());
    const auto m = io::read_json(manifest_path);
    Dataset ds;
    std::size_t n = 0;
    std::string dtype;
    io::json files;
    try {
        ds.name = m.value("name", std::string{});
        n = m.at("n").get<std::size_t>();
        ds.shape.dims = m.at("shape").get<std::vector<std::size_t>>();
        ds.class_count = m.at("class_count").get<int>();
        dtype = m.at("dtype").get<std::string>();
        files = m.at("files");
        if (m.contains("split")) {
            ds.split = m.at("split").get<std::string>() == "test" ? Split::test : Split::train;
        }
    } catch (const io::json::exception& e) {
        throw Error("malformed dataset manifest: " + std::string(e.what()));
    }
    require(!ds.shape.dims.empty(), "dataset manifest: empty shape");
    const std::size_t d = ds.shape.size();
    const auto inputs_file = dir / files.value("inputs", std::string{"inputs.bin"});
    const auto labels_file = dir / files.value("labels", std::string{"labels.bin"});

    ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    if (dtype == "u8") {
        const auto raw = io::read_raw<std::uint8_t>(inputs_file, n * d);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            ds.inputs.data()[i] = raw[i] / 255.0;
        }
    } else if (dtype == "f32") {
        const auto raw = io::read_raw<float>(inputs_file, n * d);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            ds.inputs.data()[i] = static_cast<double>(raw[i]);
        }
    } else {
        throw Error("dataset manifest: unsupported dtype '" + dtype + "'");
    }
    const auto raw_labels = io::read_raw<std::int64_t>(labels_file, n);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        require(raw_labels[i] >= 0 && raw_labels[i] < ds.class_count,
                "dataset: label " + std::to_string(raw_labels[i]) + " outside [0," + std::to_string(ds.class_count) +
                    ")");
        ds.labels[i] = static_cast<int>(raw_labels[i]);
    }
    ds.sample_ids.resize(n);
    std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), std::int64_t{0});
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data.

namespace detail {
// Values are rounded through single precision so f32 packing round-trips exactly.
inline double quantize01(double v) { return static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0))); }
}  // namespace detail

/// Gaussian blobs with pairwise class-mean distance `separation`.
///
/// With dim >= class_count the means are simplex vertices
/// base + (separation/sqrt 2) e_k; otherwise they sit on the first axis at
/// spacing `separation`, centred on 0.5. Inputs are clipped to [0,1].
inline Dataset make_synthetic(int class_count, int per_class, int dim, double separation, std::uint64_t seed,
                              double noise_std = 0.1)
{
    require(class_count >= 2, "make_synthetic: class_count must be >= 2");
    require(per_class >= 1, "make_synthetic: per_class must be >= 1");
    require(dim >= 1, "make_synthetic: dim must be >= 1");
    require(separation > 0.0, "make_synthetic: separation must be > 0");
    require(noise_std >= 0.0, "make_synthetic: noise_std must be >= 0");

    const auto C = static_cast<std::size_t>(class_count);
    const auto d = static_cast<std::size_t>(dim);
    Matrix means = Matrix::Zero(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(d));
    if (d >= C) {
        const double offset = separation / std::sqrt(2.0);
        means.setConstant(0.5 - offset / static_cast<double>(C));
        for (std::size_t k = 0; k < C; ++k) {
            means(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)) += offset;
        }
    } else {
        means.setConstant(0.5);
        for (std::size_t k = 0; k < C; ++k) {
            means(static_cast<Eigen::Index>(k), 0) =
                0.5 + separation * (static_cast<double>(k) - 0.5 * static_cast<double>(C - 1));
        }
    }

    Dataset ds;
    ds.name = "synthetic_blobs";
    ds.class_count = class_count;
    ds.shape = InputShape::flat(d);
    const std::size_t n = C * static_cast<std::size_t>(per_class);
    ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ds.labels.resize(n);
    Rng rng(derive_seed(seed, {stream::synthetic}));
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = i % C;
        ds.labels[i] = static_cast<int>(k);
        for (std::size_t j = 0; j < d; ++j) {
            const double v = means(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) + noise_std * rng.normal();
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = detail::quantize01(v);
        }
    }
    ds.sample_ids.resize(n);
    std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), std::int64_t{0});
    return ds;
}

/// Image-shaped synthetic classes: each class owns a smooth random template
/// (a sum of a few low-frequency plane waves per channel). A sample is
///   clip(0.5 + a * template_k + noise_std * N(0,1)),  a ~ U[1-spread, 1+spread] * signal.
/// Train and test draws share templates (seeded by `seed`) but use disjoint
/// sample streams (`split`).
struct SyntheticImageSpec {
    int class_count = 10;
    int per_class = 100;
    std::size_t height = 8;
    std::size_t width = 8;
    std::size_t channels = 1;
    double signal = 0.2;
    double amplitude_spread = 0.5;
    double noise_std = 0.1;
    int waves = 3;
    std::uint64_t seed = 0;
};

inline Dataset make_synthetic_images(const SyntheticImageSpec& spec, Split split = Split::train)
{
    require(spec.class_count >= 2, "make_synthetic_images: class_count must be >= 2");
    require(spec.per_class >= 1, "make_synthetic_images: per_class must be >= 1");
    require(spec.height >= 1 && spec.width >= 1 && spec.channels >= 1, "make_synthetic_images: bad image size");
    const auto shape = InputShape::image(spec.height, spec.width, spec.channels);
    const std::size_t d = shape.size();
    const auto C = static_cast<std::size_t>(spec.class_count);

    Matrix templates(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(d));
    Rng trng(derive_seed(spec.seed, {stream::synthetic, 0}));
    for (std::size_t k = 0; k < C; ++k) {
        for (std::size_t c = 0; c < spec.channels; ++c) {
            std::vector<double> fy, fx, ph, amp;
            for (int w = 0; w < spec.waves; ++w) {
                fy.push_back(trng.uniform(-2.0, 2.0));
                fx.push_back(trng.uniform(-2.0, 2.0));
                ph.push_back(trng.uniform(0.0, 2.0 * M_PI));
                amp.push_back(trng.normal());
            }
            for (std::size_t y = 0; y < spec.height; ++y) {
                for (std::size_t x = 0; x < spec.width; ++x) {
                    double v = 0.0;
                    for (int w = 0; w < spec.waves; ++w) {
                        v += amp[w] * std::cos(2.0 * M_PI *
                                                   (fy[w] * static_cast<double>(y) / static_cast<double>(spec.height) +
                                                    fx[w] * static_cast<double>(x) / static_cast<double>(spec.width)) +
                                               ph[w]);
                    }
                    templates(static_cast<Eigen::Index>(k),
                              static_cast<Eigen::Index>((y * spec.width + x) * spec.channels + c)) = v;
                }
            }
        }
        auto row = templates.row(static_cast<Eigen::Index>(k));
        const double scale = row.cwiseAbs().maxCoeff();
        if (scale > 0) {
            row /= scale;
        }
    }

    Dataset ds;
    ds.name = "synthetic_images";
    ds.class_count = spec.class_count;
    ds.shape = shape;
    ds.split = split;
    const std::size_t n = C * static_cast<std::size_t>(spec.per_class);
    ds.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ds.labels.resize(n);
    Rng rng(derive_seed(spec.seed, {stream::synthetic, split == Split::train ? 1u : 2u}));
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = i % C;
        ds.labels[i] = static_cast<int>(k);
        const double a = spec.signal * rng.uniform(1.0 - spec.amplitude_spread, 1.0 + spec.amplitude_spread);
        for (std::size_t j = 0; j < d; ++j) {
            const double v = 0.5 + a * templates(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) +
                             spec.noise_std * rng.normal();
            ds.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = detail::quantize01(v);
        }
    }
    ds.sample_ids.resize(n);
    std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), std::int64_t{0});
    return ds;
}

// ---------------------------------------------------------------------------
// Label corruption.

struct CorruptionSpec {
    double noise_rate = 0.0;
    std::uint64_t seed = 0;

    CorruptionSpec(double rate, std::uint64_t s) : noise_rate(rate), seed(s)
    {
        require(rate >= 0.0 && rate <= 1.0, "CorruptionSpec: noise_rate must lie in [0,1]");
    }
};

/// Positions chosen for resampling: floor(rate * n) of them, without replacement.
inline std::vector<std::size_t> corruption_positions(std::size_t n, const CorruptionSpec& spec)
{
    const auto count = static_cast<std::size_t>(std::floor(spec.noise_rate * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(spec.seed, {stream::corruption, 0}));
    rng.shuffle(order);
    order.resize(std::min(count, n));
    std::sort(order.begin(), order.end());
    return order;
}

/// Resamples the selected labels uniformly over all classes (the true label may come back).
inline Dataset corrupt_labels(const Dataset& ds, const CorruptionSpec& spec)
{
    ds.validate();
    Dataset out = ds;
    Rng rng(derive_seed(spec.seed, {stream::corruption, 1}));
    for (auto pos : corruption_positions(ds.size(), spec)) {
        out.labels[pos] = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.class_count)));
    }
    if (spec.noise_rate > 0.0) {
        out.name = ds.name + "_noise" + io::fixed(spec.noise_rate, 2);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation.

struct AugmentationSpec {
    std::size_t crop_padding = 4;
    double flip_probability = 0.5;
    bool enabled = false;
};

/// Crop offset and flip decision drawn for one sample.
struct AugmentDraw {
    std::size_t offset_y = 0;
    std::size_t offset_x = 0;
    bool flip = false;
};

inline void augment_image(const double* src, double* dst, const InputShape& shape, std::size_t pad,
                          const AugmentDraw& draw)
{
    const auto H = shape.height(), W = shape.width(), Cc = shape.channels();
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t out_x = draw.flip ? W - 1 - x : x;
            // Output pixel (y, x) of the crop reads padded (y + oy, x + ox).
            const auto py = static_cast<std::ptrdiff_t>(y + draw.offset_y) - static_cast<std::ptrdiff_t>(pad);
            const auto px = static_cast<std::ptrdiff_t>(x + draw.offset_x) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = py >= 0 && px >= 0 && py < static_cast<std::ptrdiff_t>(H) &&
                                px < static_cast<std::ptrdiff_t>(W);
            for (std::size_t c = 0; c < Cc; ++c) {
                dst[(y * W + out_x) * Cc + c] =
                    inside ? src[(static_cast<std::size_t>(py) * W + static_cast<std::size_t>(px)) * Cc + c] : 0.0;
            }
        }
    }
}

/// Per-sample random crop after zero padding, then horizontal flip.
inline ExampleBatch augment_batch(const ExampleBatch& batch, const AugmentationSpec& spec, std::uint64_t seed)
{
    if (!spec.enabled) {
        return batch;
    }
    require(batch.shape.is_image(), "augment_batch: augmentation needs image-shaped inputs");
    require(spec.flip_probability >= 0.0 && spec.flip_probability <= 1.0,
            "augment_batch: flip_probability must lie in [0,1]");
    ExampleBatch out = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Rng rng(derive_seed(seed, {stream::augment, static_cast<std::uint64_t>(batch.sample_ids[i])}));
        AugmentDraw draw;
        draw.offset_y = static_cast<std::size_t>(rng.below(2 * spec.crop_padding + 1));
        draw.offset_x = static_cast<std::size_t>(rng.below(2 * spec.crop_padding + 1));
        draw.flip = rng.bernoulli(spec.flip_probability);
        augment_image(batch.inputs.row(static_cast<Eigen::Index>(i)).data(),
                      out.inputs.row(static_cast<Eigen::Index>(i)).data(), batch.shape, spec.crop_padding, draw);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batching.

/// Deterministic permutation of 0..n-1 for (shuffle_seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t shuffle_seed, std::uint64_t epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(shuffle_seed, {stream::shuffle, epoch}));
    rng.shuffle(order);
    return order;
}

inline std::vector<ExampleBatch> iterate_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                                                 std::uint64_t epoch)
{
    require(ds.size() > 0, "iterate_batches: empty dataset");
    require(batch_size >= 1, "iterate_batches: batch_size must be >= 1");
    const auto order = epoch_order(ds.size(), shuffle_seed, epoch);
    std::vector<ExampleBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        batches.push_back(gather(ds, std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                              order.begin() + static_cast<std::ptrdiff_t>(end))));
    }
    return batches;
}

/// Batches in dataset order (evaluation).
inline std::vector<ExampleBatch> sequential_batches(const Dataset& ds, std::size_t batch_size)
{
    require(batch_size >= 1, "sequential_batches: batch_size must be >= 1");
    std::vector<ExampleBatch> batches;
    for (std::size_t start = 0; start < ds.size(); start += batch_size) {
        std::vector<std::size_t> rows(std::min(ds.size(), start + batch_size) - start);
        std::iota(rows.begin(), rows.end(), start);
        batches.push_back(gather(ds, rows));
    }
    return batches;
}

}  // namespace advmem
