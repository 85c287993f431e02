#pragma once

#include "advmem/advmem.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

namespace advmem::test {

inline ArchSpec linear_arch(std::size_t d, int C, std::uint64_t seed = 1)
{
    ArchSpec a;
    a.family = Family::linear;
    a.class_count = C;
    a.input_shape = InputShape::flat(d);
    a.init_seed = seed;
    return a;
}

inline ArchSpec mlp_arch(std::size_t d, std::vector<std::size_t> widths, int C, std::uint64_t seed = 1)
{
    auto a = linear_arch(d, C, seed);
    a.family = Family::mlp;
    a.widths = std::move(widths);
    return a;
}

/// Linear model with the given weight (C x d) and bias.
inline ModelParameters linear_model(const Matrix& W, const Vector& b)
{
    auto p = zero_model(linear_arch(static_cast<std::size_t>(W.cols()), static_cast<int>(W.rows())));
    for (auto& g : p.groups) {
        if (g.role == ParamRole::dense) {
            g.values = Eigen::Map<const Vector>(W.data(), W.size());
        } else {
            g.values = b;
        }
    }
    return p;
}

inline Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    Rng rng(seed);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

inline ExampleBatch make_batch(const Matrix& x, Labels y)
{
    ExampleBatch b;
    b.inputs = x;
    b.labels = std::move(y);
    for (std::size_t i = 0; i < b.labels.size(); ++i) b.sample_ids.push_back(static_cast<std::int64_t>(i));
    b.shape = InputShape::flat(static_cast<std::size_t>(x.cols()));
    return b;
}

inline Dataset to_dataset(const ExampleBatch& b, int C)
{
    Dataset ds;
    ds.inputs = b.inputs;
    ds.labels = b.labels;
    ds.sample_ids = b.sample_ids;
    ds.shape = b.shape;
    ds.class_count = C;
    return ds;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("advmem_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace advmem::test
