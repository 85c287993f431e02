#pragma once

#include "advmem/core.hpp"
#include "advmem/io.hpp"
#include "advmem/trainer.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace advmem {

inline std::vector<std::string> default_curve_series()
{
    return {"train_nat_acc", "train_rob_acc", "test_nat_acc", "test_rob_acc"};
}

/// Long-format plot data: one (epoch, series, value) row per epoch and series.
/// Series names are history column names.
inline std::string emit_curves(const History& history, const std::vector<std::string>& series = default_curve_series())
{
    require(!history.rows.empty(), "emit_curves: empty history");
    const auto cols = History::columns();
    std::vector<std::size_t> idx;
    for (const auto& s : series) {
        const auto it = std::find(cols.begin(), cols.end(), s);
        require(it != cols.end() && s != "epoch", "emit_curves: unknown series " + s);
        idx.push_back(static_cast<std::size_t>(it - cols.begin()));
    }
    io::CsvWriter w({"epoch", "series", "value"});
    for (const auto& r : history.rows) {
        const auto v = History::values(r);
        for (std::size_t k = 0; k < series.size(); ++k) {
            w.add_row({std::to_string(r.epoch), series[k], io::format_number(v[idx[k]])});
        }
    }
    return w.str();
}

}  // namespace advmem
