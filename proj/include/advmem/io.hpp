#pragma once

#include "advmem/core.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace advmem::io {

static_assert(std::endian::native == std::endian::little, "packed formats assume a little-endian host");

using json = nlohmann::json;

template <typename T>
void write_raw(const std::filesystem::path& path, const std::vector<T>& values)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
    require(static_cast<bool>(out), "write failed: " + path.string());
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path, std::size_t expected_count)
{
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), "cannot open: " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    require(bytes == expected_count * sizeof(T),
            "size mismatch in " + path.string() + ": expected " + std::to_string(expected_count * sizeof(T)) +
                " bytes, found " + std::to_string(bytes));
    std::vector<T> values(expected_count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    require(static_cast<bool>(in), "read failed: " + path.string());
    return values;
}

inline json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open: " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

inline void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), "cannot open for writing: " + path.string());
    out << text;
}

inline void write_json(const std::filesystem::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

inline std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path);
    require(static_cast<bool>(in), "cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Shortest round-trippable decimal for CSV output; non-finite values print as "nan".
inline std::string format_number(double v)
{
    if (!std::isfinite(v)) {
        return "nan";
    }
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    double back = std::stod(ss.str());
    for (int p = 6; p < 17; ++p) {
        std::ostringstream t;
        t << std::setprecision(p) << v;
        back = std::stod(t.str());
        if (back == v) {
            return t.str();
        }
    }
    return ss.str();
}

inline std::string fixed(double v, int digits)
{
    if (!std::isfinite(v)) {
        return "nan";
    }
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(digits) << v;
    auto s = ss.str();
    // avoid "-0.00"
    if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') {
        s.erase(0, 1);
    }
    return s;
}

/// Minimal CSV table: a header plus rows of preformatted cells.
class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}

    void add_row(std::vector<std::string> cells)
    {
        require(cells.size() == header_.size(), "CSV row width does not match header");
        rows_.push_back(std::move(cells));
    }

    [[nodiscard]] std::string str() const
    {
        std::ostringstream ss;
        write_line(ss, header_);
        for (const auto& r : rows_) {
            write_line(ss, r);
        }
        return ss.str();
    }

    void save(const std::filesystem::path& path) const { write_text(path, str()); }

private:
    static void write_line(std::ostringstream& ss, const std::vector<std::string>& cells)
    {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) {
                ss << ',';
            }
            ss << cells[i];
        }
        ss << '\n';
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

/// Parsed CSV (no quoting support; the files written here never need it).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t column(const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        throw Error("CSV column not found: " + name);
    }
};

inline CsvTable read_csv(const std::filesystem::path& path)
{
    std::istringstream in(read_text(path));
    CsvTable table;
    std::string line;
    auto split = [](const std::string& l) {
        std::vector<std::string> cells;
        std::stringstream ls(l);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        if (!l.empty() && l.back() == ',') {
            cells.emplace_back();
        }
        return cells;
    };
    require(static_cast<bool>(std::getline(in, line)), "empty CSV: " + path.string());
    table.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto cells = split(line);
        require(cells.size() == table.header.size(), "ragged CSV row in " + path.string());
        table.rows.push_back(std::move(cells));
    }
    return table;
}

}  // namespace advmem::io
