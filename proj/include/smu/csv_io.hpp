#pragma once

// Plain CSV files: datasets (x1..xd), mixing measures (w,y1..yd), fitted
// values and probe sets. Numbers are written with 17 significant digits so
// that a round trip reproduces every double exactly.

#include <cstddef>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "smu/error.hpp"
#include "smu/rect_geometry.hpp"
#include "smu/smu_core.hpp"

namespace smu::csv {

inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline std::vector<std::string> split(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline Table read_table(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    Table t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
        auto cells = split(line);
        if (t.header.empty()) {
            t.header = std::move(cells);
            continue;
        }
        if (cells.size() != t.header.size())
            throw Error(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                        " fields, got " + std::to_string(cells.size()));
        std::vector<double> row;
        for (const auto& c : cells) {
            std::size_t used = 0;
            double v;
            try {
                v = std::stod(c, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != c.size())
                throw Error(path + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.header.empty()) throw Error(path + ": missing header");
    return t;
}

inline void check_coordinate_header(const std::vector<std::string>& cols, std::size_t first, const char* prefix,
                                    const std::string& path)
{
    for (std::size_t j = first; j < cols.size(); ++j)
        if (cols[j] != prefix + std::to_string(j - first + 1))
            throw Error(path + ": expected column '" + prefix + std::to_string(j - first + 1) + "', got '" + cols[j] +
                        "'");
}

inline Dataset read_dataset(const std::string& path)
{
    const auto t = read_table(path);
    if (t.header.empty()) throw Error(path + ": empty header");
    check_coordinate_header(t.header, 0, "x", path);
    if (t.rows.empty()) throw Error(path + ": no observations");
    std::vector<double> flat;
    for (const auto& r : t.rows) flat.insert(flat.end(), r.begin(), r.end());
    return Dataset(t.header.size(), std::move(flat));
}

inline std::vector<Point> read_points(const std::string& path)
{
    const auto ds = read_dataset(path);
    std::vector<Point> out;
    for (std::size_t i = 0; i < ds.size(); ++i) out.emplace_back(Coords(ds.row(i).begin(), ds.row(i).end()));
    return out;
}

inline MixingMeasure read_mixing(const std::string& path)
{
    const auto t = read_table(path);
    if (t.header.size() < 2 || t.header[0] != "w") throw Error(path + ": expected header w,y1..yd");
    check_coordinate_header(t.header, 1, "y", path);
    if (t.rows.empty()) throw Error(path + ": no atoms");
    std::vector<double> atoms, weights;
    for (const auto& r : t.rows) {
        weights.push_back(r[0]);
        atoms.insert(atoms.end(), r.begin() + 1, r.end());
    }
    return MixingMeasure::make(t.header.size() - 1, atoms, weights);
}

inline std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    return out;
}

inline void write_dataset(const std::string& path, const Dataset& data)
{
    auto out = open_out(path);
    for (std::size_t j = 0; j < data.dim(); ++j) out << (j ? ",x" : "x") << j + 1;
    out << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto r = data.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << format_double(r[j]);
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

inline void write_mixing(const std::string& path, const MixingMeasure& g)
{
    auto out = open_out(path);
    out << 'w';
    for (std::size_t j = 0; j < g.dim(); ++j) out << ",y" << j + 1;
    out << '\n';
    for (std::size_t a = 0; a < g.size(); ++a) {
        out << format_double(g.weight(a));
        for (double v : g.atom(a)) out << ',' << format_double(v);
        out << '\n';
    }
    if (!out) throw Error("write failed: " + path);
}

/// One column "fitted", one row per observation in input order.
inline void write_fitted(const std::string& path, const std::vector<double>& fitted)
{
    auto out = open_out(path);
    out << "fitted\n";
    for (double v : fitted) out << format_double(v) << '\n';
    if (!out) throw Error("write failed: " + path);
}

} // namespace smu::csv
