#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vstring/common.hpp"

namespace vstring::csv {

/// Fixed 17-significant-digit scientific formatting; identical inputs give
/// byte-identical files.
inline std::string format(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);
    return buf;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path), path_(path) {
        if (!out_) throw InputError("cannot write " + path.string());
    }

    Writer& header(const std::vector<std::string>& cols) {
        for (std::size_t i = 0; i < cols.size(); ++i) out_ << (i ? "," : "") << cols[i];
        out_ << '\n';
        return *this;
    }

    Writer& row(const std::vector<double>& vals) {
        for (std::size_t i = 0; i < vals.size(); ++i) out_ << (i ? "," : "") << format(vals[i]);
        out_ << '\n';
        return *this;
    }

    /// Row with a leading integer column (mode index and the like).
    Writer& row(long long index, const std::vector<double>& vals) {
        out_ << index;
        for (double v : vals) out_ << ',' << format(v);
        out_ << '\n';
        return *this;
    }

    const std::filesystem::path& path() const { return path_; }

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(const std::string& name) const {
        for (std::size_t c = 0; c < columns.size(); ++c)
            if (columns[c] == name) {
                std::vector<double> out;
                out.reserve(rows.size());
                for (const auto& r : rows) out.push_back(r[c]);
                return out;
            }
        throw InputError("missing CSV column '" + name + "'");
    }
};

inline Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty CSV file " + path.string());
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
            t.columns.push_back(cell);
        }
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> r;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                r.push_back(std::stod(cell, &used));
            } catch (const std::exception&) {
                throw InputError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
            }
        }
        if (r.size() != t.columns.size())
            throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(t.columns.size()) + " columns");
        t.rows.push_back(std::move(r));
    }
    return t;
}

}  // namespace vstring::csv
