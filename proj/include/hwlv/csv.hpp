#pragma once

// Minimal CSV export/import. Numbers are written with 17 significant digits
// so a file round-trips bit-exactly; lines starting with '#' are comments.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hwlv/error.hpp"

namespace hwlv {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::string& comment, const std::vector<std::string>& columns)
        : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw InvalidInput("cannot open " + path + " for writing");
        if (!comment.empty()) out_ << "# " << comment << '\n';
        for (std::size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
        out_ << '\n';
        width_ = columns.size();
    }

    void row(const std::vector<double>& values) {
        if (values.size() != width_) throw InvalidInput("csv row width mismatch in " + path_);
        for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format_number(values[i]);
        out_ << '\n';
    }

    ~CsvWriter() { out_.flush(); }

private:
    std::ofstream out_;
    std::string path_;
    std::size_t width_ = 0;
};

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw InvalidInput("csv: missing column '" + name + "'");
    }
    std::vector<double> column(const std::string& name) const {
        const std::size_t k = index(name);
        std::vector<double> v;
        v.reserve(rows.size());
        for (const auto& r : rows) v.push_back(r[k]);
        return v;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open " + path);
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (t.columns.empty()) {
            t.columns = cells;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw InvalidInput(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                               " fields");
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(c, &used));
                if (used != c.size()) throw std::invalid_argument(c);
            } catch (const std::exception&) {
                throw InvalidInput(path + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
            }
        }
        t.rows.push_back(std::move(row));
    }
    if (t.columns.empty()) throw InvalidInput(path + ": no header");
    return t;
}

}  // namespace hwlv
