#pragma once

// Instance file loading (one-line CSV or ASCII PGM) and P2 PGM output.

#include "kllime/instance.hpp"

#include <Eigen/Dense>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace kllime {

namespace detail {

// Strips PGM comment lines (# ...) and returns whitespace-separated tokens.
inline std::vector<std::string> pgm_tokens(std::istream& in) {
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) tokens.push_back(tok);
    }
    return tokens;
}

} // namespace detail

// ASCII PGM (P2). Pixels are normalized to [0,1] by dividing by maxval.
inline Instance read_pgm_instance(std::istream& in, double background) {
    auto tokens = detail::pgm_tokens(in);
    if (tokens.size() < 4 || tokens[0] != "P2")
        throw std::runtime_error("pgm: expected ASCII P2 header");
    int cols = 0, rows = 0, maxval = 0;
    try {
        cols = std::stoi(tokens[1]);
        rows = std::stoi(tokens[2]);
        maxval = std::stoi(tokens[3]);
    } catch (const std::exception&) {
        throw std::runtime_error("pgm: malformed dimensions");
    }
    if (cols < 1 || rows < 1 || maxval < 1)
        throw std::runtime_error("pgm: invalid dimensions or maxval");
    const std::size_t n = static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows);
    if (tokens.size() != 4 + n)
        throw std::runtime_error("pgm: pixel count does not match dimensions");
    Instance inst;
    inst.features.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        int v = std::stoi(tokens[4 + i]);
        if (v < 0 || v > maxval) throw std::runtime_error("pgm: pixel out of range");
        inst.features[static_cast<Eigen::Index>(i)] =
            static_cast<double>(v) / static_cast<double>(maxval);
    }
    inst.background = background;
    inst.shape = std::make_pair(rows, cols);
    inst.validate();
    return inst;
}

// One line of comma-separated reals.
inline Instance read_csv_instance(std::istream& in, double background) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("csv: empty input");
    Instance inst;
    std::vector<double> vals;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
        try {
            vals.push_back(std::stod(cell));
        } catch (const std::exception&) {
            throw std::runtime_error("csv: could not parse value '" + cell + "'");
        }
    }
    if (vals.empty()) throw std::runtime_error("csv: no values on first line");
    inst.features = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    inst.background = background;
    inst.validate();
    return inst;
}

// Sniffs the format: a leading "P2" means PGM, anything else is CSV.
inline Instance read_instance_file(const std::string& path, double background) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open instance file: " + path);
    std::string magic;
    in >> magic;
    in.seekg(0);
    if (magic == "P2") return read_pgm_instance(in, background);
    return read_csv_instance(in, background);
}

// P2 with maxval 255, one row of pixels per line. Byte-deterministic.
inline void write_pgm(std::ostream& out, int rows, int cols, const std::vector<int>& pixels) {
    if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) != pixels.size())
        throw std::invalid_argument("write_pgm: pixel count mismatch");
    out << "P2\n" << cols << " " << rows << "\n255\n";
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c) out << ' ';
            out << pixels[static_cast<std::size_t>(r) * cols + c];
        }
        out << '\n';
    }
}

inline void write_pgm_file(const std::string& path, int rows, int cols,
                           const std::vector<int>& pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    write_pgm(out, rows, cols, pixels);
}

} // namespace kllime
