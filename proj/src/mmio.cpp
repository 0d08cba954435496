#include "gkmcmc/mmio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace gkmcmc::mmio {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::ifstream open_for_read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    return in;
}

// Reads the banner and skips comment lines; returns the banner tokens.
std::vector<std::string> read_banner(std::istream& in, const std::filesystem::path& path) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("%%MatrixMarket", 0) != 0)
        throw ConfigError(path.string() + ": missing MatrixMarket banner");
    std::istringstream hs(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (hs >> tok) tokens.push_back(tok);
    return tokens;
}

void skip_comments(std::istream& in) {
    while (in.peek() == '%') {
        std::string line;
        std::getline(in, line);
    }
}

}  // namespace

void write_array(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << "%%MatrixMarket matrix array real general\n";
    out << m.rows() << " " << m.cols() << "\n";
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) out << fmt(m(i, j)) << "\n";
}

void write_array(const std::filesystem::path& path, const Vector& v) {
    write_array(path, Matrix(v));
}

Matrix read_array(const std::filesystem::path& path) {
    auto in = open_for_read(path);
    const auto banner = read_banner(in, path);
    if (banner.size() < 5 || banner[2] != "array" || banner[3] != "real")
        throw ConfigError(path.string() + ": expected a real array MatrixMarket file");
    skip_comments(in);
    Index rows = 0, cols = 0;
    if (!(in >> rows >> cols) || rows < 0 || cols < 0)
        throw ConfigError(path.string() + ": bad size line");
    Matrix m(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            if (!(in >> m(i, j))) throw ConfigError(path.string() + ": truncated data");
    return m;
}

void write_coordinate(const std::filesystem::path& path, const Eigen::SparseMatrix<double>& m) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m.rows() << " " << m.cols() << " " << m.nonZeros() << "\n";
    for (int k = 0; k < m.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
            out << it.row() + 1 << " " << it.col() + 1 << " " << fmt(it.value()) << "\n";
}

Eigen::SparseMatrix<double> read_coordinate(const std::filesystem::path& path) {
    auto in = open_for_read(path);
    const auto banner = read_banner(in, path);
    if (banner.size() < 5 || banner[2] != "coordinate" || banner[3] != "real")
        throw ConfigError(path.string() + ": expected a real coordinate MatrixMarket file");
    skip_comments(in);
    Index rows = 0, cols = 0;
    long long nnz = 0;
    if (!(in >> rows >> cols >> nnz)) throw ConfigError(path.string() + ": bad size line");
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(nnz));
    for (long long k = 0; k < nnz; ++k) {
        Index i = 0, j = 0;
        double v = 0.0;
        if (!(in >> i >> j >> v)) throw ConfigError(path.string() + ": truncated data");
        trips.emplace_back(static_cast<int>(i - 1), static_cast<int>(j - 1), v);
    }
    Eigen::SparseMatrix<double> m(rows, cols);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
}

}  // namespace gkmcmc::mmio
