#pragma once

#include <Eigen/Sparse>

#include <filesystem>

#include "gkmcmc/common.hpp"

namespace gkmcmc::mmio {

void write_array(const std::filesystem::path& path, const Matrix& m);
void write_array(const std::filesystem::path& path, const Vector& v);
Matrix read_array(const std::filesystem::path& path);

void write_coordinate(const std::filesystem::path& path, const Eigen::SparseMatrix<double>& m);
Eigen::SparseMatrix<double> read_coordinate(const std::filesystem::path& path);

}  // namespace gkmcmc::mmio
