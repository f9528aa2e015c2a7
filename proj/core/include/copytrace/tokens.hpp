#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace copytrace {

/// Row-wise L2 normalization; zero rows throw NumericError (a zero token
/// has no direction).
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& tokens);

/// True when every row has unit L2 norm within `tol`.
bool rows_unit_norm(const Eigen::MatrixXd& tokens, double tol = 1e-9);

/// ".tok" byte format: magic "TOK1" | u32le n, d | n*d float32
/// little-endian row-major. Kernel math is 64-bit; files are 32-bit.
std::vector<std::uint8_t> serialize_tokens(const Eigen::MatrixXd& tokens);
Eigen::MatrixXd deserialize_tokens(const std::vector<std::uint8_t>& bytes);
void save_tokens(const Eigen::MatrixXd& tokens, const std::string& path);
Eigen::MatrixXd load_tokens(const std::string& path);

} // namespace copytrace
