#include "copytrace/tokens.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "copytrace/errors.hpp"

namespace copytrace {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& tokens) {
    Eigen::MatrixXd out(tokens.rows(), tokens.cols());
    for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
        const double n = tokens.row(i).norm();
        if (!(n > 0) || !std::isfinite(n)) {
            throw NumericError("normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
        }
        out.row(i) = tokens.row(i) / n;
    }
    return out;
}

bool rows_unit_norm(const Eigen::MatrixXd& tokens, double tol) {
    for (Eigen::Index i = 0; i < tokens.rows(); ++i) {
        if (std::abs(tokens.row(i).norm() - 1.0) > tol) return false;
    }
    return true;
}

std::vector<std::uint8_t> serialize_tokens(const Eigen::MatrixXd& tokens) {
    std::vector<std::uint8_t> out;
    const auto n = static_cast<std::uint32_t>(tokens.rows());
    const auto d = static_cast<std::uint32_t>(tokens.cols());
    out.reserve(12 + static_cast<std::size_t>(n) * d * 4);
    out.push_back('T');
    out.push_back('O');
    out.push_back('K');
    out.push_back('1');
    put_u32(out, n);
    put_u32(out, d);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) {
            const auto v = static_cast<float>(tokens(i, j));
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    return out;
}

Eigen::MatrixXd deserialize_tokens(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "TOK1", 4) != 0) {
        throw FormatError("token blob: bad magic or truncated header");
    }
    const std::uint32_t n = get_u32(bytes.data() + 4);
    const std::uint32_t d = get_u32(bytes.data() + 8);
    const std::size_t expect = 12 + static_cast<std::size_t>(n) * d * 4;
    if (n == 0 || d == 0 || bytes.size() != expect) {
        throw FormatError("token blob: payload size mismatch");
    }
    Eigen::MatrixXd out(n, d);
    const std::uint8_t* p = bytes.data() + 12;
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) {
            const std::uint32_t bits = get_u32(p);
            p += 4;
            float v;
            std::memcpy(&v, &bits, 4);
            if (!std::isfinite(v)) throw FormatError("token blob: non-finite entry");
            out(i, j) = v;
        }
    }
    return out;
}

void save_tokens(const Eigen::MatrixXd& tokens, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open for writing: " + path);
    auto bytes = serialize_tokens(tokens);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ParamError("write failed: " + path);
}

Eigen::MatrixXd load_tokens(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParamError("cannot open: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_tokens(bytes);
}

} // namespace copytrace
