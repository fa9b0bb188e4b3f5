#include "kfc/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kfc/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts are unsupported");

namespace kfc::io {

void write_container(const std::filesystem::path& path, const Container& c) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open for writing: " + path.string());
    out.write(c.magic.data(), 4);
    const std::string header = c.header.dump();
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(header.data(), static_cast<std::streamsize>(hlen));
    for (const auto& block : c.blocks) {
        out.write(reinterpret_cast<const char*>(block.data()),
                  static_cast<std::streamsize>(block.size() * sizeof(double)));
    }
    if (!out) throw ValidationError("write failed: " + path.string());
}

namespace {

Container read_preamble(std::ifstream& in, const std::filesystem::path& path,
                        const std::string& expected_magic) {
    Container c;
    char magic[4];
    if (!in.read(magic, 4)) throw ValidationError("truncated file (magic): " + path.string());
    c.magic.assign(magic, 4);
    if (c.magic != expected_magic) {
        throw ValidationError("wrong magic in " + path.string() + ": expected " + expected_magic +
                              ", found " + c.magic);
    }
    std::uint64_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen))) {
        throw ValidationError("truncated file (header length): " + path.string());
    }
    std::string header(hlen, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(hlen))) {
        throw ValidationError("truncated file (header): " + path.string());
    }
    try {
        c.header = json::parse(header);
    } catch (const json::parse_error& e) {
        throw ValidationError("bad JSON header in " + path.string() + ": " + e.what());
    }
    return c;
}

}  // namespace

json read_header(const std::filesystem::path& path, const std::string& expected_magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path.string());
    return read_preamble(in, path, expected_magic).header;
}

Container read_container(const std::filesystem::path& path, const std::string& expected_magic,
                         const std::vector<std::size_t>& block_sizes, bool check_finite) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open: " + path.string());
    Container c = read_preamble(in, path, expected_magic);
    for (std::size_t n : block_sizes) {
        std::vector<double> block(n);
        if (!in.read(reinterpret_cast<char*>(block.data()),
                     static_cast<std::streamsize>(n * sizeof(double)))) {
            throw ValidationError("truncated payload in " + path.string());
        }
        if (check_finite) {
            for (double x : block) {
                if (!std::isfinite(x)) {
                    throw ValidationError("non-finite value in payload of " + path.string());
                }
            }
        }
        c.blocks.push_back(std::move(block));
    }
    // Trailing garbage counts as corruption.
    char extra;
    if (in.read(&extra, 1)) throw ValidationError("unexpected trailing bytes in " + path.string());
    return c;
}

std::vector<double> to_block(const Eigen::MatrixXd& m) {
    std::vector<double> v(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            v[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
    return v;
}

Eigen::MatrixXd from_block(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols) {
    if (v.size() != static_cast<std::size_t>(rows * cols)) {
        throw ValidationError("block size does not match declared shape");
    }
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = v[static_cast<std::size_t>(i * cols + j)];
    return m;
}

std::vector<double> to_block(const Eigen::MatrixXcd& m) {
    std::vector<double> v(static_cast<std::size_t>(2 * m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            v[k++] = m(i, j).real();
            v[k++] = m(i, j).imag();
        }
    return v;
}

Eigen::MatrixXcd from_block_complex(const std::vector<double>& v, Eigen::Index rows,
                                    Eigen::Index cols) {
    if (v.size() != static_cast<std::size_t>(2 * rows * cols)) {
        throw ValidationError("complex block size does not match declared shape");
    }
    Eigen::MatrixXcd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = {v[k], v[k + 1]};
            k += 2;
        }
    return m;
}

}  // namespace kfc::io
