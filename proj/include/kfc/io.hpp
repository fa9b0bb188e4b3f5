#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace kfc::io {

using json = nlohmann::ordered_json;

// Shared binary container layout used by all KF*1 artifacts:
//   4-byte magic, little-endian u64 header byte count, UTF-8 JSON header,
//   then contiguous little-endian float64 payload blocks in declared order.
struct Container {
    std::string magic;
    json header;
    std::vector<std::vector<double>> blocks;
};

void write_container(const std::filesystem::path& path, const Container& c);

// Reads magic and JSON header only, ignoring the payload.
json read_header(const std::filesystem::path& path, const std::string& expected_magic);

// Validates magic and payload length; throws ValidationError on wrong magic,
// truncation, or non-finite payload (when check_finite).
Container read_container(const std::filesystem::path& path, const std::string& expected_magic,
                         const std::vector<std::size_t>& block_sizes, bool check_finite = true);

// Flatten helpers (row-major on disk, independent of Eigen's storage order).
std::vector<double> to_block(const Eigen::MatrixXd& m);
Eigen::MatrixXd from_block(const std::vector<double>& v, Eigen::Index rows, Eigen::Index cols);
std::vector<double> to_block(const Eigen::MatrixXcd& m);  // interleaved (re, im)
Eigen::MatrixXcd from_block_complex(const std::vector<double>& v, Eigen::Index rows,
                                    Eigen::Index cols);

}  // namespace kfc::io
