#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kfc/rng.hpp"

namespace kfc {

// Columnar store of offline transitions (s_t, a_t, r_t, s_{t+1}).
// On disk: "KFD1" container, see docs in io.hpp.
struct Dataset {
    int state_dim = 0;
    int action_dim = 0;
    Eigen::MatrixXd states_t;   // (n, state_dim)
    Eigen::MatrixXd actions;    // (n, action_dim), physical action values
    Eigen::VectorXd rewards;    // (n)
    Eigen::MatrixXd states_t1;  // (n, state_dim)
    std::vector<int> position_indices;
    std::vector<int> velocity_indices;
    std::string env_name;
    std::uint64_t seed = 0;

    std::size_t size() const { return static_cast<std::size_t>(states_t.rows()); }
    bool empty() const { return size() == 0; }

    Dataset subsample(std::size_t n, std::uint64_t seed) const;
};

void save_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace kfc
