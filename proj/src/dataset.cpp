#include "kfc/dataset.hpp"

#include <algorithm>
#include <numeric>

#include "kfc/errors.hpp"
#include "kfc/io.hpp"
#include "kfc/version.hpp"

namespace kfc {

Dataset Dataset::subsample(std::size_t n, std::uint64_t sub_seed) const {
    Dataset out = *this;
    n = std::min(n, size());
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(sub_seed);
    // Fisher-Yates prefix shuffle.
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.index(idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
    out.states_t.resize(static_cast<Eigen::Index>(n), state_dim);
    out.actions.resize(static_cast<Eigen::Index>(n), action_dim);
    out.rewards.resize(static_cast<Eigen::Index>(n));
    out.states_t1.resize(static_cast<Eigen::Index>(n), state_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = static_cast<Eigen::Index>(idx[i]);
        out.states_t.row(static_cast<Eigen::Index>(i)) = states_t.row(r);
        out.actions.row(static_cast<Eigen::Index>(i)) = actions.row(r);
        out.rewards(static_cast<Eigen::Index>(i)) = rewards(r);
        out.states_t1.row(static_cast<Eigen::Index>(i)) = states_t1.row(r);
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
    io::Container c;
    c.magic = "KFD1";
    c.header = {{"state_dim", d.state_dim},
                {"action_dim", d.action_dim},
                {"n_transitions", d.size()},
                {"position_indices", d.position_indices},
                {"velocity_indices", d.velocity_indices},
                {"env_name", d.env_name},
                {"seed", d.seed},
                {"creator_version", kVersion}};
    c.blocks = {io::to_block(d.states_t), io::to_block(d.actions),
                io::to_block(Eigen::MatrixXd(d.rewards)), io::to_block(d.states_t1)};
    io::write_container(path, c);
}

Dataset load_dataset(const std::filesystem::path& path) {
    // Two-phase read: header first to learn block sizes.
    const auto h = io::read_header(path, "KFD1");
    const auto n = h.at("n_transitions").get<std::size_t>();
    const auto sd = h.at("state_dim").get<int>();
    const auto ad = h.at("action_dim").get<int>();
    if (sd < 0 || ad < 0) throw ValidationError("negative dims in dataset header");

    auto c = io::read_container(
        path, "KFD1",
        {n * static_cast<std::size_t>(sd), n * static_cast<std::size_t>(ad), n,
         n * static_cast<std::size_t>(sd)});

    Dataset d;
    d.state_dim = sd;
    d.action_dim = ad;
    const auto rows = static_cast<Eigen::Index>(n);
    d.states_t = io::from_block(c.blocks[0], rows, sd);
    d.actions = io::from_block(c.blocks[1], rows, ad);
    d.rewards = io::from_block(c.blocks[2], rows, 1);
    d.states_t1 = io::from_block(c.blocks[3], rows, sd);
    d.position_indices = h.at("position_indices").get<std::vector<int>>();
    d.velocity_indices = h.at("velocity_indices").get<std::vector<int>>();
    d.env_name = h.at("env_name").get<std::string>();
    d.seed = h.at("seed").get<std::uint64_t>();
    return d;
}

}  // namespace kfc
