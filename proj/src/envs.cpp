#include "kfc/envs.hpp"

#include <cmath>

#include "kfc/errors.hpp"
#include "kfc/linalg.hpp"

namespace kfc::envs {

std::vector<VectorXd> CartpoleEnv::physical_actions() const {
    VectorXd left(1), right(1);
    left << -1.0;
    right << 1.0;
    return {left, right};
}

VectorXd CartpoleEnv::step(const VectorXd& s, const VectorXd& a_physical) const {
    if (s.size() != 4 || a_physical.size() != 1) {
        throw DimensionMismatch("cartpole step: bad state or action shape");
    }
    const double x = s(0), x_dot = s(1), theta = s(2), theta_dot = s(3);
    const double force = p_.force_mag * a_physical(0);
    const double cos_t = std::cos(theta);
    const double sin_t = std::sin(theta);
    const double total_mass = p_.cart_mass + p_.pole_mass;
    const double polemass_length = p_.pole_mass * p_.half_length;

    const double temp = (force + polemass_length * theta_dot * theta_dot * sin_t) / total_mass;
    const double theta_acc =
        (p_.gravity * sin_t - cos_t * temp) /
        (p_.half_length * (4.0 / 3.0 - p_.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;

    VectorXd next(4);
    next << x + p_.dt * x_dot, x_dot + p_.dt * x_acc, theta + p_.dt * theta_dot,
        theta_dot + p_.dt * theta_acc;
    return next;
}

SyntheticBilinearEnv::SyntheticBilinearEnv(MatrixXd k0, std::vector<MatrixXd> k_forcing)
    : k0_(std::move(k0)), k_forcing_(std::move(k_forcing)) {
    if (k0_.rows() != k0_.cols()) throw DimensionMismatch("synthetic env: K0 must be square");
    for (const auto& kf : k_forcing_) {
        if (kf.rows() != k0_.rows() || kf.cols() != k0_.cols()) {
            throw DimensionMismatch("synthetic env: forcing matrix shape mismatch");
        }
    }
    // Stability guard over the action box corners {-1, +1}^m.
    const int m = static_cast<int>(k_forcing_.size());
    for (int corner = 0; corner < (1 << m); ++corner) {
        MatrixXd k = k0_;
        for (int j = 0; j < m; ++j) k += ((corner >> j) & 1 ? 1.0 : -1.0) * k_forcing_[static_cast<std::size_t>(j)];
        const auto radius = k.eigenvalues().cwiseAbs().maxCoeff();
        if (radius > 1.05) {
            throw ValidationError("synthetic env: spectral radius " + std::to_string(radius) +
                                  " exceeds stability bound 1.05");
        }
        if (m == 0) break;
    }
}

std::vector<VectorXd> SyntheticBilinearEnv::physical_actions() const {
    const int m = action_dim();
    std::vector<VectorXd> acts;
    if (m == 0) {
        acts.emplace_back(VectorXd::Zero(0));
        return acts;
    }
    for (int corner = 0; corner < (1 << m); ++corner) {
        VectorXd a(m);
        for (int j = 0; j < m; ++j) a(j) = (corner >> j) & 1 ? 1.0 : -1.0;
        acts.push_back(a);
    }
    return acts;
}

VectorXd SyntheticBilinearEnv::step(const VectorXd& s, const VectorXd& a_physical) const {
    if (s.size() != k0_.rows() || a_physical.size() != action_dim()) {
        throw DimensionMismatch("synthetic env step: bad shapes");
    }
    MatrixXd k = k0_;
    for (int j = 0; j < action_dim(); ++j) k += a_physical(j) * k_forcing_[static_cast<std::size_t>(j)];
    return k * s;
}

std::vector<int> SyntheticBilinearEnv::position_indices() const {
    std::vector<int> all(static_cast<std::size_t>(state_dim()));
    for (int i = 0; i < state_dim(); ++i) all[static_cast<std::size_t>(i)] = i;
    return all;
}

int expert_action(const ExpertPolicyConfig& cfg, const VectorXd& s, double z) {
    const double score = cfg.weights.dot(s.head<4>()) + z;
    return score >= 0.0 ? 1 : 0;  // Theta(0) = 1
}

Dataset collect(const CartpoleEnv& env, const ExpertPolicyConfig& cfg, int episodes, int steps,
                std::uint64_t seed, bool truncate_at_termination,
                std::vector<int>* episode_lengths) {
    if (episodes < 0 || steps < 0) throw ValidationError("collect: counts must be nonnegative");
    Dataset d;
    d.state_dim = env.state_dim();
    d.action_dim = env.action_dim();
    d.env_name = env.name();
    d.seed = seed;
    d.position_indices = env.position_indices();
    d.velocity_indices = env.velocity_indices();

    const auto cap = static_cast<Eigen::Index>(episodes) * steps;
    d.states_t.resize(cap, d.state_dim);
    d.actions.resize(cap, d.action_dim);
    d.rewards.resize(cap);
    d.states_t1.resize(cap, d.state_dim);
    if (episode_lengths) episode_lengths->clear();

    const auto actions = env.physical_actions();
    Eigen::Index row = 0;
    for (int ep = 0; ep < episodes; ++ep) {
        Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(ep));
        const double z = rng.uniform(cfg.z_low, cfg.z_high);
        VectorXd s(4);
        for (int i = 0; i < 4; ++i) s(i) = rng.uniform(-0.05, 0.05);
        int len = 0;
        for (int t = 0; t < steps; ++t) {
            const int gym_a = expert_action(cfg, s, z);
            const VectorXd a_phys = actions[static_cast<std::size_t>(gym_a)];
            const VectorXd s1 = env.step(s, a_phys);
            d.states_t.row(row) = s.transpose();
            d.actions.row(row) = a_phys.transpose();
            d.rewards(row) = 1.0;
            d.states_t1.row(row) = s1.transpose();
            ++row;
            ++len;
            s = s1;
            if (truncate_at_termination && env.terminated(s)) break;
        }
        if (episode_lengths) episode_lengths->push_back(len);
    }
    d.states_t.conservativeResize(row, Eigen::NoChange);
    d.actions.conservativeResize(row, Eigen::NoChange);
    d.rewards.conservativeResize(row);
    d.states_t1.conservativeResize(row, Eigen::NoChange);
    return d;
}

double mean_episode_survival(const CartpoleEnv& env, const Dataset& d, int episodes, int steps) {
    if (episodes <= 0 || steps <= 0) return 0.0;
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        int alive = steps;
        for (int t = 0; t < steps; ++t) {
            const auto row = static_cast<Eigen::Index>(ep) * steps + t;
            if (env.terminated(d.states_t1.row(row).transpose())) {
                alive = t + 1;
                break;
            }
        }
        total += static_cast<double>(alive) / static_cast<double>(steps);
    }
    return total / static_cast<double>(episodes);
}

namespace {

double split_norm(const VectorXd& v, const std::vector<int>& idx) {
    double sum = 0.0;
    for (int i : idx) sum += v(i) * v(i);
    return std::sqrt(sum);
}

}  // namespace

FidelityReport fidelity_eval(const Environment& env, const koopman::KoopmanForwardModel& model,
                             const Dataset& dataset, const symmetry::AugmentConfig& cfg,
                             std::size_t samples, bool matched_gaussian) {
    FidelityReport rep;
    if (dataset.empty()) return rep;
    samples = std::min(samples, dataset.size());

    const auto pos_idx = env.position_indices();
    const auto vel_idx = env.velocity_indices();

    symmetry::GeneratorCache cache(model, cfg.mode);

    // Sampled tuple indices, fixed per seed and reused by the matched baseline.
    Rng pick(Rng(cfg.seed).fork(0x5eed));
    std::vector<std::size_t> rows(samples);
    for (auto& r : rows) r = static_cast<std::size_t>(pick.index(dataset.size()));

    auto run_mode = [&](const symmetry::AugmentConfig& mode_cfg, double* mean_ds, double* mean_de,
                        bool record_rows) {
        double ds = 0.0, de = 0.0, de_pos = 0.0, de_vel = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(rows[i]);
            Rng rng = Rng(mode_cfg.seed).fork(i + 1);
            const VectorXd s_t = dataset.states_t.row(r).transpose();
            const VectorXd a = dataset.actions.row(r).transpose();
            const VectorXd s_t1 = dataset.states_t1.row(r).transpose();
            const auto pair =
                symmetry::augment_tuple(model, s_t, a, s_t1, mode_cfg, rng, cache);
            const VectorXd err = pair.s_tilde_t1 - env.step(pair.s_tilde_t, a);
            ds += pair.delta_s;
            de += err.norm();
            const double ep = split_norm(err, pos_idx);
            const double ev = split_norm(err, vel_idx);
            de_pos += ep;
            de_vel += ev;
            if (record_rows) rep.rows.push_back({rows[i], pair.delta_s, ep, ev});
        }
        const double n = static_cast<double>(rows.size());
        *mean_ds = ds / n;
        *mean_de = de / n;
        if (record_rows) {
            rep.mean_delta_e_pos = de_pos / n;
            rep.mean_delta_e_vel = de_vel / n;
        }
    };

    run_mode(cfg, &rep.mean_delta_s, &rep.mean_delta_e, true);
    rep.fallback_count = cache.fallback_count();

    if (matched_gaussian && rep.mean_delta_s > 0.0 && cfg.mode != symmetry::AugmentMode::Gaussian) {
        // Delta-S is monotone in the Gaussian std, so bisection converges;
        // 2% relative tolerance on the mean.
        symmetry::AugmentConfig gcfg = cfg;
        gcfg.mode = symmetry::AugmentMode::Gaussian;
        double lo = 0.0, hi = 1e-12;
        double ds = 0.0, de = 0.0;
        auto eval_std = [&](double std) {
            gcfg.gaussian_std = std;
            run_mode(gcfg, &ds, &de, false);
            return ds;
        };
        while (eval_std(hi) < rep.mean_delta_s && hi < 1e12) hi *= 2.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (eval_std(mid) < rep.mean_delta_s) lo = mid;
            else hi = mid;
            if (std::abs(ds - rep.mean_delta_s) <= 0.02 * rep.mean_delta_s) break;
        }
        rep.matched_gaussian_std = gcfg.gaussian_std;
        rep.matched_mean_delta_s = ds;
        rep.matched_mean_delta_e = de;
    }
    return rep;
}

}  // namespace kfc::envs
