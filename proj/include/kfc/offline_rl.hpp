#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kfc/dataset.hpp"
#include "kfc/envs.hpp"
#include "kfc/koopman.hpp"
#include "kfc/nnet.hpp"
#include "kfc/symmetry.hpp"

namespace kfc::rl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct CqlConfig {
    double gamma = 0.99;
    double tau = 5e-3;          // target Polyak coefficient
    double alpha = 0.2;         // fixed entropy weight
    double alpha_tilde = 1.0;   // CQL regularizer weight (Lagrange-trained)
    double lagrange_threshold = 10.0;
    double lagrange_lr = 3e-4;
    double policy_lr = 1e-4;
    double q_lr = 3e-4;
    int batch_size = 256;
    int bc_warmup_steps = 2000;   // full-scale reference value is 40000
    int train_steps = 5000;
    std::vector<int> hidden = {64, 64};  // full-scale reference is {256, 256, 256}
    std::uint64_t seed = 0;
};

// Discrete-action CQL state: Q net and target map state -> per-action values,
// the policy maps state -> action logits.
struct CqlLearner {
    nnet::Mlp q_net, target_q_net, policy_net;
    nnet::AdamState q_opt, policy_opt;
    double alpha_tilde = 1.0;
    nnet::AdamTensor alpha_tilde_opt;
    std::int64_t step = 0;

    static CqlLearner make(int state_dim, int n_actions, const CqlConfig& cfg);
    int n_actions() const { return q_net.out_dim(); }
    int greedy_action(const VectorXd& s) const;
};

struct CqlLossResult {
    double loss = 0.0;
    double bellman_loss = 0.0;
    double cql_gap = 0.0;  // logsumexp_a Q - E_{a~pi} Q, batch mean
    nnet::Gradients q_grads;
};

// Bellman residual on (already augmented) states plus the conservative
// regularizer weighted by the current alpha_tilde. Does not mutate the
// learner. `action_idx` holds the dataset action indices.
CqlLossResult cql_loss(const CqlLearner& learner, const MatrixXd& s_t,
                       const std::vector<int>& action_idx, const VectorXd& r,
                       const MatrixXd& s_t1, const CqlConfig& cfg);

struct PolicyLossResult {
    double loss = 0.0;
    double entropy = 0.0;
    nnet::Gradients policy_grads;
};

// Entropy-regularized policy improvement with exact action enumeration.
PolicyLossResult policy_loss(const CqlLearner& learner, const MatrixXd& s_t,
                             const CqlConfig& cfg);

struct TrainLogRecord {
    std::int64_t step = 0;
    double q_loss = 0.0;
    double bellman_loss = 0.0;
    double cql_gap = 0.0;
    double policy_loss = 0.0;
    double policy_entropy = 0.0;
    double alpha_tilde = 0.0;
    double mean_q = 0.0;
    int aug_fallbacks = 0;
};

struct TrainLog {
    std::vector<TrainLogRecord> records;
};

// Full training loop: BC warmup, then alternating Q / policy updates on
// freshly augmented batches. `model` may be null for modes that do not need
// the Koopman model (none, gaussian).
CqlLearner train_agent(const Dataset& dataset, const koopman::KoopmanForwardModel* model,
                       const symmetry::AugmentConfig& aug_cfg, const CqlConfig& cql_cfg,
                       const std::vector<VectorXd>& action_set, TrainLog* log = nullptr);

struct EvalResult {
    double mean_return = 0.0;
    double std_return = 0.0;
};

// Greedy deterministic rollouts with the environment's termination predicate.
EvalResult evaluate_policy(const envs::Environment& env, const CqlLearner& learner, int episodes,
                           int max_steps, std::uint64_t seed);

void save_policy(const std::filesystem::path& path, const CqlLearner& learner, int state_dim,
                 const std::string& config_echo_json, std::uint64_t seed);
CqlLearner load_policy(const std::filesystem::path& path, const CqlConfig& cfg);

}  // namespace kfc::rl
