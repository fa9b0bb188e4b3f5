#include "kfc/offline_rl.hpp"

#include <algorithm>
#include <cmath>

#include "kfc/errors.hpp"
#include "kfc/io.hpp"
#include "kfc/version.hpp"

namespace kfc::rl {

namespace {

std::vector<int> net_dims(int in, const std::vector<int>& hidden, int out) {
    std::vector<int> dims = {in};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(out);
    return dims;
}

// Row-wise softmax with the usual max shift.
MatrixXd softmax(const MatrixXd& logits) {
    MatrixXd p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
    return p.array().colwise() / p.rowwise().sum().array();
}

VectorXd logsumexp_rows(const MatrixXd& m) {
    const VectorXd mx = m.rowwise().maxCoeff();
    return mx.array() + ((m.colwise() - mx).array().exp().rowwise().sum()).log();
}

}  // namespace

CqlLearner CqlLearner::make(int state_dim, int n_actions, const CqlConfig& cfg) {
    Rng rng(cfg.seed);
    CqlLearner l;
    l.q_net = nnet::Mlp::make(net_dims(state_dim, cfg.hidden, n_actions), nnet::Activation::Relu, rng);
    l.target_q_net = l.q_net;
    l.policy_net =
        nnet::Mlp::make(net_dims(state_dim, cfg.hidden, n_actions), nnet::Activation::Relu, rng);
    l.q_opt = nnet::AdamState::for_net(l.q_net, cfg.q_lr);
    l.policy_opt = nnet::AdamState::for_net(l.policy_net, cfg.policy_lr);
    l.alpha_tilde = cfg.alpha_tilde;
    l.alpha_tilde_opt = nnet::AdamTensor::like(MatrixXd::Zero(1, 1), cfg.lagrange_lr);
    return l;
}

int CqlLearner::greedy_action(const VectorXd& s) const {
    Eigen::Index best = 0;
    nnet::forward(policy_net, s.transpose()).row(0).maxCoeff(&best);
    return static_cast<int>(best);
}

CqlLossResult cql_loss(const CqlLearner& learner, const MatrixXd& s_t,
                       const std::vector<int>& action_idx, const VectorXd& r,
                       const MatrixXd& s_t1, const CqlConfig& cfg) {
    const auto b = s_t.rows();
    const int na = learner.q_net.out_dim();
    if (static_cast<Eigen::Index>(action_idx.size()) != b || r.size() != b || s_t1.rows() != b) {
        throw DimensionMismatch("cql_loss: batch shapes disagree");
    }

    // Target: r + gamma * E_{a~pi}[Q_hat(s', a) - alpha log pi(a|s')].
    // alpha = 0 degenerates to the greedy (max) backup.
    const MatrixXd target_q = nnet::forward(learner.target_q_net, s_t1);
    VectorXd v_next(b);
    if (cfg.alpha > 0.0) {
        const MatrixXd logits1 = nnet::forward(learner.policy_net, s_t1);
        const MatrixXd pi1 = softmax(logits1);
        const MatrixXd log_pi1 = pi1.array().max(1e-300).log();
        v_next = (pi1.array() * (target_q.array() - cfg.alpha * log_pi1.array()))
                     .rowwise()
                     .sum();
    } else {
        v_next = target_q.rowwise().maxCoeff();
    }
    const VectorXd y = r + cfg.gamma * v_next;

    nnet::ForwardCache cache;
    const MatrixXd q = nnet::forward_cached(learner.q_net, s_t, cache);

    CqlLossResult res;
    MatrixXd upstream = MatrixXd::Zero(b, na);
    const double bn = static_cast<double>(b);

    double bellman = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const double diff = q(i, action_idx[static_cast<std::size_t>(i)]) - y(i);
        bellman += diff * diff;
        upstream(i, action_idx[static_cast<std::size_t>(i)]) += 2.0 * diff / bn;
    }
    res.bellman_loss = bellman / bn;

    // Conservative gap: logsumexp_a Q(s,a) - E_{a~pi} Q(s,a); pi held fixed.
    const MatrixXd pi = softmax(nnet::forward(learner.policy_net, s_t));
    const VectorXd lse = logsumexp_rows(q);
    const VectorXd eq = (pi.array() * q.array()).rowwise().sum();
    res.cql_gap = (lse - eq).mean();
    const MatrixXd softq = softmax(q);
    upstream += learner.alpha_tilde / bn * (softq - pi);

    res.loss = res.bellman_loss + learner.alpha_tilde * (res.cql_gap - cfg.lagrange_threshold);
    if (!std::isfinite(res.loss)) throw NonFiniteLoss("non-finite CQL loss");
    res.q_grads = nnet::Gradients::zeros_like(learner.q_net);
    nnet::backward(learner.q_net, cache, upstream, res.q_grads);
    return res;
}

PolicyLossResult policy_loss(const CqlLearner& learner, const MatrixXd& s_t,
                             const CqlConfig& cfg) {
    const auto b = s_t.rows();
    const double bn = static_cast<double>(b);

    const MatrixXd q = nnet::forward(learner.q_net, s_t);
    nnet::ForwardCache cache;
    const MatrixXd logits = nnet::forward_cached(learner.policy_net, s_t, cache);
    const MatrixXd pi = softmax(logits);
    const MatrixXd log_pi = pi.array().max(1e-300).log();

    // J = E_pi[Q] + alpha H(pi), maximized; exact enumeration over actions.
    const VectorXd eq = (pi.array() * q.array()).rowwise().sum();
    const VectorXd g = (pi.array() * log_pi.array()).rowwise().sum();  // -H per row
    PolicyLossResult res;
    res.loss = -(eq.array() - cfg.alpha * g.array()).mean();
    res.entropy = -g.mean();

    MatrixXd upstream(b, pi.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index a = 0; a < pi.cols(); ++a) {
            const double dj = pi(i, a) * ((q(i, a) - eq(i)) -
                                          cfg.alpha * (log_pi(i, a) - g(i)));
            upstream(i, a) = -dj / bn;
        }
    }
    if (!std::isfinite(res.loss)) throw NonFiniteLoss("non-finite policy loss");
    res.policy_grads = nnet::Gradients::zeros_like(learner.policy_net);
    nnet::backward(learner.policy_net, cache, upstream, res.policy_grads);
    return res;
}

namespace {

void polyak(nnet::Mlp& target, const nnet::Mlp& online, double tau) {
    for (std::size_t l = 0; l < target.layers.size(); ++l) {
        target.layers[l].w = (1.0 - tau) * target.layers[l].w + tau * online.layers[l].w;
        target.layers[l].b = (1.0 - tau) * target.layers[l].b + tau * online.layers[l].b;
    }
}

int nearest_action(const std::vector<VectorXd>& action_set, const VectorXd& a) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < action_set.size(); ++i) {
        const double d = (action_set[i] - a).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace

CqlLearner train_agent(const Dataset& dataset, const koopman::KoopmanForwardModel* model,
                       const symmetry::AugmentConfig& aug_cfg, const CqlConfig& cql_cfg,
                       const std::vector<VectorXd>& action_set, TrainLog* log) {
    if (dataset.empty()) throw DimensionMismatch("train_agent: dataset is empty");
    const bool needs_model = aug_cfg.mode != symmetry::AugmentMode::None &&
                             aug_cfg.mode != symmetry::AugmentMode::Gaussian;
    if (needs_model && model == nullptr) {
        throw ValidationError("train_agent: augmentation mode requires a Koopman model");
    }
    if (model && model->state_dim != dataset.state_dim) {
        throw DimensionMismatch("train_agent: model/dataset state dims differ");
    }

    const int na = static_cast<int>(action_set.size());
    CqlLearner learner = CqlLearner::make(dataset.state_dim, na, cql_cfg);

    std::vector<int> action_idx(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        action_idx[i] =
            nearest_action(action_set, dataset.actions.row(static_cast<Eigen::Index>(i)).transpose());
    }

    std::optional<symmetry::GeneratorCache> cache;
    if (model) cache.emplace(*model, aug_cfg.mode);

    const int total_steps = cql_cfg.bc_warmup_steps + cql_cfg.train_steps;
    double last_q_loss = 0.0, last_bellman = 0.0, last_gap = 0.0, last_policy = 0.0,
           last_entropy = 0.0, last_mean_q = 0.0;

    for (int step = 0; step < total_steps; ++step) {
        // Batch sampling and augmentation draws are indexed by global step so
        // identical configs replay identically. Row sampling uses its own
        // stream so the minibatch sequence is independent of the mode.
        const Rng step_rng = Rng(cql_cfg.seed).fork(static_cast<std::uint64_t>(step) + 1000003);
        Rng row_rng = step_rng.fork(1);
        Rng rng = step_rng.fork(2);
        const auto bsz = static_cast<Eigen::Index>(cql_cfg.batch_size);
        MatrixXd s_t(bsz, dataset.state_dim), s_t1(bsz, dataset.state_dim);
        VectorXd r(bsz);
        std::vector<int> a_idx(static_cast<std::size_t>(bsz));

        for (Eigen::Index i = 0; i < bsz; ++i) {
            const auto row = static_cast<Eigen::Index>(row_rng.index(dataset.size()));
            const VectorXd st = dataset.states_t.row(row).transpose();
            const VectorXd st1 = dataset.states_t1.row(row).transpose();
            const VectorXd a = dataset.actions.row(row).transpose();
            if (aug_cfg.mode == symmetry::AugmentMode::None) {
                s_t.row(i) = st.transpose();
                s_t1.row(i) = st1.transpose();
            } else {
                // Augmentation touches states only; action and reward are
                // consumed bitwise from the dataset.
                static const koopman::KoopmanForwardModel dummy{};
                const symmetry::SymmetryGenerator* gen =
                    cache ? cache->get(a) : nullptr;
                const auto pair = symmetry::augment_tuple(model ? *model : dummy, st, a, st1,
                                                          aug_cfg, rng, gen);
                s_t.row(i) = pair.s_tilde_t.transpose();
                s_t1.row(i) = pair.s_tilde_t1.transpose();
            }
            r(i) = dataset.rewards(row);
            a_idx[static_cast<std::size_t>(i)] = action_idx[static_cast<std::size_t>(row)];
        }

        // Q update.
        auto q_res = cql_loss(learner, s_t, a_idx, r, s_t1, cql_cfg);
        nnet::adam_step(learner.q_net, q_res.q_grads, learner.q_opt);
        last_q_loss = q_res.loss;
        last_bellman = q_res.bellman_loss;
        last_gap = q_res.cql_gap;

        // Lagrange ascent on the constraint gap.
        MatrixXd at(1, 1);
        at(0, 0) = learner.alpha_tilde;
        MatrixXd at_grad(1, 1);
        at_grad(0, 0) = -(q_res.cql_gap - cql_cfg.lagrange_threshold);
        learner.alpha_tilde_opt.update(at, at_grad);
        learner.alpha_tilde = std::clamp(at(0, 0), 0.0, 1e6);

        // Policy update: behavioral cloning during warmup, then improvement.
        if (step < cql_cfg.bc_warmup_steps) {
            nnet::ForwardCache pc;
            const MatrixXd logits = nnet::forward_cached(learner.policy_net, s_t, pc);
            const MatrixXd pi = softmax(logits);
            MatrixXd upstream = pi / static_cast<double>(bsz);
            double bc = 0.0;
            for (Eigen::Index i = 0; i < bsz; ++i) {
                const int ai = a_idx[static_cast<std::size_t>(i)];
                upstream(i, ai) -= 1.0 / static_cast<double>(bsz);
                bc -= std::log(std::max(pi(i, ai), 1e-300));
            }
            nnet::Gradients pg = nnet::Gradients::zeros_like(learner.policy_net);
            nnet::backward(learner.policy_net, pc, upstream, pg);
            nnet::adam_step(learner.policy_net, pg, learner.policy_opt);
            last_policy = bc / static_cast<double>(bsz);
            last_entropy = 0.0;
        } else {
            auto p_res = policy_loss(learner, s_t, cql_cfg);
            nnet::adam_step(learner.policy_net, p_res.policy_grads, learner.policy_opt);
            last_policy = p_res.loss;
            last_entropy = p_res.entropy;
        }

        polyak(learner.target_q_net, learner.q_net, cql_cfg.tau);
        ++learner.step;

        if (log && (step % 100 == 0 || step + 1 == total_steps)) {
            last_mean_q = nnet::forward(learner.q_net, s_t).mean();
            log->records.push_back({learner.step, last_q_loss, last_bellman, last_gap, last_policy,
                                    last_entropy, learner.alpha_tilde, last_mean_q,
                                    cache ? cache->fallback_count() : 0});
        }
    }
    return learner;
}

EvalResult evaluate_policy(const envs::Environment& env, const CqlLearner& learner, int episodes,
                           int max_steps, std::uint64_t seed) {
    if (episodes <= 0) throw ValidationError("evaluate_policy: episodes must be positive");
    const auto actions = env.physical_actions();
    std::vector<double> returns;
    for (int ep = 0; ep < episodes; ++ep) {
        Rng rng = Rng(seed).fork(static_cast<std::uint64_t>(ep) + 77);
        VectorXd s(env.state_dim());
        for (int i = 0; i < env.state_dim(); ++i) s(i) = rng.uniform(-0.05, 0.05);
        double ret = 0.0;
        for (int t = 0; t < max_steps; ++t) {
            const int a = learner.greedy_action(s);
            s = env.step(s, actions[static_cast<std::size_t>(a)]);
            ret += 1.0;
            if (env.terminated(s)) break;
        }
        returns.push_back(ret);
    }
    EvalResult res;
    for (double r : returns) res.mean_return += r;
    res.mean_return /= static_cast<double>(returns.size());
    double var = 0.0;
    for (double r : returns) var += (r - res.mean_return) * (r - res.mean_return);
    res.std_return = std::sqrt(var / static_cast<double>(returns.size()));
    return res;
}

namespace {

void append_net_blocks(std::vector<std::vector<double>>& blocks, const nnet::Mlp& net) {
    for (const auto& layer : net.layers) {
        blocks.push_back(io::to_block(layer.w));
        blocks.push_back(io::to_block(MatrixXd(layer.b)));
    }
}

io::json mlp_dims(const nnet::Mlp& net) {
    std::vector<int> dims = {net.in_dim()};
    for (const auto& layer : net.layers) dims.push_back(static_cast<int>(layer.w.rows()));
    return dims;
}

nnet::Mlp read_net(const std::vector<std::vector<double>>& blocks, std::size_t& bi,
                   const std::vector<int>& dims) {
    nnet::Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        nnet::Layer layer;
        layer.w = io::from_block(blocks[bi++], dims[l + 1], dims[l]);
        layer.b = io::from_block(blocks[bi++], dims[l + 1], 1);
        layer.act = (l + 2 == dims.size()) ? nnet::Activation::Identity : nnet::Activation::Relu;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

std::vector<std::size_t> net_block_sizes(const std::vector<int>& dims) {
    std::vector<std::size_t> sizes;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        sizes.push_back(static_cast<std::size_t>(dims[l + 1]) * static_cast<std::size_t>(dims[l]));
        sizes.push_back(static_cast<std::size_t>(dims[l + 1]));
    }
    return sizes;
}

}  // namespace

void save_policy(const std::filesystem::path& path, const CqlLearner& learner, int state_dim,
                 const std::string& config_echo_json, std::uint64_t seed) {
    io::Container c;
    c.magic = "KFP1";
    c.header = {{"state_dim", state_dim},
                {"n_actions", learner.n_actions()},
                {"policy_dims", mlp_dims(learner.policy_net)},
                {"q_dims", mlp_dims(learner.q_net)},
                {"alpha_tilde", learner.alpha_tilde},
                {"seed", seed},
                {"creator_version", kVersion}};
    c.header["config"] =
        config_echo_json.empty() ? io::json(nullptr) : io::json::parse(config_echo_json);
    append_net_blocks(c.blocks, learner.policy_net);
    append_net_blocks(c.blocks, learner.q_net);
    io::write_container(path, c);
}

CqlLearner load_policy(const std::filesystem::path& path, const CqlConfig& cfg) {
    const auto h = io::read_header(path, "KFP1");
    const auto policy_dims = h.at("policy_dims").get<std::vector<int>>();
    const auto q_dims = h.at("q_dims").get<std::vector<int>>();
    auto sizes = net_block_sizes(policy_dims);
    const auto q_sizes = net_block_sizes(q_dims);
    sizes.insert(sizes.end(), q_sizes.begin(), q_sizes.end());
    auto c = io::read_container(path, "KFP1", sizes);

    CqlLearner l = CqlLearner::make(h.at("state_dim").get<int>(), h.at("n_actions").get<int>(), cfg);
    std::size_t bi = 0;
    l.policy_net = read_net(c.blocks, bi, policy_dims);
    l.q_net = read_net(c.blocks, bi, q_dims);
    l.target_q_net = l.q_net;
    l.alpha_tilde = h.at("alpha_tilde").get<double>();
    return l;
}

}  // namespace kfc::rl
