#include "kfc/koopman.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kfc/errors.hpp"
#include "kfc/io.hpp"
#include "kfc/linalg.hpp"
#include "kfc/version.hpp"

namespace kfc::koopman {

MatrixXd KoopmanForwardModel::k_of_a(const VectorXd& a) const {
    if (a.size() != action_dim) throw DimensionMismatch("k_of_a: action dim mismatch");
    MatrixXd k = k0;
    for (int i = 0; i < action_dim; ++i) k += a(i) * k_forcing[static_cast<std::size_t>(i)];
    return k;
}

VectorXd KoopmanForwardModel::encode(const VectorXd& s) const {
    if (s.size() != state_dim) throw DimensionMismatch("encode: state dim mismatch");
    if (identity_codec()) return s;
    return nnet::forward(*encoder, s.transpose()).transpose();
}

VectorXd KoopmanForwardModel::decode(const VectorXd& z) const {
    if (z.size() != latent_dim) throw DimensionMismatch("decode: latent dim mismatch");
    if (identity_codec()) return z;
    return nnet::forward(*decoder, z.transpose()).transpose();
}

MatrixXd KoopmanForwardModel::encode_batch(const MatrixXd& s) const {
    if (identity_codec()) return s;
    return nnet::forward(*encoder, s);
}

MatrixXd KoopmanForwardModel::decode_batch(const MatrixXd& z) const {
    if (identity_codec()) return z;
    return nnet::forward(*decoder, z);
}

VectorXd KoopmanForwardModel::predict_next(const VectorXd& s, const VectorXd& a) const {
    return decode(k_of_a(a) * encode(s));
}

VectorXd KoopmanForwardModel::reconstruct(const VectorXd& s) const {
    return decode(encode(s));
}

namespace {

// Batch latent propagation: row i of the result is K(a_i) z_i.
MatrixXd apply_k_batch(const KoopmanForwardModel& m, const MatrixXd& z, const MatrixXd& actions) {
    MatrixXd out = z * m.k0.transpose();
    for (int j = 0; j < m.action_dim; ++j) {
        out += (actions.col(j).asDiagonal() * z) * m.k_forcing[static_cast<std::size_t>(j)].transpose();
    }
    return out;
}

struct KGrads {
    MatrixXd dk0;
    std::vector<MatrixXd> dk_forcing;
};

// Given dL/d(K(a_i) z_i) rows in g, accumulate operator gradients and return dL/dz.
MatrixXd backprop_k_batch(const KoopmanForwardModel& m, const MatrixXd& z, const MatrixXd& actions,
                          const MatrixXd& g, KGrads& kg) {
    kg.dk0 = g.transpose() * z;
    kg.dk_forcing.clear();
    MatrixXd dz = g * m.k0;
    for (int j = 0; j < m.action_dim; ++j) {
        const MatrixXd za = actions.col(j).asDiagonal() * z;
        kg.dk_forcing.push_back(g.transpose() * za);
        dz += actions.col(j).asDiagonal() * (g * m.k_forcing[static_cast<std::size_t>(j)]);
    }
    return dz;
}

void check_dims(const Dataset& d) {
    if (d.empty()) throw DimensionMismatch("dataset is empty");
    if (d.states_t.cols() != d.state_dim || d.states_t1.cols() != d.state_dim ||
        d.actions.cols() != d.action_dim) {
        throw DimensionMismatch("dataset columns do not match declared dims");
    }
}

}  // namespace

KoopmanForwardModel train(const Dataset& dataset, const KoopmanTrainConfig& cfg,
                          TrainReport* report) {
    check_dims(dataset);
    if (cfg.val_fraction <= 0.0 || cfg.val_fraction >= 1.0) {
        throw ValidationError("val_fraction must lie in (0,1)");
    }

    Rng rng(cfg.seed);
    KoopmanForwardModel model;
    model.state_dim = dataset.state_dim;
    model.action_dim = dataset.action_dim;
    model.latent_dim = cfg.identity_codec ? dataset.state_dim : cfg.latent_dim;

    if (!cfg.identity_codec) {
        std::vector<int> enc_dims = {model.state_dim};
        enc_dims.insert(enc_dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
        enc_dims.push_back(model.latent_dim);
        std::vector<int> dec_dims = {model.latent_dim};
        dec_dims.insert(dec_dims.end(), cfg.hidden_dims.rbegin(), cfg.hidden_dims.rend());
        dec_dims.push_back(model.state_dim);
        model.encoder = nnet::Mlp::make(enc_dims, nnet::Activation::Relu, rng);
        model.decoder = nnet::Mlp::make(dec_dims, nnet::Activation::Relu, rng);
    }
    model.k0 = MatrixXd::Identity(model.latent_dim, model.latent_dim);
    for (int j = 0; j < model.action_dim; ++j) {
        model.k_forcing.push_back(MatrixXd::Zero(model.latent_dim, model.latent_dim));
    }

    // Seeded 70/30 split.
    const std::size_t n = dataset.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.index(i))]);
    }
    const auto n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround((1.0 - cfg.val_fraction) *
                                                                       static_cast<double>(n))));
    std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + static_cast<long>(n_train));
    std::vector<std::size_t> val_idx(idx.begin() + static_cast<long>(n_train), idx.end());

    auto gather = [&](const std::vector<std::size_t>& rows, std::size_t lo, std::size_t hi) {
        const auto b = static_cast<Eigen::Index>(hi - lo);
        MatrixXd s(b, model.state_dim), a(b, model.action_dim), s1(b, model.state_dim);
        for (std::size_t i = lo; i < hi; ++i) {
            const auto r = static_cast<Eigen::Index>(rows[i]);
            const auto o = static_cast<Eigen::Index>(i - lo);
            s.row(o) = dataset.states_t.row(r);
            a.row(o) = dataset.actions.row(r);
            s1.row(o) = dataset.states_t1.row(r);
        }
        return std::make_tuple(s, a, s1);
    };

    auto batch_loss = [&](const MatrixXd& s, const MatrixXd& a, const MatrixXd& s1) {
        const MatrixXd pred = model.decode_batch(apply_k_batch(model, model.encode_batch(s), a));
        return nnet::huber(pred, s1).loss;
    };
    auto eval_split = [&](const std::vector<std::size_t>& rows) {
        if (rows.empty()) return 0.0;
        double total = 0.0;
        std::size_t count = 0;
        for (std::size_t lo = 0; lo < rows.size(); lo += 4096) {
            const std::size_t hi = std::min(rows.size(), lo + 4096);
            auto [s, a, s1] = gather(rows, lo, hi);
            total += batch_loss(s, a, s1) * static_cast<double>(hi - lo);
            count += hi - lo;
        }
        return total / static_cast<double>(count);
    };

    nnet::AdamState enc_opt, dec_opt;
    if (!cfg.identity_codec) {
        enc_opt = nnet::AdamState::for_net(*model.encoder, cfg.lr);
        dec_opt = nnet::AdamState::for_net(*model.decoder, cfg.lr);
    }
    nnet::AdamTensor k0_opt = nnet::AdamTensor::like(model.k0, cfg.lr);
    std::vector<nnet::AdamTensor> kf_opt;
    for (const auto& kf : model.k_forcing) kf_opt.push_back(nnet::AdamTensor::like(kf, cfg.lr));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = train_idx.size(); i > 1; --i) {
            std::swap(train_idx[i - 1], train_idx[static_cast<std::size_t>(rng.index(i))]);
        }
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t lo = 0; lo < train_idx.size();
             lo += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t hi =
                std::min(train_idx.size(), lo + static_cast<std::size_t>(cfg.batch_size));
            auto [s, a, s1] = gather(train_idx, lo, hi);
            const auto b = s.rows();

            nnet::Gradients enc_g, dec_g;
            if (!cfg.identity_codec) {
                enc_g = nnet::Gradients::zeros_like(*model.encoder);
                dec_g = nnet::Gradients::zeros_like(*model.decoder);
            }
            KGrads kg;
            double loss = 0.0;

            // Forward-prediction branch: D(K(a) E(s_t)) vs s_{t+1}.
            {
                nnet::ForwardCache enc_cache, dec_cache;
                MatrixXd z = cfg.identity_codec
                                 ? s
                                 : nnet::forward_cached(*model.encoder, s, enc_cache);
                MatrixXd zk = apply_k_batch(model, z, a);
                MatrixXd pred = cfg.identity_codec
                                    ? zk
                                    : nnet::forward_cached(*model.decoder, zk, dec_cache);
                auto h = nnet::huber(pred, s1);
                loss += h.loss;
                MatrixXd dzk = h.grad;
                if (!cfg.identity_codec) {
                    nnet::Gradients g;
                    dzk = nnet::backward(*model.decoder, dec_cache, h.grad, g);
                    dec_g.accumulate(g);
                }
                MatrixXd dz = backprop_k_batch(model, z, a, dzk, kg);
                if (!cfg.identity_codec) {
                    nnet::Gradients g;
                    nnet::backward(*model.encoder, enc_cache, dz, g);
                    enc_g.accumulate(g);
                }
            }

            // Reconstruction branch: D(E(s_t + noise)) vs s_t + noise.
            if (cfg.recon_weight != 0.0 && !cfg.identity_codec) {
                MatrixXd noisy = s;
                for (Eigen::Index i = 0; i < b; ++i)
                    for (Eigen::Index j = 0; j < noisy.cols(); ++j)
                        noisy(i, j) += rng.normal(0.0, cfg.input_noise_std);
                nnet::ForwardCache enc_cache, dec_cache;
                MatrixXd z = nnet::forward_cached(*model.encoder, noisy, enc_cache);
                MatrixXd rec = nnet::forward_cached(*model.decoder, z, dec_cache);
                auto h = nnet::huber(rec, noisy);
                loss += cfg.recon_weight * h.loss;
                nnet::Gradients g;
                MatrixXd dz = nnet::backward(*model.decoder, dec_cache, h.grad, g);
                dec_g.accumulate(g, cfg.recon_weight);
                nnet::Gradients g2;
                nnet::backward(*model.encoder, enc_cache, dz, g2);
                enc_g.accumulate(g2, cfg.recon_weight);
            }

            if (!std::isfinite(loss)) {
                throw NonFiniteLoss("non-finite training loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batches));
            }
            epoch_loss += loss;
            ++batches;

            k0_opt.update(model.k0, kg.dk0);
            for (std::size_t j = 0; j < kf_opt.size(); ++j) {
                kf_opt[j].update(model.k_forcing[j], kg.dk_forcing[j]);
            }
            if (!cfg.identity_codec) {
                nnet::adam_step(*model.encoder, enc_g, enc_opt);
                nnet::adam_step(*model.decoder, dec_g, dec_opt);
            }
        }
        if (report) {
            report->train_losses.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, batches)));
            report->val_losses.push_back(eval_split(val_idx));
        }
    }
    return model;
}

KoopmanForwardModel fit_linear(const Dataset& dataset, bool* rank_warning) {
    check_dims(dataset);
    const auto n = static_cast<Eigen::Index>(dataset.size());
    const int sd = dataset.state_dim;
    const int m = dataset.action_dim;

    MatrixXd z(n, static_cast<Eigen::Index>(sd) * (m + 1));
    z.leftCols(sd) = dataset.states_t;
    for (int j = 0; j < m; ++j) {
        z.middleCols(static_cast<Eigen::Index>(sd) * (j + 1), sd) =
            dataset.actions.col(j).asDiagonal() * dataset.states_t;
    }
    Eigen::BDCSVD<MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-12);
    if (rank_warning) *rank_warning = svd.rank() < z.cols();
    const MatrixXd x = svd.solve(dataset.states_t1);  // rows: [K0^T; K1^T; ...]

    KoopmanForwardModel model;
    model.state_dim = sd;
    model.action_dim = m;
    model.latent_dim = sd;
    model.k0 = x.topRows(sd).transpose();
    for (int j = 0; j < m; ++j) {
        model.k_forcing.push_back(x.middleRows(static_cast<Eigen::Index>(sd) * (j + 1), sd).transpose());
    }
    return model;
}

namespace {

void append_net_blocks(std::vector<std::vector<double>>& blocks, const nnet::Mlp& net) {
    for (const auto& layer : net.layers) {
        blocks.push_back(io::to_block(layer.w));
        blocks.push_back(io::to_block(MatrixXd(layer.b)));
    }
}

io::json net_dims(const nnet::Mlp& net) {
    std::vector<int> dims = {net.in_dim()};
    for (const auto& layer : net.layers) dims.push_back(static_cast<int>(layer.w.rows()));
    return dims;
}

}  // namespace

void save_model(const std::filesystem::path& path, const KoopmanForwardModel& model,
                const std::string& config_echo_json, std::uint64_t seed) {
    io::Container c;
    c.magic = "KFM1";
    c.header = {{"state_dim", model.state_dim},
                {"action_dim", model.action_dim},
                {"latent_dim", model.latent_dim},
                {"codec", model.identity_codec() ? "identity" : "mlp"},
                {"seed", seed},
                {"creator_version", kVersion}};
    if (!model.identity_codec()) {
        c.header["encoder_dims"] = net_dims(*model.encoder);
        c.header["decoder_dims"] = net_dims(*model.decoder);
    }
    c.header["config"] =
        config_echo_json.empty() ? io::json(nullptr) : io::json::parse(config_echo_json);

    c.blocks.push_back(io::to_block(model.k0));
    for (const auto& kf : model.k_forcing) c.blocks.push_back(io::to_block(kf));
    if (!model.identity_codec()) {
        append_net_blocks(c.blocks, *model.encoder);
        append_net_blocks(c.blocks, *model.decoder);
    }
    io::write_container(path, c);
}

KoopmanForwardModel load_model(const std::filesystem::path& path) {
    const auto h = io::read_header(path, "KFM1");
    KoopmanForwardModel model;
    model.state_dim = h.at("state_dim").get<int>();
    model.action_dim = h.at("action_dim").get<int>();
    model.latent_dim = h.at("latent_dim").get<int>();
    const bool identity = h.at("codec").get<std::string>() == "identity";

    std::vector<std::size_t> sizes;
    const auto nn = static_cast<std::size_t>(model.latent_dim) *
                    static_cast<std::size_t>(model.latent_dim);
    for (int j = 0; j <= model.action_dim; ++j) sizes.push_back(nn);
    std::vector<int> enc_dims, dec_dims;
    if (!identity) {
        enc_dims = h.at("encoder_dims").get<std::vector<int>>();
        dec_dims = h.at("decoder_dims").get<std::vector<int>>();
        for (const auto& dims : {enc_dims, dec_dims}) {
            for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
                sizes.push_back(static_cast<std::size_t>(dims[l + 1]) *
                                static_cast<std::size_t>(dims[l]));
                sizes.push_back(static_cast<std::size_t>(dims[l + 1]));
            }
        }
    }
    auto c = io::read_container(path, "KFM1", sizes);

    std::size_t bi = 0;
    model.k0 = io::from_block(c.blocks[bi++], model.latent_dim, model.latent_dim);
    for (int j = 0; j < model.action_dim; ++j) {
        model.k_forcing.push_back(io::from_block(c.blocks[bi++], model.latent_dim, model.latent_dim));
    }
    auto read_net = [&](const std::vector<int>& dims) {
        nnet::Mlp net;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            nnet::Layer layer;
            layer.w = io::from_block(c.blocks[bi++], dims[l + 1], dims[l]);
            layer.b = io::from_block(c.blocks[bi++], dims[l + 1], 1);
            layer.act = (l + 2 == dims.size()) ? nnet::Activation::Identity : nnet::Activation::Relu;
            net.layers.push_back(std::move(layer));
        }
        return net;
    };
    if (!identity) {
        model.encoder = read_net(enc_dims);
        model.decoder = read_net(dec_dims);
    }
    return model;
}

}  // namespace kfc::koopman
