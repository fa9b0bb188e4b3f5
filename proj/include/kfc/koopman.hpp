#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "kfc/dataset.hpp"
#include "kfc/nnet.hpp"

namespace kfc::koopman {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Encoder/decoder plus the bilinear operator family {K_0, K_1..K_m}.
// An absent codec means identity observables (latent_dim == state_dim).
struct KoopmanForwardModel {
    std::optional<nnet::Mlp> encoder;
    std::optional<nnet::Mlp> decoder;
    MatrixXd k0;                     // (N, N)
    std::vector<MatrixXd> k_forcing; // one (N, N) matrix per action dimension
    int latent_dim = 0;
    int state_dim = 0;
    int action_dim = 0;

    bool identity_codec() const { return !encoder.has_value(); }

    // K(a) = K_0 + sum_i a_i K_i
    MatrixXd k_of_a(const VectorXd& a) const;

    VectorXd encode(const VectorXd& s) const;
    VectorXd decode(const VectorXd& z) const;
    MatrixXd encode_batch(const MatrixXd& s) const;
    MatrixXd decode_batch(const MatrixXd& z) const;

    // D(K(a) E(s))
    VectorXd predict_next(const VectorXd& s, const VectorXd& a) const;
    // D(E(s))
    VectorXd reconstruct(const VectorXd& s) const;
};

struct KoopmanTrainConfig {
    int latent_dim = 32;
    std::vector<int> hidden_dims = {128, 128};
    bool identity_codec = false;
    int epochs = 75;
    int batch_size = 256;
    double lr = 3e-4;
    double recon_weight = 1.0;      // gamma_2
    double input_noise_std = 1e-2;  // s_eps
    double val_fraction = 0.30;
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> train_losses;  // per epoch, mean over batches
    std::vector<double> val_losses;
};

KoopmanForwardModel train(const Dataset& dataset, const KoopmanTrainConfig& cfg,
                          TrainReport* report = nullptr);

// Closed-form identity-observable fit: stacks [s_t | a_1 s_t | ... | a_m s_t]
// and least-squares against s_{t+1}. Exact on truly bilinear systems.
// `rank_warning`, when given, is set if the regressor matrix is rank-deficient.
KoopmanForwardModel fit_linear(const Dataset& dataset, bool* rank_warning = nullptr);

void save_model(const std::filesystem::path& path, const KoopmanForwardModel& model,
                const std::string& config_echo_json, std::uint64_t seed);
KoopmanForwardModel load_model(const std::filesystem::path& path);

}  // namespace kfc::koopman
