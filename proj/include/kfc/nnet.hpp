#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "kfc/rng.hpp"

namespace kfc::nnet {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class Activation { Relu, Tanh, Identity };

struct Layer {
    MatrixXd w;  // (out, in)
    VectorXd b;
    Activation act = Activation::Identity;
};

// Plain fully connected net. Batches are row-major: one sample per row.
struct Mlp {
    std::vector<Layer> layers;

    int in_dim() const { return static_cast<int>(layers.front().w.cols()); }
    int out_dim() const { return static_cast<int>(layers.back().w.rows()); }

    // Glorot-uniform init; hidden layers get `hidden_act`, the output layer
    // is identity (regression head convention).
    static Mlp make(const std::vector<int>& dims, Activation hidden_act, Rng& rng);
};

MatrixXd forward(const Mlp& net, const MatrixXd& x);

struct ForwardCache {
    MatrixXd input;
    std::vector<MatrixXd> pre;   // pre-activation per layer
    std::vector<MatrixXd> post;  // post-activation per layer
};

MatrixXd forward_cached(const Mlp& net, const MatrixXd& x, ForwardCache& cache);

struct Gradients {
    std::vector<MatrixXd> dw;
    std::vector<VectorXd> db;

    static Gradients zeros_like(const Mlp& net);
    void accumulate(const Gradients& other, double scale = 1.0);
};

// Reverse-mode gradients of the forward map; returns the input gradient and
// fills `grads` with parameter gradients. ReLU subgradient at 0 is 0.
MatrixXd backward(const Mlp& net, const ForwardCache& cache, const MatrixXd& upstream,
                  Gradients& grads);

struct HuberResult {
    double loss = 0.0;   // mean over all elements
    MatrixXd grad;       // d loss / d pred
};

HuberResult huber(const MatrixXd& pred, const MatrixXd& target, double delta = 1.0);

struct AdamState {
    std::int64_t step = 0;
    double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<MatrixXd> m_w, v_w;
    std::vector<VectorXd> m_b, v_b;

    static AdamState for_net(const Mlp& net, double lr);
};

void adam_step(Mlp& net, const Gradients& grads, AdamState& state);

// Single-tensor Adam, used for the bare Koopman operator matrices and the
// CQL Lagrange multiplier.
struct AdamTensor {
    std::int64_t step = 0;
    double lr = 3e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    MatrixXd m, v;

    static AdamTensor like(const MatrixXd& p, double lr);
    void update(MatrixXd& param, const MatrixXd& grad);
};

}  // namespace kfc::nnet
