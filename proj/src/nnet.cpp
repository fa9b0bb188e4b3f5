#include "kfc/nnet.hpp"

#include <cmath>

#include "kfc/errors.hpp"

namespace kfc::nnet {

namespace {

MatrixXd activate(const MatrixXd& z, Activation act) {
    switch (act) {
        case Activation::Relu:
            return z.cwiseMax(0.0);
        case Activation::Tanh:
            return z.array().tanh().matrix();
        case Activation::Identity:
            return z;
    }
    return z;
}

MatrixXd activate_grad(const MatrixXd& z, const MatrixXd& a, Activation act) {
    switch (act) {
        case Activation::Relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Activation::Tanh:
            return (1.0 - a.array().square()).matrix();
        case Activation::Identity:
            return MatrixXd::Ones(z.rows(), z.cols());
    }
    return MatrixXd::Ones(z.rows(), z.cols());
}

}  // namespace

Mlp Mlp::make(const std::vector<int>& dims, Activation hidden_act, Rng& rng) {
    if (dims.size() < 2) throw DimensionMismatch("Mlp: need at least input and output dims");
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        const int fan_in = dims[l], fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        layer.w.resize(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i)
            for (int j = 0; j < fan_in; ++j) layer.w(i, j) = rng.uniform(-bound, bound);
        layer.b = VectorXd::Zero(fan_out);
        layer.act = (l + 2 == dims.size()) ? Activation::Identity : hidden_act;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

MatrixXd forward(const Mlp& net, const MatrixXd& x) {
    if (x.cols() != net.in_dim()) throw DimensionMismatch("forward: input width mismatch");
    MatrixXd h = x;
    for (const auto& layer : net.layers) {
        h = activate(((h * layer.w.transpose()).rowwise() + layer.b.transpose()).eval(),
                     layer.act);
    }
    return h;
}

MatrixXd forward_cached(const Mlp& net, const MatrixXd& x, ForwardCache& cache) {
    if (x.cols() != net.in_dim()) throw DimensionMismatch("forward: input width mismatch");
    cache.input = x;
    cache.pre.clear();
    cache.post.clear();
    MatrixXd h = x;
    for (const auto& layer : net.layers) {
        MatrixXd z = (h * layer.w.transpose()).rowwise() + layer.b.transpose();
        h = activate(z, layer.act);
        cache.pre.push_back(std::move(z));
        cache.post.push_back(h);
    }
    return h;
}

Gradients Gradients::zeros_like(const Mlp& net) {
    Gradients g;
    for (const auto& layer : net.layers) {
        g.dw.push_back(MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
        g.db.push_back(VectorXd::Zero(layer.b.size()));
    }
    return g;
}

void Gradients::accumulate(const Gradients& other, double scale) {
    for (std::size_t l = 0; l < dw.size(); ++l) {
        dw[l] += scale * other.dw[l];
        db[l] += scale * other.db[l];
    }
}

MatrixXd backward(const Mlp& net, const ForwardCache& cache, const MatrixXd& upstream,
                  Gradients& grads) {
    const std::size_t depth = net.layers.size();
    if (upstream.rows() != cache.input.rows() ||
        upstream.cols() != net.out_dim()) {
        throw DimensionMismatch("backward: upstream gradient shape mismatch");
    }
    grads.dw.resize(depth);
    grads.db.resize(depth);

    MatrixXd delta = upstream;
    for (std::size_t l = depth; l-- > 0;) {
        const auto& layer = net.layers[l];
        delta = delta.cwiseProduct(activate_grad(cache.pre[l], cache.post[l], layer.act));
        const MatrixXd& in = (l == 0) ? cache.input : cache.post[l - 1];
        grads.dw[l] = delta.transpose() * in;
        grads.db[l] = delta.colwise().sum().transpose();
        delta = delta * layer.w;
    }
    return delta;
}

HuberResult huber(const MatrixXd& pred, const MatrixXd& target, double delta) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw DimensionMismatch("huber: shape mismatch");
    }
    HuberResult res;
    res.grad.resize(pred.rows(), pred.cols());
    const double count = static_cast<double>(pred.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
        for (Eigen::Index j = 0; j < pred.cols(); ++j) {
            const double r = pred(i, j) - target(i, j);
            if (std::abs(r) <= delta) {
                total += 0.5 * r * r;
                res.grad(i, j) = r / count;
            } else {
                total += delta * (std::abs(r) - 0.5 * delta);
                res.grad(i, j) = delta * (r > 0 ? 1.0 : -1.0) / count;
            }
        }
    }
    res.loss = total / count;
    return res;
}

AdamState AdamState::for_net(const Mlp& net, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& layer : net.layers) {
        s.m_w.push_back(MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
        s.v_w.push_back(MatrixXd::Zero(layer.w.rows(), layer.w.cols()));
        s.m_b.push_back(VectorXd::Zero(layer.b.size()));
        s.v_b.push_back(VectorXd::Zero(layer.b.size()));
    }
    return s;
}

namespace {

template <typename T>
void adam_update(T& param, const T& grad, T& m, T& v, const AdamState& s, double bc1, double bc2) {
    m = s.beta1 * m + (1.0 - s.beta1) * grad;
    v = s.beta2 * v.array().matrix() + (1.0 - s.beta2) * grad.array().square().matrix();
    param.array() -= s.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + s.eps);
}

}  // namespace

void adam_step(Mlp& net, const Gradients& grads, AdamState& state) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        adam_update(net.layers[l].w, grads.dw[l], state.m_w[l], state.v_w[l], state, bc1, bc2);
        adam_update(net.layers[l].b, grads.db[l], state.m_b[l], state.v_b[l], state, bc1, bc2);
    }
}

AdamTensor AdamTensor::like(const MatrixXd& p, double lr) {
    AdamTensor t;
    t.lr = lr;
    t.m = MatrixXd::Zero(p.rows(), p.cols());
    t.v = MatrixXd::Zero(p.rows(), p.cols());
    return t;
}

void AdamTensor::update(MatrixXd& param, const MatrixXd& grad) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v.array().matrix() + (1.0 - beta2) * grad.array().square().matrix();
    param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

}  // namespace kfc::nnet
