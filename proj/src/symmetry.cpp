#include "kfc/symmetry.hpp"

#include <algorithm>
#include <cmath>

#include "kfc/errors.hpp"
#include "kfc/io.hpp"
#include "kfc/linalg.hpp"
#include "kfc/version.hpp"

namespace kfc::symmetry {

std::string to_string(AugmentMode mode) {
    switch (mode) {
        case AugmentMode::Kfc: return "kfc";
        case AugmentMode::Kfcpp: return "kfcpp";
        case AugmentMode::Gaussian: return "gaussian";
        case AugmentMode::VaeNoise: return "vae_noise";
        case AugmentMode::KfcppPrediction: return "kfcpp_prediction";
        case AugmentMode::FwdPrediction: return "fwd_prediction";
        case AugmentMode::None: return "none";
    }
    return "none";
}

AugmentMode augment_mode_from_string(const std::string& name) {
    for (AugmentMode m : {AugmentMode::Kfc, AugmentMode::Kfcpp, AugmentMode::Gaussian,
                          AugmentMode::VaeNoise, AugmentMode::KfcppPrediction,
                          AugmentMode::FwdPrediction, AugmentMode::None}) {
        if (to_string(m) == name) return m;
    }
    throw UsageError("unknown augmentation mode: " + name);
}

SymmetryGenerator kfc_generator(const KoopmanForwardModel& model, const VectorXd& a) {
    const MatrixXd k = model.k_of_a(a);
    const MatrixXd eye = MatrixXd::Identity(k.rows(), k.cols());
    auto basis = linalg::commutant_basis(k, {eye, k});

    SymmetryGenerator gen;
    gen.kind = SymmetryGenerator::Kind::Commutant;
    gen.sigma = basis.generators.front();
    const double mean_abs = gen.sigma.cwiseAbs().mean();
    if (mean_abs > 0) gen.sigma /= mean_abs;
    gen.commutator_residual = linalg::commutator_residual(gen.sigma, k);
    gen.degraded = gen.commutator_residual > 1e-8 * k.norm() * gen.sigma.norm();
    return gen;
}

SymmetryGenerator eigenspace_generator(const KoopmanForwardModel& model, const VectorXd& a) {
    const MatrixXd k = model.k_of_a(a);
    const auto dec = linalg::eig(k);
    SymmetryGenerator gen;
    gen.kind = SymmetryGenerator::Kind::Eigenspace;
    gen.u = dec.eigenvectors;
    gen.u_inv = dec.inverse;
    gen.commutator_residual = 0.0;
    return gen;
}

MatrixXd kfcpp_sigma(const SymmetryGenerator& gen, const VectorXd& eps) {
    if (gen.kind != SymmetryGenerator::Kind::Eigenspace) {
        throw ValidationError("kfcpp_sigma requires an eigenspace generator");
    }
    if (eps.size() != gen.u.rows()) throw DimensionMismatch("kfcpp_sigma: eps length mismatch");
    return (gen.u * eps.cast<std::complex<double>>().asDiagonal() * gen.u_inv).real();
}

VectorXd first_row_generator(const MatrixXd& k) {
    const Eigen::Index n = k.rows();
    if (n != k.cols()) throw DimensionMismatch("first_row_generator: matrix must be square");
    if (n >= 2 && k.col(0).tail(n - 1).cwiseAbs().maxCoeff() > 1e-12 * k.norm()) {
        throw ValidationError("first_row_generator: first column must be (K00, 0, ..., 0)");
    }
    // Left eigenvector for eigenvalue K00: nullspace of (K^T - K00 I).
    const MatrixXd m = k.transpose() - k(0, 0) * MatrixXd::Identity(n, n);
    Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullV);
    VectorXd v = svd.matrixV().col(n - 1);
    if (std::abs(v(0)) < 1e-12) {
        throw ValidationError("first_row_generator: ansatz degenerate (v_0 = 0)");
    }
    return v / (-v(0));
}

VectorXd apply_shift(const KoopmanForwardModel& model, const MatrixXd& generator,
                     const VectorXd& s) {
    const VectorXd z = model.encode(s);
    return model.decode(z + generator * z);
}

const SymmetryGenerator* GeneratorCache::get(const VectorXd& a) {
    std::vector<double> key(a.data(), a.data() + a.size());
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        std::optional<SymmetryGenerator> gen;
        try {
            const bool eigen_route = mode_ == AugmentMode::Kfcpp ||
                                     mode_ == AugmentMode::KfcppPrediction;
            gen = eigen_route ? eigenspace_generator(*model_, a) : kfc_generator(*model_, a);
        } catch (const EmptyCommutant&) {
        } catch (const NonDiagonalizable&) {
        }
        it = cache_.emplace(std::move(key), std::move(gen)).first;
    }
    if (!it->second.has_value()) {
        ++fallbacks_;
        return nullptr;
    }
    return &*it->second;
}

namespace {

VectorXd gaussian_shift(const VectorXd& s, double std, Rng& rng) {
    VectorXd out = s;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += rng.normal(0.0, std);
    return out;
}

}  // namespace

AugmentedPair augment_tuple(const KoopmanForwardModel& model, const VectorXd& s_t,
                            const VectorXd& a, const VectorXd& s_t1, const AugmentConfig& cfg,
                            Rng& rng, const SymmetryGenerator* gen) {
    AugmentedPair out;
    out.source_mode = cfg.mode;

    AugmentMode mode = cfg.mode;
    const bool koopman_mode = mode == AugmentMode::Kfc || mode == AugmentMode::Kfcpp ||
                              mode == AugmentMode::KfcppPrediction;
    if (koopman_mode) {
        // 20/80 split between random and symmetry shifts; generator failures
        // also drop to the Gaussian branch.
        if (rng.uniform() >= cfg.p_koopman || gen == nullptr) mode = AugmentMode::Gaussian;
    }

    switch (mode) {
        case AugmentMode::None:
            out.s_tilde_t = s_t;
            out.s_tilde_t1 = s_t1;
            break;
        case AugmentMode::Gaussian:
            out.s_tilde_t = gaussian_shift(s_t, cfg.gaussian_std, rng);
            out.s_tilde_t1 = gaussian_shift(s_t1, cfg.gaussian_std, rng);
            out.source_mode = AugmentMode::Gaussian;
            break;
        case AugmentMode::VaeNoise: {
            const VectorXd z_t = model.encode(s_t), z_t1 = model.encode(s_t1);
            out.s_tilde_t = model.decode(gaussian_shift(z_t, cfg.vae_noise_std, rng));
            out.s_tilde_t1 = model.decode(gaussian_shift(z_t1, cfg.vae_noise_std, rng));
            break;
        }
        case AugmentMode::Kfc: {
            const double eps = rng.normal(0.0, cfg.eps_std_kfc);
            const MatrixXd shift = eps * gen->sigma;
            out.s_tilde_t = apply_shift(model, shift, s_t);
            out.s_tilde_t1 = apply_shift(model, shift, s_t1);
            break;
        }
        case AugmentMode::Kfcpp:
        case AugmentMode::KfcppPrediction: {
            VectorXd eps(model.latent_dim);
            for (int i = 0; i < model.latent_dim; ++i) eps(i) = rng.normal(0.0, cfg.eps_std_kfcpp);
            const MatrixXd shift = kfcpp_sigma(*gen, eps);
            out.s_tilde_t = apply_shift(model, shift, s_t);
            out.s_tilde_t1 = mode == AugmentMode::Kfcpp
                                 ? apply_shift(model, shift, s_t1)
                                 : model.predict_next(out.s_tilde_t, a);
            break;
        }
        case AugmentMode::FwdPrediction:
            out.s_tilde_t = gaussian_shift(s_t, cfg.fwd_pred_state_std, rng);
            out.s_tilde_t1 = model.predict_next(out.s_tilde_t, a);
            break;
    }
    out.delta_s = (out.s_tilde_t - s_t).norm() + (out.s_tilde_t1 - s_t1).norm();
    return out;
}

AugmentedPair augment_tuple(const KoopmanForwardModel& model, const VectorXd& s_t,
                            const VectorXd& a, const VectorXd& s_t1, const AugmentConfig& cfg,
                            Rng& rng, GeneratorCache& cache) {
    const bool koopman_mode = cfg.mode == AugmentMode::Kfc || cfg.mode == AugmentMode::Kfcpp ||
                              cfg.mode == AugmentMode::KfcppPrediction;
    const SymmetryGenerator* gen = koopman_mode ? cache.get(a) : nullptr;
    return augment_tuple(model, s_t, a, s_t1, cfg, rng, gen);
}

void precompute_sidecar(const KoopmanForwardModel& model, const Dataset& dataset,
                        const AugmentConfig& cfg, const std::filesystem::path& path) {
    if (cfg.mode != AugmentMode::Kfc && cfg.mode != AugmentMode::Kfcpp) {
        throw UsageError("sidecar precompute supports modes kfc and kfcpp only");
    }
    if (!dataset.empty() && dataset.actions.cols() != model.action_dim) {
        throw DimensionMismatch("sidecar: dataset/model action dims differ");
    }
    const int n = model.latent_dim;
    GeneratorCache cache(model, cfg.mode);

    io::Container c;
    c.magic = "KFS1";
    int fallbacks = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const VectorXd a = dataset.actions.row(static_cast<Eigen::Index>(i)).transpose();
        const SymmetryGenerator* gen = cache.get(a);
        if (cfg.mode == AugmentMode::Kfc) {
            c.blocks.push_back(io::to_block(gen ? gen->sigma : MatrixXd::Zero(n, n).eval()));
        } else {
            const Eigen::MatrixXcd zero = Eigen::MatrixXcd::Zero(n, n);
            c.blocks.push_back(io::to_block(gen ? gen->u : zero));
            c.blocks.push_back(io::to_block(gen ? gen->u_inv : zero));
        }
        if (!gen) ++fallbacks;
    }
    c.header = {{"mode", to_string(cfg.mode)},
                {"latent_dim", n},
                {"count", dataset.size()},
                {"seed", cfg.seed},
                {"fallback_count", fallbacks},
                {"config",
                 {{"mode", to_string(cfg.mode)},
                  {"p_koopman", cfg.p_koopman},
                  {"eps_std_kfc", cfg.eps_std_kfc},
                  {"eps_std_kfcpp", cfg.eps_std_kfcpp},
                  {"gaussian_std", cfg.gaussian_std},
                  {"vae_noise_std", cfg.vae_noise_std},
                  {"fwd_pred_state_std", cfg.fwd_pred_state_std},
                  {"seed", cfg.seed}}},
                {"creator_version", kVersion}};
    io::write_container(path, c);
}

Sidecar load_sidecar(const std::filesystem::path& path) {
    const auto h = io::read_header(path, "KFS1");
    Sidecar sc;
    sc.mode = augment_mode_from_string(h.at("mode").get<std::string>());
    sc.latent_dim = h.at("latent_dim").get<int>();
    sc.seed = h.at("seed").get<std::uint64_t>();
    sc.fallback_count = h.at("fallback_count").get<int>();
    const auto count = h.at("count").get<std::size_t>();

    const auto nn = static_cast<std::size_t>(sc.latent_dim) * static_cast<std::size_t>(sc.latent_dim);
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < count; ++i) {
        if (sc.mode == AugmentMode::Kfc) {
            sizes.push_back(nn);
        } else {
            sizes.push_back(2 * nn);
            sizes.push_back(2 * nn);
        }
    }
    auto c = io::read_container(path, "KFS1", sizes);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < count; ++i) {
        SymmetryGenerator gen;
        if (sc.mode == AugmentMode::Kfc) {
            gen.kind = SymmetryGenerator::Kind::Commutant;
            gen.sigma = io::from_block(c.blocks[bi++], sc.latent_dim, sc.latent_dim);
            gen.degraded = gen.sigma.isZero(0.0);
        } else {
            gen.kind = SymmetryGenerator::Kind::Eigenspace;
            gen.u = io::from_block_complex(c.blocks[bi++], sc.latent_dim, sc.latent_dim);
            gen.u_inv = io::from_block_complex(c.blocks[bi++], sc.latent_dim, sc.latent_dim);
            gen.degraded = gen.u.isZero(0.0);
        }
        sc.records.push_back(std::move(gen));
    }
    return sc;
}

LieAxiomReport lie_axiom_report(const KoopmanForwardModel& model, const VectorXd& a, double eps1,
                                double eps2, const VectorXd& s) {
    return lie_axiom_report(model, kfc_generator(model, a).sigma, eps1, eps2, s);
}

LieAxiomReport lie_axiom_report(const KoopmanForwardModel& model, const MatrixXd& sigma,
                                double eps1, double eps2, const VectorXd& s) {
    const Eigen::Index n = sigma.rows();
    const MatrixXd eye = MatrixXd::Identity(n, n);
    LieAxiomReport rep;

    rep.identity_defect = (apply_shift(model, MatrixXd::Zero(n, n), s) - s).norm();

    // Composed latent map against the nearest family element 1 + eps* sigma.
    const MatrixXd composed = (eye + eps1 * sigma) * (eye + eps2 * sigma);
    const double eps_star =
        ((composed - eye).array() * sigma.array()).sum() / sigma.squaredNorm();
    const VectorXd z = model.encode(s);
    rep.composition_defect =
        (model.decode(composed * z) - model.decode(z + eps_star * (sigma * z))).norm();

    // First-order Taylor residual with a finite-difference tangent.
    const double h = 1e-6;
    const VectorXd zeta =
        (apply_shift(model, h * sigma, s) - apply_shift(model, -h * sigma, s)) / (2.0 * h);
    rep.taylor_residual = (apply_shift(model, eps1 * sigma, s) - s - eps1 * zeta).norm();
    return rep;
}

}  // namespace kfc::symmetry
