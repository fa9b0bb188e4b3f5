#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kfc/dataset.hpp"
#include "kfc/koopman.hpp"
#include "kfc/rng.hpp"

namespace kfc::symmetry {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using koopman::KoopmanForwardModel;

enum class AugmentMode {
    Kfc,
    Kfcpp,
    Gaussian,
    VaeNoise,
    KfcppPrediction,
    FwdPrediction,
    None,
};

std::string to_string(AugmentMode mode);
AugmentMode augment_mode_from_string(const std::string& name);

struct SymmetryGenerator {
    enum class Kind { Commutant, Eigenspace };
    Kind kind = Kind::Commutant;
    MatrixXd sigma;                // commutant kind
    Eigen::MatrixXcd u, u_inv;     // eigenspace kind
    double commutator_residual = 0.0;  // eps_a of the O(eps_a) extension
    bool degraded = false;
};

struct AugmentConfig {
    AugmentMode mode = AugmentMode::None;
    double p_koopman = 0.8;
    double eps_std_kfc = 5e-5;
    double eps_std_kfcpp = 1e-4;
    double gaussian_std = 3e-3;
    double vae_noise_std = 3e-3;
    double fwd_pred_state_std = 6e-3;
    std::uint64_t seed = 0;
};

struct AugmentedPair {
    VectorXd s_tilde_t;
    VectorXd s_tilde_t1;
    AugmentMode source_mode = AugmentMode::None;
    double delta_s = 0.0;  // |s~_t - s_t| + |s~_{t+1} - s_{t+1}|
};

// Commutant (Sylvester-nullspace) route: first nontrivial direction commuting
// with K(a) after deflating {I, K(a)}, rescaled so the mean absolute entry
// is 1. Throws EmptyCommutant.
SymmetryGenerator kfc_generator(const KoopmanForwardModel& model, const VectorXd& a);

// Eigenspace route: stores U(a), U^{-1}(a). Throws NonDiagonalizable.
SymmetryGenerator eigenspace_generator(const KoopmanForwardModel& model, const VectorXd& a);

// sigma(eps) = Re(U diag(eps) U^{-1}); commutes with K(a) for every eps.
MatrixXd kfcpp_sigma(const SymmetryGenerator& gen, const VectorXd& eps);

// First-row commutant ansatz: sigma = e_1 v^T with v scaled so v(0) = -1.
// Requires the first column of K to be (K_00, 0, ..., 0); v is then the left
// eigenvector of K for eigenvalue K_00. Returns v, i.e. (-1, c_1, ..., c_{N-1}).
VectorXd first_row_generator(const MatrixXd& k);

// s -> D((I + gen) E(s))
VectorXd apply_shift(const KoopmanForwardModel& model, const MatrixXd& generator,
                     const VectorXd& s);

// Per-action generator cache with Gaussian-fallback bookkeeping. Returns
// nullptr when the generator cannot be built for this action.
class GeneratorCache {
public:
    GeneratorCache(const KoopmanForwardModel& model, AugmentMode mode)
        : model_(&model), mode_(mode) {}

    const SymmetryGenerator* get(const VectorXd& a);
    int fallback_count() const { return fallbacks_; }

private:
    const KoopmanForwardModel* model_;
    AugmentMode mode_;
    std::map<std::vector<double>, std::optional<SymmetryGenerator>> cache_;
    int fallbacks_ = 0;
};

// Applies the configured mode to one tuple. `gen` is the per-action symmetry
// payload for the koopman modes (may be null: per-tuple Gaussian fallback).
// Action and reward are never touched.
AugmentedPair augment_tuple(const KoopmanForwardModel& model, const VectorXd& s_t,
                            const VectorXd& a, const VectorXd& s_t1, const AugmentConfig& cfg,
                            Rng& rng, const SymmetryGenerator* gen);

// Convenience wrapper resolving the generator through a cache.
AugmentedPair augment_tuple(const KoopmanForwardModel& model, const VectorXd& s_t,
                            const VectorXd& a, const VectorXd& s_t1, const AugmentConfig& cfg,
                            Rng& rng, GeneratorCache& cache);

struct Sidecar {
    AugmentMode mode = AugmentMode::Kfc;
    int latent_dim = 0;
    std::uint64_t seed = 0;
    int fallback_count = 0;
    std::vector<SymmetryGenerator> records;  // one per tuple; fallbacks flagged degraded
};

// Streaming per-tuple precompute of sigma_a (kfc) or (U, U^-1) (kfcpp).
// Deterministic given the dataset and config.
void precompute_sidecar(const KoopmanForwardModel& model, const Dataset& dataset,
                        const AugmentConfig& cfg, const std::filesystem::path& path);
Sidecar load_sidecar(const std::filesystem::path& path);

struct LieAxiomReport {
    double identity_defect = 0.0;     // |sigma^0(s) - s|
    double composition_defect = 0.0;  // closure of sigma^e1 sigma^e2 against the family
    double taylor_residual = 0.0;     // first-order expansion residual at eps1
};

// Measures the local-Lie-group axioms for the commutant generator of K(a).
// The composition defect compares the composed latent map (1+e1 s)(1+e2 s)
// against the nearest family element (1 + e* s), so exactly closed families
// (e.g. sigma^2 proportional to sigma) report zero.
LieAxiomReport lie_axiom_report(const KoopmanForwardModel& model, const VectorXd& a, double eps1,
                                double eps2, const VectorXd& s);
LieAxiomReport lie_axiom_report(const KoopmanForwardModel& model, const MatrixXd& sigma,
                                double eps1, double eps2, const VectorXd& s);

}  // namespace kfc::symmetry
