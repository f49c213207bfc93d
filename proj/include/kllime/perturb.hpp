#pragma once

// Locality sampling around an instance by randomized background-masking.
//
// A perturbation is drawn per row i by first sampling a zeroing probability
// rho_i ~ Beta(beta_a, beta_b) and then masking each of the d positions
// independently with probability rho_i. Masked positions take the background
// value in the original space and 0 in the interpretable space. Each row uses
// its own derived random substream, so the batch is reproducible and row
// contents do not depend on how many rows precede them.

#include "kllime/instance.hpp"
#include "kllime/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>

namespace kllime {

struct LocalityConfig {
    double beta_a = 1.0;
    double beta_b = 1.0;
    int num_samples = 1000;
    std::uint64_t seed = 0;
    // Pins rho to a constant instead of sampling it; used for degenerate
    // configurations in tests (0 = identity perturbation, 1 = full masking).
    std::optional<double> rho_fixed;

    void validate() const {
        if (!(beta_a > 0.0) || !(beta_b > 0.0))
            throw std::invalid_argument("locality: beta parameters must be > 0");
        if (num_samples < 1)
            throw std::invalid_argument("locality: num_samples must be >= 1");
        if (rho_fixed && (!(*rho_fixed >= 0.0) || !(*rho_fixed <= 1.0)))
            throw std::invalid_argument("locality: rho_fixed must be in [0,1]");
    }
};

struct PerturbationBatch {
    Eigen::MatrixXd originals; // N x d, perturbed points in the original space
    Eigen::MatrixXd reps;      // N x d, binary interpretable points
    Eigen::VectorXd weights;   // N, non-negative, sums to 1
    std::vector<int> active_idx; // active positions of the explained instance

    Eigen::Index size() const { return originals.rows(); }
    Eigen::Index dim() const { return originals.cols(); }

    void validate() const {
        if (originals.rows() != reps.rows() || originals.cols() != reps.cols() ||
            weights.size() != originals.rows())
            throw std::invalid_argument("batch: inconsistent dimensions");
        double s = 0.0;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            if (!(weights[i] >= 0.0)) throw std::invalid_argument("batch: negative weight");
            s += weights[i];
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("batch: weights must sum to 1");
    }

    PerturbationBatch with_weights(Eigen::VectorXd w) const {
        PerturbationBatch out = *this;
        out.weights = std::move(w);
        out.validate();
        return out;
    }
};

inline PerturbationBatch sample_perturbations(const Instance& instance,
                                              const InterpretableRep& rep,
                                              const LocalityConfig& config) {
    instance.validate();
    config.validate();
    const Eigen::Index d = instance.features.size();
    const int n = config.num_samples;

    PerturbationBatch batch;
    batch.originals.resize(n, d);
    batch.reps.resize(n, d);
    batch.weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
    batch.active_idx = rep.active_idx;

    for (int i = 0; i < n; ++i) {
        RandomStream rs = derive_stream(config.seed, "perturb.row", static_cast<std::uint64_t>(i));
        double rho;
        if (config.rho_fixed) {
            rho = *config.rho_fixed;
        } else if (config.beta_a == 1.0 && config.beta_b == 1.0) {
            rho = rs.uniform();
        } else {
            rho = rs.beta(config.beta_a, config.beta_b);
        }
        for (Eigen::Index j = 0; j < d; ++j) {
            const bool masked = rs.uniform() < rho;
            batch.originals(i, j) = masked ? instance.background : instance.features[j];
            batch.reps(i, j) = (!masked && rep.active[static_cast<std::size_t>(j)]) ? 1.0 : 0.0;
        }
    }
    return batch;
}

} // namespace kllime
