#pragma once

// The explained instance and its interpretable binary representation.
//
// An instance is a point x in R^d plus the background value that encodes
// feature absence. The interpretable representation x' marks each position
// as active (value differs from background) or inactive; explanation
// coefficients are defined over active positions only.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace kllime {

struct Instance {
    Eigen::VectorXd features;
    double background = 0.0;
    std::optional<std::pair<int, int>> shape; // (rows, cols) for image instances

    void validate() const {
        if (features.size() < 1) throw std::invalid_argument("instance: d must be >= 1");
        if (!std::isfinite(background))
            throw std::invalid_argument("instance: background must be finite");
        for (Eigen::Index j = 0; j < features.size(); ++j)
            if (!std::isfinite(features[j]))
                throw std::invalid_argument("instance: features must be finite");
        if (shape) {
            auto [rows, cols] = *shape;
            if (rows < 1 || cols < 1 ||
                static_cast<Eigen::Index>(rows) * cols != features.size())
                throw std::invalid_argument("instance: shape does not match d");
        }
    }
};

struct InterpretableRep {
    std::vector<std::uint8_t> active; // active[j] = 1 iff features[j] != background
    int active_count = 0;
    std::vector<int> active_idx; // positions with active[j] = 1, ascending

    bool is_active(int j) const { return active[static_cast<std::size_t>(j)] != 0; }
};

// Exact inequality against the background, no tolerance.
inline InterpretableRep interpretable_rep(const Instance& instance) {
    instance.validate();
    InterpretableRep rep;
    const Eigen::Index d = instance.features.size();
    rep.active.resize(static_cast<std::size_t>(d), 0);
    for (Eigen::Index j = 0; j < d; ++j) {
        if (instance.features[j] != instance.background) {
            rep.active[static_cast<std::size_t>(j)] = 1;
            rep.active_idx.push_back(static_cast<int>(j));
        }
    }
    rep.active_count = static_cast<int>(rep.active_idx.size());
    return rep;
}

} // namespace kllime
