#pragma once

// Grayscale rendering of explanation coefficient maps as ASCII PGM images.
//
// Mean and per-sample maps use a signed scale: values in [-c, +c] map
// linearly to [0, 255] with 0 -> 127, where c is the largest absolute
// coefficient in the displayed map (c = 0 renders all-127). Variance maps
// scale [0, v_max] to [0, 255] (v_max = 0 renders all-0).

#include "kllime/artifact.hpp"
#include "kllime/io.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace kllime {

enum class RenderWhat { mean, variance, sample };

struct RenderRequest {
    RenderWhat what = RenderWhat::mean;
    int sample_index = 0;   // for RenderWhat::sample
    bool at_selected = true;
    int lambda_index = 0;   // when !at_selected
};

// "mean" | "variance" | "sample:<l>"
inline RenderRequest parse_render_what(const std::string& s) {
    RenderRequest req;
    if (s == "mean") {
        req.what = RenderWhat::mean;
    } else if (s == "variance") {
        req.what = RenderWhat::variance;
    } else if (s.rfind("sample:", 0) == 0) {
        req.what = RenderWhat::sample;
        req.sample_index = std::stoi(s.substr(7));
    } else {
        throw std::invalid_argument("render: unknown map '" + s + "'");
    }
    return req;
}

// "selected" | "lambda-index:<k>"
inline void parse_render_at(const std::string& s, RenderRequest& req) {
    if (s == "selected") {
        req.at_selected = true;
    } else if (s.rfind("lambda-index:", 0) == 0) {
        req.at_selected = false;
        req.lambda_index = std::stoi(s.substr(13));
    } else {
        throw std::invalid_argument("render: unknown position '" + s + "'");
    }
}

namespace detail {

inline int signed_pixel(double v, double c) {
    if (c == 0.0) return 127;
    const long px = std::lround(127.0 + 128.0 * v / c);
    return static_cast<int>(std::clamp(px, 0L, 255L));
}

inline int magnitude_pixel(double v, double vmax) {
    if (vmax == 0.0) return 0;
    const long px = std::lround(255.0 * v / vmax);
    return static_cast<int>(std::clamp(px, 0L, 255L));
}

} // namespace detail

struct RenderedMap {
    int rows = 0;
    int cols = 0;
    std::vector<int> pixels;
};

inline RenderedMap render_map(const ExplanationArtifact& artifact, const RenderRequest& req) {
    if (!artifact.shape)
        throw std::runtime_error("render: artifact has no image shape metadata");
    const int k = req.at_selected ? artifact.selected_index : req.lambda_index;
    if (k < 0 || k >= artifact.grid_size())
        throw std::runtime_error("render: lambda index out of range");
    const int d = artifact.dim();
    std::vector<double> values(static_cast<std::size_t>(d), 0.0);
    bool signed_scale = true;
    switch (req.what) {
    case RenderWhat::mean:
        for (int j = 0; j < d; ++j) values[static_cast<std::size_t>(j)] =
            artifact.mean_coefficients(k, j);
        break;
    case RenderWhat::variance:
        for (int j = 0; j < d; ++j) values[static_cast<std::size_t>(j)] =
            artifact.var_coefficients(k, j);
        signed_scale = false;
        break;
    case RenderWhat::sample: {
        if (!artifact.per_sample)
            throw std::runtime_error(
                "render: artifact has no per-sample maps (rerun with --full)");
        const auto& samples = *artifact.per_sample;
        if (req.sample_index < 0 ||
            req.sample_index >= static_cast<int>(samples.size()))
            throw std::runtime_error("render: sample index out of range");
        const ArtifactSample& s =
            samples[static_cast<std::size_t>(req.sample_index)][static_cast<std::size_t>(k)];
        for (const auto& [pos, b] : s.coefficients) values[static_cast<std::size_t>(pos)] = b;
        break;
    }
    }

    RenderedMap out;
    out.rows = artifact.shape->first;
    out.cols = artifact.shape->second;
    out.pixels.resize(static_cast<std::size_t>(d));
    if (signed_scale) {
        double c = 0.0;
        for (double v : values) c = std::max(c, std::abs(v));
        for (int j = 0; j < d; ++j)
            out.pixels[static_cast<std::size_t>(j)] =
                detail::signed_pixel(values[static_cast<std::size_t>(j)], c);
    } else {
        double vmax = 0.0;
        for (double v : values) vmax = std::max(vmax, v);
        for (int j = 0; j < d; ++j)
            out.pixels[static_cast<std::size_t>(j)] =
                detail::magnitude_pixel(values[static_cast<std::size_t>(j)], vmax);
    }
    return out;
}

inline void render_to_file(const ExplanationArtifact& artifact, const RenderRequest& req,
                           const std::string& path) {
    const RenderedMap m = render_map(artifact, req);
    write_pgm_file(path, m.rows, m.cols, m.pixels);
}

} // namespace kllime
