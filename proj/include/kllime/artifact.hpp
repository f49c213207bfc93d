#pragma once

// Self-contained explanation artifact: everything needed to re-render power
// curves and coefficient maps without recomputation, serialized as JSON with
// stable key order and shortest round-trip number formatting so identical
// runs produce identical bytes.

#include "kllime/instance.hpp"
#include "kllime/projection.hpp"

#include <json.hpp>

#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace kllime {

inline constexpr const char* kArtifactSchema = "kllime-artifact-v1";

struct ArtifactMetadata {
    std::uint64_t seed = 0;
    int num_perturbations = 0;
    int num_posterior_samples = 0;
    Family family = Family::bernoulli;
    double beta_a = 1.0;
    double beta_b = 1.0;
    std::optional<double> rho_fixed;
    std::vector<double> lambda_grid;
    int solver_max_iters = 0;
    double solver_tol = 0.0;
    double solver_irls_damping = 1.0;
    int solver_num_lambdas = 0;
    double solver_lambda_min_ratio = 0.0;
    std::string representation;
    std::string model_source;
    double target_power = 0.0;
    bool all_converged = true;
    bool any_saturated = false;
    std::vector<std::pair<int, int>> flagged; // (sample, lambda index) not converged
    // Explanations are aligned across posterior samples by shared lambda
    // grid index, not by equal complexity.
    std::string alignment = "shared-lambda-grid";
};

struct ArtifactSample {
    double intercept = 0.0;
    std::map<int, double> coefficients;
    double noise_var = 0.0;
    double kl_loss = 0.0;
    bool converged = true;
    bool saturated = false;
};

struct ExplanationArtifact {
    ArtifactMetadata metadata;
    // instance echo
    Eigen::VectorXd instance_features;
    double background = 0.0;
    std::optional<std::pair<int, int>> shape;
    int active_count = 0;
    std::vector<int> active_idx;
    // curve
    PowerCurve curve;
    int selected_index = 0;
    // per-lambda coefficient maps, dense over d
    Eigen::MatrixXd mean_coefficients; // K x d
    Eigen::MatrixXd var_coefficients;  // K x d
    std::vector<double> mean_intercept;
    // optional per-sample paths (L x K)
    std::optional<std::vector<std::vector<ArtifactSample>>> per_sample;

    int dim() const { return static_cast<int>(instance_features.size()); }
    int grid_size() const { return static_cast<int>(metadata.lambda_grid.size()); }
};

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        auto row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return Eigen::MatrixXd();
    const auto cols = static_cast<Eigen::Index>(j.at(0).size());
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != cols)
            throw std::runtime_error("artifact: ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

} // namespace detail

inline nlohmann::json artifact_to_json(const ExplanationArtifact& a) {
    nlohmann::json j;
    const ArtifactMetadata& md = a.metadata;
    nlohmann::json meta;
    meta["schema"] = kArtifactSchema;
    meta["seed"] = md.seed;
    meta["num_perturbations"] = md.num_perturbations;
    meta["num_posterior_samples"] = md.num_posterior_samples;
    meta["family"] = family_name(md.family);
    meta["beta_a"] = md.beta_a;
    meta["beta_b"] = md.beta_b;
    if (md.rho_fixed)
        meta["rho_fixed"] = *md.rho_fixed;
    else
        meta["rho_fixed"] = nullptr;
    meta["lambda_grid"] = md.lambda_grid;
    meta["solver"] = {{"max_iters", md.solver_max_iters},
                      {"tol", md.solver_tol},
                      {"irls_damping", md.solver_irls_damping},
                      {"num_lambdas", md.solver_num_lambdas},
                      {"lambda_min_ratio", md.solver_lambda_min_ratio}};
    meta["representation"] = md.representation;
    meta["model_source"] = md.model_source;
    meta["target_power"] = md.target_power;
    nlohmann::json conv;
    conv["all_converged"] = md.all_converged;
    conv["any_saturated"] = md.any_saturated;
    auto flagged = nlohmann::json::array();
    for (const auto& [l, k] : md.flagged) flagged.push_back({l, k});
    conv["flagged"] = std::move(flagged);
    meta["convergence"] = std::move(conv);
    meta["alignment"] = md.alignment;
    j["metadata"] = std::move(meta);

    nlohmann::json inst;
    auto feats = nlohmann::json::array();
    for (Eigen::Index i = 0; i < a.instance_features.size(); ++i)
        feats.push_back(a.instance_features[i]);
    inst["features"] = std::move(feats);
    inst["background"] = a.background;
    if (a.shape)
        inst["shape"] = {a.shape->first, a.shape->second};
    else
        inst["shape"] = nullptr;
    inst["active_count"] = a.active_count;
    inst["active_idx"] = a.active_idx;
    j["instance"] = std::move(inst);

    nlohmann::json curve;
    auto pts = nlohmann::json::array();
    for (const auto& p : a.curve.points)
        pts.push_back({{"lambda", p.lambda},
                       {"mean_complexity", p.mean_complexity},
                       {"power", p.power}});
    curve["points"] = std::move(pts);
    curve["delta_s"] = a.curve.delta_s;
    curve["delta_0"] = a.curve.delta_0;
    curve["selected_index"] = a.selected_index;
    curve["target_power"] = md.target_power;
    curve["target_attained"] = a.curve.target_attained;
    j["curve"] = std::move(curve);

    nlohmann::json maps;
    maps["mean_coefficients"] = detail::matrix_to_json(a.mean_coefficients);
    maps["var_coefficients"] = detail::matrix_to_json(a.var_coefficients);
    maps["mean_intercept"] = a.mean_intercept;
    j["maps"] = std::move(maps);

    if (a.per_sample) {
        auto samples = nlohmann::json::array();
        for (const auto& path : *a.per_sample) {
            auto path_json = nlohmann::json::array();
            for (const auto& s : path) {
                nlohmann::json sj;
                sj["intercept"] = s.intercept;
                nlohmann::json coef = nlohmann::json::object();
                for (const auto& [pos, b] : s.coefficients) coef[std::to_string(pos)] = b;
                sj["coefficients"] = std::move(coef);
                sj["noise_var"] = s.noise_var;
                sj["kl_loss"] = s.kl_loss;
                sj["converged"] = s.converged;
                sj["saturated"] = s.saturated;
                path_json.push_back(std::move(sj));
            }
            samples.push_back(std::move(path_json));
        }
        j["per_sample"] = std::move(samples);
    } else {
        j["per_sample"] = nullptr;
    }
    return j;
}

inline ExplanationArtifact artifact_from_json(const nlohmann::json& j) {
    ExplanationArtifact a;
    const auto& meta = j.at("metadata");
    if (meta.at("schema").get<std::string>() != kArtifactSchema)
        throw std::runtime_error("artifact: unknown schema");
    ArtifactMetadata& md = a.metadata;
    md.seed = meta.at("seed").get<std::uint64_t>();
    md.num_perturbations = meta.at("num_perturbations").get<int>();
    md.num_posterior_samples = meta.at("num_posterior_samples").get<int>();
    md.family = parse_family(meta.at("family").get<std::string>());
    md.beta_a = meta.at("beta_a").get<double>();
    md.beta_b = meta.at("beta_b").get<double>();
    if (!meta.at("rho_fixed").is_null()) md.rho_fixed = meta.at("rho_fixed").get<double>();
    md.lambda_grid = meta.at("lambda_grid").get<std::vector<double>>();
    const auto& solver = meta.at("solver");
    md.solver_max_iters = solver.at("max_iters").get<int>();
    md.solver_tol = solver.at("tol").get<double>();
    md.solver_irls_damping = solver.at("irls_damping").get<double>();
    md.solver_num_lambdas = solver.at("num_lambdas").get<int>();
    md.solver_lambda_min_ratio = solver.at("lambda_min_ratio").get<double>();
    md.representation = meta.at("representation").get<std::string>();
    md.model_source = meta.at("model_source").get<std::string>();
    md.target_power = meta.at("target_power").get<double>();
    const auto& conv = meta.at("convergence");
    md.all_converged = conv.at("all_converged").get<bool>();
    md.any_saturated = conv.at("any_saturated").get<bool>();
    for (const auto& f : conv.at("flagged"))
        md.flagged.emplace_back(f.at(0).get<int>(), f.at(1).get<int>());
    md.alignment = meta.at("alignment").get<std::string>();

    const auto& inst = j.at("instance");
    const auto feats = inst.at("features").get<std::vector<double>>();
    a.instance_features =
        Eigen::Map<const Eigen::VectorXd>(feats.data(), static_cast<Eigen::Index>(feats.size()));
    a.background = inst.at("background").get<double>();
    if (!inst.at("shape").is_null())
        a.shape = std::make_pair(inst.at("shape").at(0).get<int>(),
                                 inst.at("shape").at(1).get<int>());
    a.active_count = inst.at("active_count").get<int>();
    a.active_idx = inst.at("active_idx").get<std::vector<int>>();

    const auto& curve = j.at("curve");
    for (const auto& p : curve.at("points")) {
        PowerPoint pt;
        pt.lambda = p.at("lambda").get<double>();
        pt.mean_complexity = p.at("mean_complexity").get<double>();
        pt.power = p.at("power").get<double>();
        a.curve.points.push_back(pt);
    }
    a.curve.delta_s = curve.at("delta_s").get<std::vector<double>>();
    a.curve.delta_0 = curve.at("delta_0").get<double>();
    a.selected_index = curve.at("selected_index").get<int>();
    a.curve.selected_index = a.selected_index;
    a.curve.target_power = md.target_power;
    a.curve.target_attained = curve.at("target_attained").get<bool>();

    const auto& maps = j.at("maps");
    a.mean_coefficients = detail::matrix_from_json(maps.at("mean_coefficients"));
    a.var_coefficients = detail::matrix_from_json(maps.at("var_coefficients"));
    a.mean_intercept = maps.at("mean_intercept").get<std::vector<double>>();

    if (!j.at("per_sample").is_null()) {
        std::vector<std::vector<ArtifactSample>> samples;
        for (const auto& path_json : j.at("per_sample")) {
            std::vector<ArtifactSample> path;
            for (const auto& sj : path_json) {
                ArtifactSample s;
                s.intercept = sj.at("intercept").get<double>();
                for (const auto& [key, val] : sj.at("coefficients").items())
                    s.coefficients[std::stoi(key)] = val.get<double>();
                s.noise_var = sj.at("noise_var").get<double>();
                s.kl_loss = sj.at("kl_loss").get<double>();
                s.converged = sj.at("converged").get<bool>();
                s.saturated = sj.at("saturated").get<bool>();
                path.push_back(std::move(s));
            }
            samples.push_back(std::move(path));
        }
        a.per_sample = std::move(samples);
    }
    return a;
}

inline void save_artifact(const ExplanationArtifact& a, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open artifact output: " + path);
    out << artifact_to_json(a).dump(2) << '\n';
}

inline ExplanationArtifact load_artifact(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open artifact: " + path);
    nlohmann::json j;
    in >> j;
    return artifact_from_json(j);
}

} // namespace kllime
