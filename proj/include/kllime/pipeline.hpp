#pragma once

// End-to-end orchestration: perturb -> model predictions -> null fit ->
// ensemble projection -> power curve -> complexity selection -> artifact.

#include "kllime/adapter.hpp"
#include "kllime/artifact.hpp"
#include "kllime/divergence.hpp"
#include "kllime/instance.hpp"
#include "kllime/models.hpp"
#include "kllime/perturb.hpp"
#include "kllime/projection.hpp"
#include "kllime/rng.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace kllime {

// Root-seed fan-out: subcomponents draw from labeled sub-seeds so they are
// independently reproducible.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view label) {
    return detail::mix64(detail::mix64(root + 0x9e3779b97f4a7c15ULL) ^ detail::fnv1a(label));
}

struct ExplainOptions {
    std::uint64_t seed = 0;
    int num_perturbations = 1000;
    double beta_a = 1.0;
    double beta_b = 1.0;
    std::optional<double> rho_fixed;
    double target_power = 0.8;
    SolverConfig solver;
    bool store_per_sample = false;
    std::string model_source_label;
};

// Predictions for the sampled locality; inputs are original-space rows.
using PredictFn = std::function<PredictionMatrix(const Eigen::MatrixXd&)>;

struct ExplainResult {
    ExplanationArtifact artifact;
    ProjectionEnsemble ensemble;
    NullProjection null;
    PerturbationBatch batch;
    bool target_attained = true;
};

inline ExplainResult run_explain(const Instance& instance, const PredictFn& predict,
                                 const ExplainOptions& opts) {
    instance.validate();
    opts.solver.validate();
    if (!(opts.target_power <= 1.0))
        throw std::invalid_argument("explain: target power must be <= 1");

    const InterpretableRep rep = interpretable_rep(instance);
    LocalityConfig locality;
    locality.beta_a = opts.beta_a;
    locality.beta_b = opts.beta_b;
    locality.num_samples = opts.num_perturbations;
    locality.seed = derive_seed(opts.seed, "perturb");
    locality.rho_fixed = opts.rho_fixed;
    const PerturbationBatch batch = sample_perturbations(instance, rep, locality);

    const PredictionMatrix preds = predict(batch.originals);
    if (preds.points() != batch.size())
        throw std::runtime_error("explain: model returned wrong prediction count");

    const NullProjection null = fit_null(batch, preds, opts.solver);
    ProjectionEnsemble ensemble = project_ensemble(batch, preds, opts.solver);
    PowerCurve curve = power_curve(ensemble, null.delta_0);
    curve.target_power = opts.target_power;
    const ComplexitySelection sel = select_complexity(curve, opts.target_power);
    curve.selected_index = sel.index;
    curve.target_attained = sel.attained;

    ExplainResult result{.artifact = {},
                         .ensemble = std::move(ensemble),
                         .null = null,
                         .batch = batch,
                         .target_attained = sel.attained};
    ExplanationArtifact& a = result.artifact;
    a.metadata.seed = opts.seed;
    a.metadata.num_perturbations = opts.num_perturbations;
    a.metadata.num_posterior_samples = static_cast<int>(preds.samples());
    a.metadata.family = preds.family;
    a.metadata.beta_a = opts.beta_a;
    a.metadata.beta_b = opts.beta_b;
    a.metadata.rho_fixed = opts.rho_fixed;
    a.metadata.lambda_grid = result.ensemble.lambda_grid;
    a.metadata.solver_max_iters = opts.solver.max_iters;
    a.metadata.solver_tol = opts.solver.tol;
    a.metadata.solver_irls_damping = opts.solver.irls_damping;
    a.metadata.solver_num_lambdas = opts.solver.num_lambdas;
    a.metadata.solver_lambda_min_ratio = opts.solver.lambda_min_ratio;
    a.metadata.representation = representation_name(opts.solver.representation);
    a.metadata.model_source = opts.model_source_label;
    a.metadata.target_power = opts.target_power;
    a.metadata.all_converged = result.ensemble.all_converged;
    a.metadata.any_saturated = result.ensemble.any_saturated;
    for (std::size_t l = 0; l < result.ensemble.per_sample_paths.size(); ++l)
        for (std::size_t k = 0; k < result.ensemble.per_sample_paths[l].size(); ++k)
            if (!result.ensemble.per_sample_paths[l][k].converged)
                a.metadata.flagged.emplace_back(static_cast<int>(l), static_cast<int>(k));

    a.instance_features = instance.features;
    a.background = instance.background;
    a.shape = instance.shape;
    a.active_count = rep.active_count;
    a.active_idx = rep.active_idx;
    a.curve = curve;
    a.selected_index = sel.index;
    a.mean_coefficients = result.ensemble.mean_coefficients;
    a.var_coefficients = result.ensemble.var_coefficients;
    a.mean_intercept = result.ensemble.mean_intercept;

    if (opts.store_per_sample) {
        std::vector<std::vector<ArtifactSample>> samples;
        samples.reserve(result.ensemble.per_sample_paths.size());
        for (const auto& path : result.ensemble.per_sample_paths) {
            std::vector<ArtifactSample> out_path;
            out_path.reserve(path.size());
            for (const ExplanationModel& m : path) {
                ArtifactSample s;
                s.intercept = m.intercept;
                s.coefficients = m.coefficients;
                s.noise_var = m.noise_var;
                s.kl_loss = m.kl_loss;
                s.converged = m.converged;
                s.saturated = m.saturated;
                out_path.push_back(std::move(s));
            }
            samples.push_back(std::move(out_path));
        }
        a.per_sample = std::move(samples);
    }
    return result;
}

// TSV rows (lambda, mean_complexity, power), 9 significant digits, no header.
inline void write_power_curve_tsv(const PowerCurve& curve, std::ostream& out) {
    char buf[128];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.9g\t%.9g\t%.9g\n", p.lambda, p.mean_complexity,
                      p.power);
        out << buf;
    }
}

inline void write_power_curve_tsv(const ExplanationArtifact& artifact, std::ostream& out) {
    write_power_curve_tsv(artifact.curve, out);
}

// ---------------------------------------------------------------------------
// Built-in model sources described as JSON files:
//   {"type":"bayes_linear","X":[[...]],"y":[...],"alpha":1.0,"a0":1.0,
//    "b0":1.0,"num_posterior_samples":25}
//   {"type":"bayes_logistic","X":[[...]],"y":[...],"alpha":1.0,
//    "num_posterior_samples":100}

struct BuiltinModel {
    Family family = Family::gaussian;
    int num_posterior_samples = 100;
    std::variant<BayesLinearPosterior, BayesLogisticPosterior> posterior;

    PredictionMatrix predict(const Eigen::MatrixXd& Z, std::uint64_t seed) const {
        if (family == Family::gaussian)
            return predict_bayes_linear(std::get<BayesLinearPosterior>(posterior), Z,
                                        num_posterior_samples, seed);
        return predict_bayes_logistic(std::get<BayesLogisticPosterior>(posterior), Z,
                                      num_posterior_samples, seed);
    }
};

inline BuiltinModel builtin_model_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    const auto xrows = j.at("X").get<std::vector<std::vector<double>>>();
    const auto yvals = j.at("y").get<std::vector<double>>();
    if (xrows.empty() || xrows.size() != yvals.size())
        throw std::runtime_error("builtin model: X/y shape mismatch");
    const auto n = static_cast<Eigen::Index>(xrows.size());
    const auto d = static_cast<Eigen::Index>(xrows.front().size());
    Eigen::MatrixXd X(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (static_cast<Eigen::Index>(xrows[static_cast<std::size_t>(i)].size()) != d)
            throw std::runtime_error("builtin model: ragged X");
        for (Eigen::Index c = 0; c < d; ++c)
            X(i, c) = xrows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    const Eigen::VectorXd y =
        Eigen::Map<const Eigen::VectorXd>(yvals.data(), static_cast<Eigen::Index>(yvals.size()));
    const double alpha = j.value("alpha", 1.0);

    BuiltinModel model;
    model.num_posterior_samples = j.value("num_posterior_samples", 100);
    if (model.num_posterior_samples < 1)
        throw std::runtime_error("builtin model: num_posterior_samples must be >= 1");
    if (type == "bayes_linear") {
        model.family = Family::gaussian;
        model.posterior =
            fit_bayes_linear(X, y, alpha, j.value("a0", 1.0), j.value("b0", 1.0));
    } else if (type == "bayes_logistic") {
        model.family = Family::bernoulli;
        model.posterior = fit_bayes_logistic(X, y, alpha);
    } else {
        throw std::runtime_error("builtin model: unknown type '" + type + "'");
    }
    return model;
}

inline BuiltinModel load_builtin_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open model file: " + path);
    nlohmann::json j;
    in >> j;
    return builtin_model_from_json(j);
}

// ---------------------------------------------------------------------------
// Model source selection: "builtin:<file>", "adapter-cmd:<argv>",
// "adapter-tcp:<host:port>".

struct ModelSource {
    enum class Kind { builtin_file, adapter_cmd, adapter_tcp } kind = Kind::builtin_file;
    std::string spec;
};

inline ModelSource parse_model_source(const std::string& s) {
    ModelSource src;
    if (s.rfind("builtin:", 0) == 0) {
        src.kind = ModelSource::Kind::builtin_file;
        src.spec = s.substr(8);
    } else if (s.rfind("adapter-cmd:", 0) == 0) {
        src.kind = ModelSource::Kind::adapter_cmd;
        src.spec = s.substr(12);
    } else if (s.rfind("adapter-tcp:", 0) == 0) {
        src.kind = ModelSource::Kind::adapter_tcp;
        src.spec = s.substr(12);
    } else {
        throw std::invalid_argument(
            "model source must be builtin:<file>, adapter-cmd:<argv> or adapter-tcp:<addr>");
    }
    if (src.spec.empty()) throw std::invalid_argument("model source is empty");
    return src;
}

inline std::vector<std::string> split_command(const std::string& s) {
    std::vector<std::string> argv;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) argv.push_back(tok);
    return argv;
}

} // namespace kllime
