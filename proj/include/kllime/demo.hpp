#pragma once

// Synthetic two-class digit demo: generates 8x8 "three"-vs-"eight" images
// from two template masks with Bernoulli pixel-flip noise, fits the built-in
// Bayesian logistic model, and explains one correctly and (when present) one
// incorrectly classified test instance, writing artifacts, power-curve TSVs
// and all coefficient-map renders.

#include "kllime/io.hpp"
#include "kllime/models.hpp"
#include "kllime/pipeline.hpp"
#include "kllime/render.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace kllime {

inline constexpr int kDemoRows = 8;
inline constexpr int kDemoCols = 8;
inline constexpr int kDemoDim = kDemoRows * kDemoCols;
inline constexpr double kDemoFlipNoise = 0.15;
inline constexpr int kDemoTrainSize = 200;
inline constexpr int kDemoTestSize = 80;

// Class 0 template: a three with an elongated lower-left tail. Class 1: an
// eight with closed loops. They differ at the left loop-closure pixels and
// the tail pixel.
inline const std::array<const char*, kDemoRows>& demo_template(int label) {
    static const std::array<const char*, kDemoRows> three = {
        ".XXXXX..",
        ".....XX.",
        ".....XX.",
        "..XXXX..",
        ".....XX.",
        ".....XX.",
        "XXXXXX..",
        "........",
    };
    static const std::array<const char*, kDemoRows> eight = {
        ".XXXXX..",
        ".X...XX.",
        ".X...XX.",
        "..XXXX..",
        ".X...XX.",
        ".X...XX.",
        ".XXXXX..",
        "........",
    };
    return label == 0 ? three : eight;
}

struct DemoDataset {
    Eigen::MatrixXd train_X; // n x 64, values in {0,1}
    Eigen::VectorXd train_y;
    Eigen::MatrixXd test_X;
    Eigen::VectorXd test_y;
};

namespace detail {

inline void fill_demo_split(Eigen::MatrixXd& X, Eigen::VectorXd& y, int n,
                            std::uint64_t seed, std::string_view label) {
    X.resize(n, kDemoDim);
    y.resize(n);
    for (int i = 0; i < n; ++i) {
        RandomStream rs = derive_stream(seed, label, static_cast<std::uint64_t>(i));
        const int cls = rs.bernoulli(0.5) ? 1 : 0;
        y[i] = cls;
        const auto& tmpl = demo_template(cls);
        for (int r = 0; r < kDemoRows; ++r)
            for (int c = 0; c < kDemoCols; ++c) {
                const bool on = tmpl[static_cast<std::size_t>(r)][c] == 'X';
                const bool flip = rs.bernoulli(kDemoFlipNoise);
                X(i, r * kDemoCols + c) = (on != flip) ? 1.0 : 0.0;
            }
    }
}

} // namespace detail

inline DemoDataset make_demo_dataset(std::uint64_t seed) {
    DemoDataset ds;
    detail::fill_demo_split(ds.train_X, ds.train_y, kDemoTrainSize, seed, "demo.train");
    detail::fill_demo_split(ds.test_X, ds.test_y, kDemoTestSize, seed, "demo.test");
    return ds;
}

struct DemoOptions {
    std::uint64_t seed = 0;
    std::string out_dir = "demo-out";
    int num_perturbations = 1000;
    int num_posterior_samples = 100;
    double target_power = 0.8;
    SolverConfig solver;
};

struct DemoInstanceReport {
    int test_index = -1;
    int label = -1;
    double map_probability = 0.0;
    bool target_attained = true;
    double densest_power = 0.0;
    double selected_power = 0.0;
    double selected_complexity = 0.0;
};

struct DemoResult {
    double test_accuracy = 0.0;
    bool found_misclassified = false;
    DemoInstanceReport correct;
    DemoInstanceReport misclassified;
    std::vector<std::string> files_written;
};

namespace detail {

inline DemoInstanceReport explain_demo_instance(const DemoDataset& ds,
                                                const BayesLogisticPosterior& post,
                                                int test_index, const DemoOptions& opts,
                                                const std::filesystem::path& dir,
                                                std::vector<std::string>& files) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    Instance instance;
    instance.features = ds.test_X.row(test_index);
    instance.background = 0.0;
    instance.shape = std::make_pair(kDemoRows, kDemoCols);

    ExplainOptions eopts;
    eopts.seed = opts.seed;
    eopts.num_perturbations = opts.num_perturbations;
    eopts.target_power = opts.target_power;
    eopts.solver = opts.solver;
    eopts.store_per_sample = true;
    eopts.model_source_label = "builtin:demo-bayes-logistic";
    const std::uint64_t posterior_seed = derive_seed(opts.seed, "posterior");
    const int L = opts.num_posterior_samples;
    PredictFn predict = [&](const Eigen::MatrixXd& Z) {
        return predict_bayes_logistic(post, Z, L, posterior_seed);
    };

    const ExplainResult result = run_explain(instance, predict, eopts);
    const ExplanationArtifact& artifact = result.artifact;

    const auto write = [&](const fs::path& p) { files.push_back(p.string()); };

    const fs::path artifact_path = dir / "artifact.json";
    save_artifact(artifact, artifact_path.string());
    write(artifact_path);

    const fs::path tsv_path = dir / "power_curve.tsv";
    {
        std::ofstream out(tsv_path, std::ios::binary);
        write_power_curve_tsv(artifact, out);
    }
    write(tsv_path);

    {
        std::vector<int> pixels(kDemoDim);
        for (int j = 0; j < kDemoDim; ++j)
            pixels[static_cast<std::size_t>(j)] =
                instance.features[j] != 0.0 ? 255 : 0;
        const fs::path p = dir / "instance.pgm";
        write_pgm_file(p.string(), kDemoRows, kDemoCols, pixels);
        write(p);
    }

    RenderRequest req;
    req.at_selected = true;
    req.what = RenderWhat::mean;
    render_to_file(artifact, req, (dir / "mean.pgm").string());
    write(dir / "mean.pgm");
    req.what = RenderWhat::variance;
    render_to_file(artifact, req, (dir / "variance.pgm").string());
    write(dir / "variance.pgm");
    req.what = RenderWhat::sample;
    const int sample_count = std::min(8, L);
    for (int l = 0; l < sample_count; ++l) {
        req.sample_index = l;
        const fs::path p = dir / ("sample_" + std::to_string(l) + ".pgm");
        render_to_file(artifact, req, p.string());
        write(p);
    }

    DemoInstanceReport report;
    report.test_index = test_index;
    report.label = static_cast<int>(ds.test_y[test_index]);
    const double eta = ds.test_X.row(test_index).dot(post.coef_map);
    report.map_probability = 1.0 / (1.0 + std::exp(-eta));
    report.target_attained = result.target_attained;
    report.densest_power = artifact.curve.points.back().power;
    report.selected_power =
        artifact.curve.points[static_cast<std::size_t>(artifact.selected_index)].power;
    report.selected_complexity =
        artifact.curve.points[static_cast<std::size_t>(artifact.selected_index)]
            .mean_complexity;
    return report;
}

} // namespace detail

inline DemoResult run_demo(const DemoOptions& opts) {
    namespace fs = std::filesystem;
    fs::create_directories(opts.out_dir);

    const DemoDataset ds = make_demo_dataset(derive_seed(opts.seed, "demo-data"));
    const BayesLogisticPosterior post = fit_bayes_logistic(ds.train_X, ds.train_y, 1.0);

    // Deterministic MAP classification of the test split.
    int correct_idx = -1, miss_idx = -1, hits = 0;
    for (int i = 0; i < kDemoTestSize; ++i) {
        const double eta = ds.test_X.row(i).dot(post.coef_map);
        const int pred = eta > 0.0 ? 1 : 0;
        const bool ok = pred == static_cast<int>(ds.test_y[i]);
        hits += ok ? 1 : 0;
        if (ok && correct_idx < 0) correct_idx = i;
        if (!ok && miss_idx < 0) miss_idx = i;
    }

    DemoResult result;
    result.test_accuracy = static_cast<double>(hits) / kDemoTestSize;
    result.found_misclassified = miss_idx >= 0;
    if (correct_idx < 0)
        throw std::runtime_error("demo: no correctly classified test instance at this seed");

    result.correct = detail::explain_demo_instance(ds, post, correct_idx, opts,
                                                   fs::path(opts.out_dir) / "correct",
                                                   result.files_written);
    if (miss_idx >= 0)
        result.misclassified = detail::explain_demo_instance(
            ds, post, miss_idx, opts, fs::path(opts.out_dir) / "misclassified",
            result.files_written);

    nlohmann::json summary;
    summary["test_accuracy"] = result.test_accuracy;
    summary["found_misclassified"] = result.found_misclassified;
    auto report_json = [](const DemoInstanceReport& r) {
        nlohmann::json j;
        j["test_index"] = r.test_index;
        j["label"] = r.label;
        j["map_probability"] = r.map_probability;
        j["target_attained"] = r.target_attained;
        j["densest_power"] = r.densest_power;
        j["selected_power"] = r.selected_power;
        j["selected_complexity"] = r.selected_complexity;
        return j;
    };
    summary["correct"] = report_json(result.correct);
    if (result.found_misclassified)
        summary["misclassified"] = report_json(result.misclassified);
    else
        summary["misclassified"] = nullptr;
    const fs::path summary_path = fs::path(opts.out_dir) / "summary.json";
    {
        std::ofstream out(summary_path, std::ios::binary);
        out << summary.dump(2) << '\n';
    }
    result.files_written.push_back(summary_path.string());
    return result;
}

} // namespace kllime
