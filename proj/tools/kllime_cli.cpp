// Command-line front end: explain a prediction, dump power curves, render
// coefficient maps, or run the synthetic end-to-end demo.
//
// Exit codes: 0 success, 2 target power not attained (artifact still
// written), 1 error.

#include "kllime/demo.hpp"
#include "kllime/io.hpp"
#include "kllime/pipeline.hpp"
#include "kllime/render.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace {

struct SharedArgs {
    std::uint64_t seed = 0;
    int num_perturbations = 1000;
    double beta_a = 1.0;
    double beta_b = 1.0;
    double rho_fixed = -1.0; // < 0 means unset
    int num_lambdas = 50;
    double lambda_min_ratio = 1e-3;
    double target_power = 0.8;
    double background = 0.0;
    std::string representation = "binary-presence";
    std::string model;
    std::string instance_path;
    std::string out;
    bool full = false;
};

void add_shared_flags(CLI::App* cmd, SharedArgs& args) {
    cmd->add_option("--seed", args.seed, "Root random seed");
    cmd->add_option("--num-perturbations", args.num_perturbations,
                    "Locality sample count N");
    cmd->add_option("--beta-a", args.beta_a, "Beta(a,b) zeroing-probability a");
    cmd->add_option("--beta-b", args.beta_b, "Beta(a,b) zeroing-probability b");
    cmd->add_option("--rho-fixed", args.rho_fixed,
                    "Pin the zeroing probability to a constant in [0,1]");
    cmd->add_option("--num-lambdas", args.num_lambdas, "Penalty grid size K");
    cmd->add_option("--lambda-min-ratio", args.lambda_min_ratio,
                    "Smallest grid penalty as a fraction of lambda_max");
    cmd->add_option("--target-power", args.target_power,
                    "Relative explanatory power target for complexity selection");
    cmd->add_option("--background", args.background, "Feature-absence value");
    cmd->add_option("--representation", args.representation,
                    "Explanation feature space: binary-presence or identity");
    cmd->add_option("--model", args.model,
                    "builtin:<file>, adapter-cmd:<argv> or adapter-tcp:<host:port>");
    cmd->add_option("--instance", args.instance_path, "Instance file (CSV line or P2 PGM)");
    cmd->add_option("--out", args.out, "Output path");
    cmd->add_flag("--full", args.full, "Store per-sample coefficient paths in the artifact");
}

kllime::ExplainOptions to_explain_options(const SharedArgs& args) {
    kllime::ExplainOptions opts;
    opts.seed = args.seed;
    opts.num_perturbations = args.num_perturbations;
    opts.beta_a = args.beta_a;
    opts.beta_b = args.beta_b;
    if (args.rho_fixed >= 0.0) opts.rho_fixed = args.rho_fixed;
    opts.target_power = args.target_power;
    opts.solver.num_lambdas = args.num_lambdas;
    opts.solver.lambda_min_ratio = args.lambda_min_ratio;
    opts.solver.representation = kllime::parse_representation(args.representation);
    opts.store_per_sample = args.full;
    opts.model_source_label = args.model;
    return opts;
}

// Builds the prediction callback; the returned holder keeps the model or
// adapter session alive.
struct PredictionSource {
    kllime::PredictFn fn;
    std::unique_ptr<kllime::BuiltinModel> builtin;
    std::unique_ptr<kllime::AdapterClient> adapter;
};

PredictionSource make_prediction_source(const std::string& model_arg, std::uint64_t root_seed) {
    if (model_arg.empty()) throw std::runtime_error("--model is required");
    PredictionSource src;
    const kllime::ModelSource parsed = kllime::parse_model_source(model_arg);
    const std::uint64_t posterior_seed = kllime::derive_seed(root_seed, "posterior");
    switch (parsed.kind) {
    case kllime::ModelSource::Kind::builtin_file: {
        src.builtin = std::make_unique<kllime::BuiltinModel>(
            kllime::load_builtin_model(parsed.spec));
        kllime::BuiltinModel* model = src.builtin.get();
        src.fn = [model, posterior_seed](const Eigen::MatrixXd& Z) {
            return model->predict(Z, posterior_seed);
        };
        break;
    }
    case kllime::ModelSource::Kind::adapter_cmd: {
        src.adapter = std::make_unique<kllime::AdapterClient>(
            kllime::AdapterClient::spawn(kllime::split_command(parsed.spec)));
        kllime::AdapterClient* client = src.adapter.get();
        src.fn = [client](const Eigen::MatrixXd& Z) { return client->predict(Z); };
        break;
    }
    case kllime::ModelSource::Kind::adapter_tcp: {
        src.adapter = std::make_unique<kllime::AdapterClient>(
            kllime::AdapterClient::connect_tcp(parsed.spec));
        kllime::AdapterClient* client = src.adapter.get();
        src.fn = [client](const Eigen::MatrixXd& Z) { return client->predict(Z); };
        break;
    }
    }
    return src;
}

kllime::ExplainResult run_explain_from_args(const SharedArgs& args) {
    if (args.instance_path.empty()) throw std::runtime_error("--instance is required");
    const kllime::Instance instance =
        kllime::read_instance_file(args.instance_path, args.background);
    PredictionSource source = make_prediction_source(args.model, args.seed);
    return kllime::run_explain(instance, source.fn, to_explain_options(args));
}

int cmd_explain(const SharedArgs& args) {
    const kllime::ExplainResult result = run_explain_from_args(args);
    const std::string out = args.out.empty() ? "explanation.json" : args.out;
    kllime::save_artifact(result.artifact, out);
    const auto& curve = result.artifact.curve;
    const auto& sel = curve.points[static_cast<std::size_t>(result.artifact.selected_index)];
    std::cerr << "wrote " << out << ": selected lambda=" << sel.lambda
              << " complexity=" << sel.mean_complexity << " power=" << sel.power
              << (result.target_attained ? "" : " (target power not attained)") << "\n";
    return result.target_attained ? 0 : 2;
}

int cmd_power_curve(const SharedArgs& args, const std::string& artifact_path) {
    kllime::PowerCurve curve;
    bool attained = true;
    if (!artifact_path.empty()) {
        const kllime::ExplanationArtifact artifact = kllime::load_artifact(artifact_path);
        curve = artifact.curve;
        attained = artifact.curve.target_attained;
    } else {
        const kllime::ExplainResult result = run_explain_from_args(args);
        curve = result.artifact.curve;
        attained = result.target_attained;
    }
    if (args.out.empty()) {
        kllime::write_power_curve_tsv(curve, std::cout);
    } else {
        std::ofstream out(args.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open output: " + args.out);
        kllime::write_power_curve_tsv(curve, out);
    }
    return attained ? 0 : 2;
}

int cmd_render(const std::string& artifact_path, const std::string& what,
               const std::string& at, const std::string& out) {
    if (artifact_path.empty()) throw std::runtime_error("--artifact is required");
    if (out.empty()) throw std::runtime_error("--out is required");
    const kllime::ExplanationArtifact artifact = kllime::load_artifact(artifact_path);
    kllime::RenderRequest req = kllime::parse_render_what(what);
    kllime::parse_render_at(at, req);
    kllime::render_to_file(artifact, req, out);
    return 0;
}

int cmd_demo(const SharedArgs& args) {
    kllime::DemoOptions opts;
    opts.seed = args.seed;
    opts.out_dir = args.out.empty() ? "demo-out" : args.out;
    opts.num_perturbations = args.num_perturbations;
    opts.target_power = args.target_power;
    opts.solver.num_lambdas = args.num_lambdas;
    opts.solver.lambda_min_ratio = args.lambda_min_ratio;
    const kllime::DemoResult result = kllime::run_demo(opts);
    std::cerr << "demo: test accuracy " << result.test_accuracy << ", explained instance #"
              << result.correct.test_index << " (correct)";
    if (result.found_misclassified)
        std::cerr << " and #" << result.misclassified.test_index << " (misclassified)";
    else
        std::cerr << "; no misclassified test instance at this seed";
    std::cerr << "; outputs in " << opts.out_dir << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Local explanations of probabilistic models by KL projection"};
    app.require_subcommand(1);

    SharedArgs explain_args, curve_args, demo_args;
    std::string artifact_path, render_artifact, render_what = "mean",
                render_at = "selected", render_out;

    CLI::App* explain = app.add_subcommand("explain", "Explain one instance");
    add_shared_flags(explain, explain_args);

    CLI::App* curve = app.add_subcommand("power-curve",
                                         "Emit (lambda, complexity, power) TSV");
    add_shared_flags(curve, curve_args);
    curve->add_option("--artifact", artifact_path, "Existing artifact to read instead");

    CLI::App* render = app.add_subcommand("render", "Render a coefficient map as PGM");
    render->add_option("--artifact", render_artifact, "Artifact to render")->required();
    render->add_option("--what", render_what, "mean, variance or sample:<l>");
    render->add_option("--at", render_at, "selected or lambda-index:<k>");
    render->add_option("--out", render_out, "Output PGM path")->required();

    CLI::App* demo = app.add_subcommand("demo", "Run the synthetic end-to-end demo");
    add_shared_flags(demo, demo_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (explain->parsed()) return cmd_explain(explain_args);
        if (curve->parsed()) return cmd_power_curve(curve_args, artifact_path);
        if (render->parsed())
            return cmd_render(render_artifact, render_what, render_at, render_out);
        if (demo->parsed()) return cmd_demo(demo_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
