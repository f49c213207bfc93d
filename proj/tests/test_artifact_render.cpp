#include "kllime/artifact.hpp"
#include "kllime/render.hpp"

#include "kllime/io.hpp"
#include "kllime/pipeline.hpp"
#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

using namespace kllime;

namespace {

// A tiny artifact with hand-set maps for render-rule checks.
ExplanationArtifact tiny_artifact() {
    ExplanationArtifact a;
    a.metadata.family = Family::bernoulli;
    a.metadata.lambda_grid = {0.5, 0.1};
    a.metadata.num_perturbations = 8;
    a.metadata.num_posterior_samples = 1;
    a.metadata.representation = "binary-presence";
    a.instance_features = Eigen::VectorXd::Zero(4);
    a.instance_features << 1.0, 0.0, 1.0, 1.0;
    a.background = 0.0;
    a.shape = std::make_pair(2, 2);
    a.active_count = 3;
    a.active_idx = {0, 2, 3};
    PowerPoint p0{0.5, 0.0, 0.0}, p1{0.1, 2.0, 0.9};
    a.curve.points = {p0, p1};
    a.curve.delta_s = {0.2, 0.02};
    a.curve.delta_0 = 0.2;
    a.curve.target_attained = true;
    a.selected_index = 1;
    a.mean_coefficients = Eigen::MatrixXd::Zero(2, 4);
    a.var_coefficients = Eigen::MatrixXd::Zero(2, 4);
    a.mean_intercept = {0.0, 0.1};
    return a;
}

} // namespace

TEST_CASE("render rules: zero map, extremes, variance scaling") {
    ExplanationArtifact a = tiny_artifact();

    SECTION("all-zero coefficient map renders mid-gray") {
        RenderRequest req;
        req.what = RenderWhat::mean;
        req.at_selected = false;
        req.lambda_index = 0;
        const RenderedMap m = render_map(a, req);
        REQUIRE(m.rows == 2);
        REQUIRE(m.cols == 2);
        for (int px : m.pixels) REQUIRE(px == 127);
    }

    SECTION("single positive coefficient maps to 255, negative to 0") {
        a.mean_coefficients(1, 2) = 0.75; // the map's max magnitude c
        RenderRequest req;
        req.what = RenderWhat::mean;
        const RenderedMap m = render_map(a, req);
        REQUIRE(m.pixels == std::vector<int>{127, 127, 255, 127});

        a.mean_coefficients(1, 0) = -0.75;
        const RenderedMap m2 = render_map(a, req);
        REQUIRE(m2.pixels == std::vector<int>{0, 127, 255, 127});
    }

    SECTION("variance map scales to 255 and zero variance renders black") {
        RenderRequest req;
        req.what = RenderWhat::variance;
        const RenderedMap zero = render_map(a, req);
        for (int px : zero.pixels) REQUIRE(px == 0);

        a.var_coefficients(1, 3) = 0.2;
        a.var_coefficients(1, 0) = 0.1;
        const RenderedMap m = render_map(a, req);
        REQUIRE(m.pixels[3] == 255);
        REQUIRE(m.pixels[0] == 128); // round(255 * 0.5)
        REQUIRE(m.pixels[1] == 0);
    }

    SECTION("render errors") {
        RenderRequest req;
        req.what = RenderWhat::sample;
        req.sample_index = 0;
        REQUIRE_THROWS_WITH(render_map(a, req),
                            Catch::Matchers::ContainsSubstring("per-sample"));
        ExplanationArtifact no_shape = a;
        no_shape.shape.reset();
        req.what = RenderWhat::mean;
        REQUIRE_THROWS_WITH(render_map(no_shape, req),
                            Catch::Matchers::ContainsSubstring("shape"));
        req.at_selected = false;
        req.lambda_index = 5;
        REQUIRE_THROWS_WITH(render_map(a, req),
                            Catch::Matchers::ContainsSubstring("out of range"));
    }
}

TEST_CASE("artifact JSON round trip preserves bytes") {
    RandomStream rs = derive_stream(61, "artifact-rt");
    Instance inst;
    inst.features.resize(6);
    for (int j = 0; j < 6; ++j) inst.features[j] = 0.5 + rs.uniform();
    inst.background = 0.0;
    inst.shape = std::make_pair(2, 3);

    Eigen::MatrixXd X(30, 6);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) {
        for (int j = 0; j < 6; ++j) X(i, j) = rs.normal();
        y[i] = X(i, 0) - X(i, 4) + 0.2 * rs.normal();
    }
    const BayesLinearPosterior post = fit_bayes_linear(X, y, 1.0);

    ExplainOptions opts;
    opts.seed = 7;
    opts.num_perturbations = 60;
    opts.solver.num_lambdas = 8;
    opts.store_per_sample = true;
    opts.model_source_label = "builtin:test";
    const PredictFn fn = [&](const Eigen::MatrixXd& Z) {
        return predict_bayes_linear(post, Z, 3, derive_seed(opts.seed, "posterior"));
    };
    const ExplainResult result = run_explain(inst, fn, opts);

    const auto dir = testsup::test_tmp_dir("artifact-rt");
    const auto path = dir / "a.json";
    save_artifact(result.artifact, path.string());
    const ExplanationArtifact loaded = load_artifact(path.string());
    REQUIRE(artifact_to_json(loaded) == artifact_to_json(result.artifact));

    // a reloaded artifact renders identically to the in-memory result
    RenderRequest req;
    req.what = RenderWhat::mean;
    const RenderedMap from_memory = render_map(result.artifact, req);
    const RenderedMap from_disk = render_map(loaded, req);
    REQUIRE(from_memory.pixels == from_disk.pixels);
    req.what = RenderWhat::sample;
    req.sample_index = 2;
    REQUIRE(render_map(result.artifact, req).pixels == render_map(loaded, req).pixels);

    // variance of an L = 1 run renders all black
    const PredictFn fn1 = [&](const Eigen::MatrixXd& Z) {
        return predict_bayes_linear(post, Z, 1, derive_seed(opts.seed, "posterior"));
    };
    const ExplainResult single = run_explain(inst, fn1, opts);
    req.what = RenderWhat::variance;
    req.at_selected = true;
    for (int px : render_map(single.artifact, req).pixels) REQUIRE(px == 0);
}

TEST_CASE("pgm io") {
    const auto dir = testsup::test_tmp_dir("pgm");

    SECTION("write/read round trip with maxval normalization") {
        const auto path = dir / "img.pgm";
        write_pgm_file(path.string(), 2, 3, {0, 127, 255, 10, 20, 30});
        const Instance inst = read_instance_file(path.string(), 0.0);
        REQUIRE(inst.shape == std::make_pair(2, 3));
        REQUIRE(inst.features.size() == 6);
        REQUIRE(inst.features[0] == 0.0);
        REQUIRE(inst.features[2] == 1.0);
        REQUIRE(inst.features[3] == Catch::Approx(10.0 / 255.0));
    }

    SECTION("comments and whitespace are tolerated") {
        std::istringstream in("P2\n# a comment\n2 2 # trailing\n4\n0 1\n2 4\n");
        const Instance inst = read_pgm_instance(in, 0.0);
        REQUIRE(inst.features[3] == 1.0);
        REQUIRE(inst.features[1] == 0.25);
    }

    SECTION("malformed inputs raise") {
        std::istringstream bad_magic("P5\n1 1\n255\n0\n");
        REQUIRE_THROWS(read_pgm_instance(bad_magic, 0.0));
        std::istringstream short_pixels("P2\n2 2\n255\n0 1 2\n");
        REQUIRE_THROWS(read_pgm_instance(short_pixels, 0.0));
        std::istringstream out_of_range("P2\n1 1\n255\n300\n");
        REQUIRE_THROWS(read_pgm_instance(out_of_range, 0.0));
    }
}

TEST_CASE("csv instance parsing") {
    std::istringstream in("0.5,1.25,-3,0\n");
    const Instance inst = read_csv_instance(in, 0.0);
    REQUIRE(inst.features.size() == 4);
    REQUIRE(inst.features[1] == 1.25);
    REQUIRE(inst.features[2] == -3.0);
    REQUIRE_FALSE(inst.shape.has_value());

    std::istringstream junk("a,b\n");
    REQUIRE_THROWS(read_csv_instance(junk, 0.0));
    std::istringstream empty("");
    REQUIRE_THROWS(read_csv_instance(empty, 0.0));
}

TEST_CASE("power curve TSV format") {
    PowerCurve curve;
    curve.points.push_back({0.123456789123, 0.0, 0.0});
    curve.points.push_back({0.05, 3.5, 0.87654321101});
    std::ostringstream out;
    write_power_curve_tsv(curve, out);
    REQUIRE(out.str() == "0.123456789\t0\t0\n0.05\t3.5\t0.876543211\n");
}
