#include "kllime/perturb.hpp"

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace kllime;

namespace {

Instance make_instance(std::initializer_list<double> values, double background) {
    Instance inst;
    inst.features.resize(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) inst.features[i++] = v;
    inst.background = background;
    return inst;
}

} // namespace

TEST_CASE("interpretable representation marks non-background positions") {
    const Instance inst = make_instance({0.0, 0.7, 0.3}, 0.0);
    const InterpretableRep rep = interpretable_rep(inst);
    REQUIRE(rep.active == std::vector<std::uint8_t>{0, 1, 1});
    REQUIRE(rep.active_count == 2);
    REQUIRE(rep.active_idx == std::vector<int>{1, 2});
}

TEST_CASE("all-background instance has empty active set") {
    const Instance inst = make_instance({0.5, 0.5}, 0.5);
    const InterpretableRep rep = interpretable_rep(inst);
    REQUIRE(rep.active == std::vector<std::uint8_t>{0, 0});
    REQUIRE(rep.active_count == 0);
}

TEST_CASE("all-foreground 784-dim instance is fully active") {
    Instance inst;
    inst.features = Eigen::VectorXd::Ones(784);
    inst.background = 0.0;
    REQUIRE(interpretable_rep(inst).active_count == 784);
}

TEST_CASE("rho_fixed = 0 reproduces the instance in every row") {
    const Instance inst = make_instance({0.0, 0.7, 0.3, 0.9}, 0.0);
    const InterpretableRep rep = interpretable_rep(inst);
    LocalityConfig cfg;
    cfg.num_samples = 20;
    cfg.rho_fixed = 0.0;
    const PerturbationBatch batch = sample_perturbations(inst, rep, cfg);
    for (Eigen::Index i = 0; i < batch.size(); ++i)
        for (Eigen::Index j = 0; j < batch.dim(); ++j) {
            REQUIRE(batch.originals(i, j) == inst.features[j]);
            REQUIRE(batch.reps(i, j) ==
                    (rep.active[static_cast<std::size_t>(j)] ? 1.0 : 0.0));
        }
}

TEST_CASE("rho_fixed = 1 masks everything") {
    const Instance inst = make_instance({0.0, 0.7, 0.3, 0.9}, 0.0);
    const InterpretableRep rep = interpretable_rep(inst);
    LocalityConfig cfg;
    cfg.num_samples = 20;
    cfg.rho_fixed = 1.0;
    const PerturbationBatch batch = sample_perturbations(inst, rep, cfg);
    REQUIRE((batch.originals.array() == inst.background).all());
    REQUIRE((batch.reps.array() == 0.0).all());
}

TEST_CASE("uniform zeroing probability masks about half the bits") {
    Instance inst;
    inst.features = Eigen::VectorXd::Ones(100);
    inst.background = 0.0;
    const InterpretableRep rep = interpretable_rep(inst);
    LocalityConfig cfg;
    cfg.beta_a = 1.0;
    cfg.beta_b = 1.0;
    cfg.num_samples = 10000;
    cfg.seed = 7;
    const PerturbationBatch batch = sample_perturbations(inst, rep, cfg);
    // fraction of masked active bits; E[rho] = 0.5 under Beta(1,1)
    const double kept = batch.reps.sum();
    const double masked_fraction = 1.0 - kept / (10000.0 * 100.0);
    REQUIRE(masked_fraction > 0.48);
    REQUIRE(masked_fraction < 0.52);
}

TEST_CASE("identical configuration gives bit-identical batches") {
    const Instance inst = make_instance({0.0, 0.7, 0.3, 0.9, 0.1}, 0.0);
    const InterpretableRep rep = interpretable_rep(inst);
    LocalityConfig cfg;
    cfg.beta_a = 2.0;
    cfg.beta_b = 3.0;
    cfg.num_samples = 64;
    cfg.seed = 123456;
    const PerturbationBatch a = sample_perturbations(inst, rep, cfg);
    const PerturbationBatch b = sample_perturbations(inst, rep, cfg);
    REQUIRE((a.originals.array() == b.originals.array()).all());
    REQUIRE((a.reps.array() == b.reps.array()).all());
    REQUIRE((a.weights.array() == b.weights.array()).all());
}

TEST_CASE("dominance and reconstruction hold for random batches") {
    kllime::RandomStream rs = derive_stream(99, "perturb-prop");
    for (int trial = 0; trial < 10; ++trial) {
        Instance inst;
        const int d = 3 + static_cast<int>(rs.uniform() * 12);
        inst.features.resize(d);
        inst.background = 0.25;
        for (int j = 0; j < d; ++j)
            inst.features[j] = rs.uniform() < 0.3 ? inst.background : rs.uniform() + 0.5;
        const InterpretableRep rep = interpretable_rep(inst);
        LocalityConfig cfg;
        cfg.beta_a = 0.5 + rs.uniform() * 2.0;
        cfg.beta_b = 0.5 + rs.uniform() * 2.0;
        cfg.num_samples = 50;
        cfg.seed = rs.next_u64();
        const PerturbationBatch batch = sample_perturbations(inst, rep, cfg);
        batch.validate();
        for (Eigen::Index i = 0; i < batch.size(); ++i)
            for (Eigen::Index j = 0; j < batch.dim(); ++j) {
                REQUIRE(batch.reps(i, j) <=
                        static_cast<double>(rep.active[static_cast<std::size_t>(j)]));
                const double reconstructed =
                    batch.reps(i, j) == 1.0 ? inst.features[j] : inst.background;
                REQUIRE(batch.originals(i, j) == reconstructed);
            }
    }
}

TEST_CASE("weight override validates the sum") {
    const Instance inst = make_instance({1.0, 2.0}, 0.0);
    const InterpretableRep rep = interpretable_rep(inst);
    LocalityConfig cfg;
    cfg.num_samples = 4;
    const PerturbationBatch batch = sample_perturbations(inst, rep, cfg);
    Eigen::VectorXd good(4);
    good << 0.4, 0.3, 0.2, 0.1;
    REQUIRE_NOTHROW(batch.with_weights(good));
    Eigen::VectorXd bad(4);
    bad << 0.4, 0.3, 0.2, 0.2;
    REQUIRE_THROWS_AS(batch.with_weights(bad), std::invalid_argument);
    Eigen::VectorXd negative(4);
    negative << 1.2, -0.2, 0.0, 0.0;
    REQUIRE_THROWS_AS(batch.with_weights(negative), std::invalid_argument);
}

TEST_CASE("locality config validation") {
    LocalityConfig cfg;
    cfg.beta_a = 0.0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.num_samples = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.rho_fixed = 1.5;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}
