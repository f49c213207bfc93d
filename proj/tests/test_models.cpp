#include "kllime/models.hpp"

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace kllime;

TEST_CASE("bayes linear: zero targets give zero posterior mean") {
    RandomStream rs = derive_stream(41, "bl-zero");
    Eigen::MatrixXd X(12, 3);
    for (Eigen::Index i = 0; i < X.size(); ++i) X(i / 3, i % 3) = rs.normal();
    const Eigen::VectorXd y = Eigen::VectorXd::Zero(12);
    const BayesLinearPosterior post = fit_bayes_linear(X, y, 0.5);
    REQUIRE(post.coef_mean.norm() == 0.0);
}

TEST_CASE("bayes linear: ridge closed form in one dimension") {
    Eigen::MatrixXd X(2, 1);
    X << 1.0, 1.0;
    Eigen::VectorXd y(2);
    y << 1.0, 1.0;
    for (const double alpha : {1.0, 1e-4, 1e-8}) {
        const BayesLinearPosterior post = fit_bayes_linear(X, y, alpha);
        REQUIRE(std::abs(post.coef_mean[0] - 2.0 / (2.0 + alpha)) < 1e-12);
    }
    // alpha -> 0 limit: coefficient mean -> 1
    const BayesLinearPosterior post = fit_bayes_linear(X, y, 1e-10);
    REQUIRE(std::abs(post.coef_mean[0] - 1.0) < 1e-9);
}

TEST_CASE("bayes linear: duplicating the data shrinks the covariance") {
    RandomStream rs = derive_stream(42, "bl-shrink");
    Eigen::MatrixXd X(20, 4);
    Eigen::VectorXd y(20);
    for (int i = 0; i < 20; ++i) {
        for (int j = 0; j < 4; ++j) X(i, j) = rs.normal();
        y[i] = rs.normal();
    }
    Eigen::MatrixXd X2(40, 4);
    Eigen::VectorXd y2(40);
    X2 << X, X;
    y2 << y, y;
    const BayesLinearPosterior a = fit_bayes_linear(X, y, 1.0);
    const BayesLinearPosterior b = fit_bayes_linear(X2, y2, 1.0);
    REQUIRE(b.coef_scale.trace() < a.coef_scale.trace());
}

TEST_CASE("bayes linear prediction: degenerate posterior is exact and seeded draws repeat") {
    RandomStream rs = derive_stream(43, "bl-pred");
    Eigen::VectorXd mean(3);
    mean << 0.5, -1.0, 2.0;
    const BayesLinearPosterior post = BayesLinearPosterior::point_mass(mean, 0.25);
    Eigen::MatrixXd Z(5, 3);
    for (Eigen::Index i = 0; i < Z.size(); ++i) Z(i / 3, i % 3) = rs.normal();
    const PredictionMatrix preds = predict_bayes_linear(post, Z, 1, 9);
    const Eigen::VectorXd expected = Z * mean;
    for (Eigen::Index i = 0; i < 5; ++i) {
        REQUIRE(preds.location(0, i) == expected[i]);
        REQUIRE(preds.sigma2(0, i) == 0.25);
    }

    Eigen::MatrixXd X(30, 3);
    Eigen::VectorXd y(30);
    for (int i = 0; i < 30; ++i) {
        for (int j = 0; j < 3; ++j) X(i, j) = rs.normal();
        y[i] = X(i, 0) - 2.0 * X(i, 2) + 0.3 * rs.normal();
    }
    const BayesLinearPosterior fitted = fit_bayes_linear(X, y, 1.0);
    const PredictionMatrix p1 = predict_bayes_linear(fitted, Z, 7, 1234);
    const PredictionMatrix p2 = predict_bayes_linear(fitted, Z, 7, 1234);
    REQUIRE((p1.location.array() == p2.location.array()).all());
    REQUIRE((p1.sigma2.array() == p2.sigma2.array()).all());
    const PredictionMatrix p3 = predict_bayes_linear(fitted, Z, 7, 1235);
    REQUIRE_FALSE((p1.location.array() == p3.location.array()).all());
}

TEST_CASE("bayes linear prediction: Monte Carlo mean concentrates on Z theta_mean") {
    RandomStream rs = derive_stream(44, "bl-mc");
    Eigen::MatrixXd X(50, 2);
    Eigen::VectorXd y(50);
    for (int i = 0; i < 50; ++i) {
        X(i, 0) = rs.normal();
        X(i, 1) = rs.normal();
        y[i] = 1.5 * X(i, 0) - 0.5 * X(i, 1) + 0.5 * rs.normal();
    }
    const BayesLinearPosterior post = fit_bayes_linear(X, y, 1.0);
    Eigen::MatrixXd Z(4, 2);
    Z << 1, 0, 0, 1, 1, 1, -1, 2;
    const int L = 10000;
    const PredictionMatrix preds = predict_bayes_linear(post, Z, L, 2024);
    const Eigen::VectorXd expected = Z * post.coef_mean;
    const double e_sigma2 = post.b_n / (post.a_n - 1.0);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const double mc_mean = preds.location.col(i).mean();
        const double var_mu =
            e_sigma2 * (Z.row(i) * post.coef_scale * Z.row(i).transpose())(0, 0);
        const double se = std::sqrt(var_mu / L);
        REQUIRE(std::abs(mc_mean - expected[i]) <= 3.0 * se + 1e-12);
    }
}

TEST_CASE("bayes logistic: symmetric data zeroes the bias coefficient") {
    RandomStream rs = derive_stream(45, "blog-sym");
    const int n = 40, d = 3;
    Eigen::MatrixXd X(2 * n, d + 1);
    Eigen::VectorXd y(2 * n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) {
            const double v = rs.normal();
            X(i, j) = v;
            X(n + i, j) = -v;
        }
        X(i, d) = 1.0;
        X(n + i, d) = 1.0;
        const double label = rs.bernoulli(0.5) ? 1.0 : 0.0;
        y[i] = label;
        y[n + i] = 1.0 - label;
    }
    const BayesLogisticPosterior post = fit_bayes_logistic(X, y, 1.0);
    REQUIRE(std::abs(post.coef_map[d]) < 1e-8);
}

TEST_CASE("bayes logistic: gradient vanishes at the MAP") {
    RandomStream rs = derive_stream(46, "blog-map");
    const int n = 60, d = 4;
    Eigen::MatrixXd X(n, d);
    Eigen::VectorXd y(n);
    Eigen::VectorXd truth(d);
    for (int j = 0; j < d; ++j) truth[j] = rs.normal();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) X(i, j) = rs.normal();
        const double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(truth)));
        y[i] = rs.bernoulli(p) ? 1.0 : 0.0;
    }
    const double alpha = 0.7;
    const BayesLogisticPosterior post = fit_bayes_logistic(X, y, alpha);
    Eigen::VectorXd q(n);
    for (int i = 0; i < n; ++i)
        q[i] = 1.0 / (1.0 + std::exp(-X.row(i).dot(post.coef_map)));
    const Eigen::VectorXd grad = X.transpose() * (y - q) - alpha * post.coef_map;
    REQUIRE(grad.norm() <= 1e-8);

    // Laplace sampling concentrates on the MAP; with an identity design the
    // logit of each prediction recovers the sampled coordinate.
    Eigen::MatrixXd Z = Eigen::MatrixXd::Identity(d, d);
    const int L = 10000;
    const PredictionMatrix draws = predict_bayes_logistic(post, Z, L, 77);
    for (int j = 0; j < d; ++j) {
        double mean_theta = 0.0;
        for (int l = 0; l < L; ++l) {
            const double p = draws.location(l, j);
            mean_theta += std::log(p / (1.0 - p));
        }
        mean_theta /= L;
        const double se = std::sqrt(post.covariance(j, j) / L);
        REQUIRE(std::abs(mean_theta - post.coef_map[j]) <= 3.0 * se + 1e-12);
    }

    // prediction determinism and clamping
    const PredictionMatrix p1 = predict_bayes_logistic(post, X, 5, 0);
    const PredictionMatrix p2 = predict_bayes_logistic(post, X, 5, 0);
    REQUIRE((p1.location.array() == p2.location.array()).all());
    REQUIRE((p1.location.array() >= kEpsProb).all());
    REQUIRE((p1.location.array() <= 1.0 - kEpsProb).all());
}

TEST_CASE("model input validation") {
    Eigen::MatrixXd X(3, 2);
    X.setZero();
    Eigen::VectorXd y(2);
    y.setZero();
    REQUIRE_THROWS_AS(fit_bayes_linear(X, y, 1.0), std::invalid_argument);
    Eigen::VectorXd y3(3);
    y3 << 0.0, 0.5, 1.0; // not 0/1
    REQUIRE_THROWS_AS(fit_bayes_logistic(X, y3, 1.0), std::invalid_argument);
    y3 << 0.0, 1.0, 1.0;
    REQUIRE_THROWS_AS(fit_bayes_logistic(X, y3, 0.0), std::invalid_argument);
}
