#pragma once

// Built-in predictive-distribution sources with exact posterior sampling:
// conjugate Bayesian linear regression (normal-inverse-gamma) and Laplace-
// approximated Bayesian logistic regression. Both are immutable after fit;
// sampling is a pure function of (posterior, inputs, L, seed).

#include "kllime/divergence.hpp"
#include "kllime/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace kllime {

// Conjugate update with prior theta | s2 ~ N(0, s2/alpha I), s2 ~ IG(a0, b0).
struct BayesLinearPosterior {
    Eigen::VectorXd coef_mean;       // m_n
    Eigen::MatrixXd coef_scale;      // V_n, coefficient covariance is s2 * V_n
    Eigen::MatrixXd coef_scale_chol; // lower Cholesky factor of V_n
    double a_n = 1.0;
    double b_n = 1.0;
    Eigen::Index num_train = 0;
    bool degenerate = false; // test constructor: zero covariance, fixed s2
    double fixed_sigma2 = 1.0;

    // Point-mass posterior at (mean, sigma2); used to pin predictions in tests.
    static BayesLinearPosterior point_mass(Eigen::VectorXd mean, double sigma2) {
        BayesLinearPosterior post;
        const Eigen::Index d = mean.size();
        post.coef_mean = std::move(mean);
        post.coef_scale = Eigen::MatrixXd::Zero(d, d);
        post.coef_scale_chol = Eigen::MatrixXd::Zero(d, d);
        post.degenerate = true;
        post.fixed_sigma2 = sigma2;
        return post;
    }
};

inline BayesLinearPosterior fit_bayes_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                             double alpha, double a0 = 1.0, double b0 = 1.0) {
    if (X.rows() != y.size()) throw std::invalid_argument("bayes_linear: X/y size mismatch");
    if (X.rows() < 1) throw std::invalid_argument("bayes_linear: need at least one row");
    if (!(alpha > 0.0)) throw std::invalid_argument("bayes_linear: alpha must be > 0");
    if (!(a0 > 0.0) || !(b0 > 0.0))
        throw std::invalid_argument("bayes_linear: noise prior must be positive");
    const Eigen::Index d = X.cols();
    const Eigen::MatrixXd A =
        alpha * Eigen::MatrixXd::Identity(d, d) + X.transpose() * X;
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("bayes_linear: posterior precision factorization failed");
    BayesLinearPosterior post;
    post.coef_mean = llt.solve(X.transpose() * y);
    post.coef_scale = llt.solve(Eigen::MatrixXd::Identity(d, d));
    Eigen::LLT<Eigen::MatrixXd> llt_scale(post.coef_scale);
    if (llt_scale.info() != Eigen::Success)
        throw std::runtime_error("bayes_linear: covariance factorization failed");
    post.coef_scale_chol = llt_scale.matrixL();
    post.a_n = a0 + 0.5 * static_cast<double>(X.rows());
    post.b_n = b0 + 0.5 * (y.dot(y) - post.coef_mean.dot(A * post.coef_mean));
    if (!(post.b_n > 0.0)) post.b_n = 1e-12; // numerical floor; exact value is >= b0 > 0
    post.num_train = X.rows();
    return post;
}

// Row l: mu = Z theta^(l), sigma2 = s2^(l), with (theta, s2)^(l) drawn jointly
// from the posterior. Each sample has its own derived stream.
inline PredictionMatrix predict_bayes_linear(const BayesLinearPosterior& post,
                                             const Eigen::MatrixXd& Z, int L,
                                             std::uint64_t seed) {
    if (L < 1) throw std::invalid_argument("predict: L must be >= 1");
    if (Z.cols() != post.coef_mean.size())
        throw std::invalid_argument("predict: input dimension mismatch");
    const Eigen::Index n = Z.rows();
    const Eigen::Index d = Z.cols();
    Eigen::MatrixXd mu(L, n), s2(L, n);
    for (int l = 0; l < L; ++l) {
        RandomStream rs = derive_stream(seed, "bayes-linear.sample", static_cast<std::uint64_t>(l));
        double sigma2;
        Eigen::VectorXd theta(d);
        if (post.degenerate) {
            sigma2 = post.fixed_sigma2;
            theta = post.coef_mean;
        } else {
            sigma2 = post.b_n / rs.gamma(post.a_n);
            Eigen::VectorXd z(d);
            for (Eigen::Index j = 0; j < d; ++j) z[j] = rs.normal();
            theta = post.coef_mean + std::sqrt(sigma2) * (post.coef_scale_chol * z);
        }
        mu.row(l) = (Z * theta).transpose();
        s2.row(l).setConstant(sigma2);
    }
    return PredictionMatrix::gaussian(std::move(mu), std::move(s2));
}

// MAP + Laplace approximation for logistic regression with a N(0, 1/alpha I)
// prior; the covariance is the inverse Hessian at the MAP.
struct BayesLogisticPosterior {
    Eigen::VectorXd coef_map;
    Eigen::MatrixXd covariance;      // (X' W X + alpha I)^-1 at the MAP
    Eigen::MatrixXd covariance_chol; // lower Cholesky factor
    int newton_iters = 0;
};

inline BayesLogisticPosterior fit_bayes_logistic(const Eigen::MatrixXd& X,
                                                 const Eigen::VectorXd& y, double alpha,
                                                 double grad_tol = 1e-10, int max_iters = 100) {
    if (X.rows() != y.size()) throw std::invalid_argument("bayes_logistic: X/y size mismatch");
    if (!(alpha > 0.0)) throw std::invalid_argument("bayes_logistic: alpha must be > 0");
    for (Eigen::Index i = 0; i < y.size(); ++i)
        if (y[i] != 0.0 && y[i] != 1.0)
            throw std::invalid_argument("bayes_logistic: labels must be 0/1");
    const Eigen::Index d = X.cols();
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd hessian;
    BayesLogisticPosterior post;
    bool converged = false;
    for (int it = 0; it < max_iters; ++it) {
        const Eigen::VectorXd eta = X * theta;
        Eigen::VectorXd q(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) q[i] = 1.0 / (1.0 + std::exp(-eta[i]));
        const Eigen::VectorXd grad = X.transpose() * (y - q) - alpha * theta;
        post.newton_iters = it;
        if (grad.norm() <= grad_tol) {
            converged = true;
            break;
        }
        const Eigen::VectorXd wdiag = (q.array() * (1.0 - q.array())).matrix();
        hessian = X.transpose() * wdiag.asDiagonal() * X +
                  alpha * Eigen::MatrixXd::Identity(d, d);
        Eigen::LLT<Eigen::MatrixXd> llt(hessian);
        if (llt.info() != Eigen::Success)
            throw std::runtime_error("bayes_logistic: Hessian factorization failed");
        Eigen::VectorXd step = llt.solve(grad);
        // Backtrack if the penalized log-likelihood would decrease.
        auto objective = [&](const Eigen::VectorXd& t) {
            const Eigen::VectorXd e = X * t;
            double ll = 0.0;
            for (Eigen::Index i = 0; i < e.size(); ++i) {
                // log(1 + exp(e)) computed stably
                const double a = e[i];
                const double softplus = a > 0 ? a + std::log1p(std::exp(-a))
                                              : std::log1p(std::exp(a));
                ll += y[i] * a - softplus;
            }
            return ll - 0.5 * alpha * t.squaredNorm();
        };
        const double f0 = objective(theta);
        // Reject only steps that decrease the objective beyond rounding
        // noise; near the optimum improvements are below fp resolution and
        // full Newton steps must go through for quadratic convergence.
        const double slack = 1e-12 * (1.0 + std::abs(f0));
        double t = 1.0;
        Eigen::VectorXd cand = theta + step;
        for (int h = 0; h < 40 && objective(cand) < f0 - slack; ++h) {
            t *= 0.5;
            cand = theta + t * step;
        }
        theta = cand;
    }
    if (!converged) throw std::runtime_error("bayes_logistic: Newton did not converge");
    // Hessian at the MAP point.
    const Eigen::VectorXd eta = X * theta;
    Eigen::VectorXd q(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) q[i] = 1.0 / (1.0 + std::exp(-eta[i]));
    const Eigen::VectorXd wdiag = (q.array() * (1.0 - q.array())).matrix();
    hessian = X.transpose() * wdiag.asDiagonal() * X + alpha * Eigen::MatrixXd::Identity(d, d);
    Eigen::LLT<Eigen::MatrixXd> llt(hessian);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("bayes_logistic: Hessian factorization failed");
    post.coef_map = theta;
    post.covariance = llt.solve(Eigen::MatrixXd::Identity(d, d));
    Eigen::LLT<Eigen::MatrixXd> llt_cov(post.covariance);
    if (llt_cov.info() != Eigen::Success)
        throw std::runtime_error("bayes_logistic: covariance factorization failed");
    post.covariance_chol = llt_cov.matrixL();
    return post;
}

inline PredictionMatrix predict_bayes_logistic(const BayesLogisticPosterior& post,
                                               const Eigen::MatrixXd& Z, int L,
                                               std::uint64_t seed) {
    if (L < 1) throw std::invalid_argument("predict: L must be >= 1");
    if (Z.cols() != post.coef_map.size())
        throw std::invalid_argument("predict: input dimension mismatch");
    const Eigen::Index n = Z.rows();
    const Eigen::Index d = Z.cols();
    Eigen::MatrixXd p(L, n);
    for (int l = 0; l < L; ++l) {
        RandomStream rs =
            derive_stream(seed, "bayes-logistic.sample", static_cast<std::uint64_t>(l));
        Eigen::VectorXd z(d);
        for (Eigen::Index j = 0; j < d; ++j) z[j] = rs.normal();
        const Eigen::VectorXd theta = post.coef_map + post.covariance_chol * z;
        const Eigen::VectorXd eta = Z * theta;
        for (Eigen::Index i = 0; i < n; ++i)
            p(l, i) = clamp_probability(1.0 / (1.0 + std::exp(-eta[i])));
    }
    return PredictionMatrix::bernoulli(std::move(p));
}

} // namespace kllime
