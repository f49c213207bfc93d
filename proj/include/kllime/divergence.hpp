#pragma once

// Kullback-Leibler divergences between predictive distributions, the total
// information loss of an explanation, and the relative explanatory power.
//
// All divergences are in nats. Probabilities are clamped to
// [kEpsProb, 1 - kEpsProb] at construction so saturated model outputs never
// produce infinities; variances are floored at kMinVariance.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace kllime {

inline constexpr double kEpsProb = 1e-12;
inline constexpr double kMinVariance = 1e-12;
inline constexpr double kMinPowerDenominator = 1e-15;

enum class Family { bernoulli, gaussian };

inline std::string family_name(Family f) {
    return f == Family::bernoulli ? "bernoulli" : "gaussian";
}

inline Family parse_family(const std::string& s) {
    if (s == "bernoulli") return Family::bernoulli;
    if (s == "gaussian") return Family::gaussian;
    throw std::invalid_argument("unknown family: " + s);
}

// Raised when the full model is indistinguishable from the null model and
// Eq.-style power ratios are undefined.
struct UndefinedPowerError : std::domain_error {
    using std::domain_error::domain_error;
};

inline double clamp_probability(double p) {
    if (!(p >= 0.0) || !(p <= 1.0))
        throw std::domain_error("probability outside [0,1]");
    return p < kEpsProb ? kEpsProb : (p > 1.0 - kEpsProb ? 1.0 - kEpsProb : p);
}

inline double clamp_variance(double v) {
    if (!(v > 0.0)) throw std::domain_error("variance must be positive");
    return v < kMinVariance ? kMinVariance : v;
}

inline double kl_bernoulli(double p, double q) {
    p = clamp_probability(p);
    q = clamp_probability(q);
    return p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
}

inline double kl_gaussian(double mu1, double sigma2_1, double mu2, double sigma2_2) {
    sigma2_1 = clamp_variance(sigma2_1);
    sigma2_2 = clamp_variance(sigma2_2);
    const double dm = mu1 - mu2;
    return 0.5 * (std::log(sigma2_2 / sigma2_1) + (sigma2_1 + dm * dm) / sigma2_2 - 1.0);
}

// L x N predictive-distribution parameters from the explained model.
// Row l holds the predictions of posterior sample l over the N locality
// points; L = 1 encodes a plain point-estimate model.
struct PredictionMatrix {
    Family family = Family::bernoulli;
    Eigen::MatrixXd location; // p for bernoulli, mu for gaussian
    Eigen::MatrixXd sigma2;   // gaussian only; empty for bernoulli

    Eigen::Index samples() const { return location.rows(); }  // L
    Eigen::Index points() const { return location.cols(); }   // N

    static PredictionMatrix bernoulli(Eigen::MatrixXd p) {
        if (p.rows() < 1 || p.cols() < 1)
            throw std::invalid_argument("prediction matrix: L and N must be >= 1");
        for (Eigen::Index l = 0; l < p.rows(); ++l)
            for (Eigen::Index i = 0; i < p.cols(); ++i)
                p(l, i) = clamp_probability(p(l, i));
        PredictionMatrix m;
        m.family = Family::bernoulli;
        m.location = std::move(p);
        return m;
    }

    static PredictionMatrix gaussian(Eigen::MatrixXd mu, Eigen::MatrixXd s2) {
        if (mu.rows() < 1 || mu.cols() < 1)
            throw std::invalid_argument("prediction matrix: L and N must be >= 1");
        if (mu.rows() != s2.rows() || mu.cols() != s2.cols())
            throw std::invalid_argument("prediction matrix: mu/sigma2 shape mismatch");
        for (Eigen::Index l = 0; l < s2.rows(); ++l)
            for (Eigen::Index i = 0; i < s2.cols(); ++i) {
                if (!std::isfinite(mu(l, i)))
                    throw std::domain_error("prediction matrix: non-finite mu");
                s2(l, i) = clamp_variance(s2(l, i));
            }
        PredictionMatrix m;
        m.family = Family::gaussian;
        m.location = std::move(mu);
        m.sigma2 = std::move(s2);
        return m;
    }
};

namespace detail {

// Ascending scalar accumulations, shared by every caller that must agree
// bitwise on the same sum (lambda_max vs. solver sweeps, information_loss
// vs. per-model kl_loss).
[[gnu::noinline]] inline double sum_asc(const double* v, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += v[i];
    return s;
}

inline double sum_asc(const Eigen::VectorXd& v) { return sum_asc(v.data(), v.size()); }

[[gnu::noinline]] inline double dot_asc(const double* a, const double* b, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Weighted KL between two rows of same-family predictions.
[[gnu::noinline]] inline double weighted_row_kl_bernoulli(const double* p, const double* q,
                                                          const double* w, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += w[i] * kl_bernoulli(p[i], q[i]);
    return s;
}

[[gnu::noinline]] inline double weighted_row_kl_gaussian(const double* mu1, const double* s1,
                                                         const double* mu2, const double* s2,
                                                         const double* w, Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += w[i] * kl_gaussian(mu1[i], s1[i], mu2[i], s2[i]);
    return s;
}

} // namespace detail

// Total information loss: posterior- and locality-averaged KL from the full
// model to the explanation, (1/L) sum_l sum_i w_i KL(full[l][i] || expl[l][i]).
inline double information_loss(const PredictionMatrix& full, const PredictionMatrix& expl,
                               const Eigen::VectorXd& weights) {
    if (full.family != expl.family)
        throw std::invalid_argument("information_loss: family mismatch");
    if (full.samples() != expl.samples() || full.points() != expl.points())
        throw std::invalid_argument("information_loss: shape mismatch");
    if (weights.size() != full.points())
        throw std::invalid_argument("information_loss: weight length mismatch");
    const Eigen::Index L = full.samples();
    const Eigen::Index N = full.points();
    // Row-major access: copy rows out so the inner loops are contiguous.
    Eigen::VectorXd fr(N), er(N), fs(N), es(N);
    double total = 0.0;
    for (Eigen::Index l = 0; l < L; ++l) {
        fr = full.location.row(l);
        er = expl.location.row(l);
        if (full.family == Family::bernoulli) {
            total += detail::weighted_row_kl_bernoulli(fr.data(), er.data(), weights.data(), N);
        } else {
            fs = full.sigma2.row(l);
            es = expl.sigma2.row(l);
            total += detail::weighted_row_kl_gaussian(fr.data(), fs.data(), er.data(), es.data(),
                                                      weights.data(), N);
        }
    }
    return total / static_cast<double>(L);
}

// Relative explanatory power 1 - delta_s / delta_0. Undefined when the full
// model carries no information relative to the null model.
inline double relative_power(double delta_s, double delta_0) {
    if (!(delta_s >= 0.0)) throw std::domain_error("relative_power: delta_s must be >= 0");
    if (delta_0 < kMinPowerDenominator)
        throw UndefinedPowerError(
            "relative explanatory power is undefined: the full model is "
            "indistinguishable from the null model (delta_0 < 1e-15)");
    return 1.0 - delta_s / delta_0;
}

} // namespace kllime
