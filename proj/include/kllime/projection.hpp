#pragma once

// L1-penalized projection of predictive distributions onto sparse
// generalized linear explanation models.
//
// Per posterior sample, the explanation parameters minimize the
// locality-weighted KL divergence from the full model's predictions plus an
// L1 penalty on the coefficients (intercept unpenalized):
//
//   gaussian:  sum_i w_i KL(N(mu_i, s2_i) || N(b0 + b.z_i, sigma_s^2)) + lambda |b|_1
//   bernoulli: sum_i w_i KL(Ber(p_i) || Ber(sigmoid(b0 + b.z_i)))      + lambda |b|_1
//
// The gaussian mean subproblem is weighted least squares of mu on z and is
// solved by cyclic coordinate descent with soft-thresholding; the noise
// variance is then profiled out: sigma_s^2 = sum_i w_i s2_i + weighted mean
// squared residual (its exact minimizer given the mean fit). The bernoulli
// objective is weighted cross-entropy with soft targets and is solved by an
// IRLS outer loop (working weights w_i q_i (1 - q_i)) around the same
// coordinate-descent core, guarded by step-halving so the true objective
// never increases.
//
// Paths are fit in decreasing-lambda order with warm starts on a geometric
// grid anchored at lambda_max, the smallest penalty whose optimum is the
// intercept-only model. Ensembles fit one path per posterior sample on a
// shared grid pooled from the per-sample lambda_max values, so aggregation
// across samples at a grid index is meaningful.

#include "kllime/divergence.hpp"
#include "kllime/perturb.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <vector>

namespace kllime {

inline constexpr double kCoefCap = 1e3;   // separation guard (bernoulli)
inline constexpr double kEtaClamp = 30.0; // IRLS working-weight clamp on |eta|

enum class Representation { binary_presence, identity };

inline std::string representation_name(Representation r) {
    return r == Representation::binary_presence ? "binary-presence" : "identity";
}

inline Representation parse_representation(const std::string& s) {
    if (s == "binary-presence") return Representation::binary_presence;
    if (s == "identity") return Representation::identity;
    throw std::invalid_argument("unknown representation: " + s);
}

struct SolverConfig {
    std::vector<double> lambda_grid; // explicit strictly-decreasing grid; empty = auto
    int num_lambdas = 50;            // auto grid size K
    double lambda_min_ratio = 1e-3;  // auto grid lambda_min / lambda_max
    int max_iters = 10000;           // coordinate-descent sweep budget per fit
    double tol = 1e-7;               // convergence on max absolute coefficient change
    double irls_damping = 1.0;       // in (0, 1]
    Representation representation = Representation::binary_presence;
    int num_threads = 0;             // ensemble fits; 0 = hardware concurrency

    void validate() const {
        for (std::size_t k = 1; k < lambda_grid.size(); ++k)
            if (!(lambda_grid[k] < lambda_grid[k - 1]))
                throw std::invalid_argument("solver: lambda grid must be strictly decreasing");
        for (double l : lambda_grid)
            if (!(l >= 0.0)) throw std::invalid_argument("solver: lambda must be >= 0");
        if (num_lambdas < 1) throw std::invalid_argument("solver: num_lambdas must be >= 1");
        if (!(lambda_min_ratio > 0.0) || !(lambda_min_ratio <= 1.0))
            throw std::invalid_argument("solver: lambda_min_ratio must be in (0,1]");
        if (!(tol > 0.0)) throw std::invalid_argument("solver: tol must be > 0");
        if (max_iters < 1) throw std::invalid_argument("solver: max_iters must be >= 1");
        if (!(irls_damping > 0.0 && irls_damping <= 1.0))
            throw std::invalid_argument("solver: irls_damping must be in (0,1]");
    }
};

struct ExplanationModel {
    Family family = Family::gaussian;
    double intercept = 0.0;
    std::map<int, double> coefficients; // original feature position -> weight, nonzeros only
    double noise_var = 0.0;             // gaussian family: projected sigma_s^2
    double lambda = 0.0;
    double kl_loss = 0.0;
    bool converged = true;
    bool saturated = false;

    int nnz() const { return static_cast<int>(coefficients.size()); }
    double l1_norm() const {
        double s = 0.0;
        for (const auto& [j, b] : coefficients) s += std::abs(b);
        return s;
    }
};

// Compact view of a batch for fitting: active columns only, in either the
// interpretable (binary) or original (identity) space.
struct ProjectionDesign {
    Eigen::MatrixXd Z;          // N x m
    Eigen::VectorXd w;          // N
    double sum_w = 1.0;
    std::vector<int> positions; // compact column -> original feature position
    std::vector<int> compact_of; // original position -> compact column or -1
    // For 0/1 designs: ascending row indices of each column's ones. Sums over
    // the support equal the dense dot products bit for bit (zero entries
    // contribute exactly nothing), so the sparse path is an optimization
    // only.
    bool binary = false;
    std::vector<std::vector<int>> col_support;

    Eigen::Index points() const { return Z.rows(); }
    Eigen::Index cols() const { return Z.cols(); }
};

inline ProjectionDesign make_design(const PerturbationBatch& batch, Representation rep) {
    batch.validate();
    ProjectionDesign d;
    const Eigen::Index n = batch.size();
    const auto m = static_cast<Eigen::Index>(batch.active_idx.size());
    d.Z.resize(n, m);
    const Eigen::MatrixXd& src =
        rep == Representation::binary_presence ? batch.reps : batch.originals;
    d.compact_of.assign(static_cast<std::size_t>(batch.dim()), -1);
    for (Eigen::Index jc = 0; jc < m; ++jc) {
        const int pos = batch.active_idx[static_cast<std::size_t>(jc)];
        d.Z.col(jc) = src.col(pos);
        d.compact_of[static_cast<std::size_t>(pos)] = static_cast<int>(jc);
    }
    d.positions = batch.active_idx;
    d.w = batch.weights;
    d.sum_w = detail::sum_asc(d.w);
    if (rep == Representation::binary_presence) {
        d.binary = true;
        d.col_support.resize(static_cast<std::size_t>(m));
        for (Eigen::Index jc = 0; jc < m; ++jc)
            for (Eigen::Index i = 0; i < n; ++i)
                if (d.Z(i, jc) == 1.0)
                    d.col_support[static_cast<std::size_t>(jc)].push_back(
                        static_cast<int>(i));
    }
    return d;
}

namespace detail {

inline double soft_threshold(double x, double lambda) {
    if (x > lambda) return x - lambda;
    if (x < -lambda) return x + lambda;
    return 0.0;
}

[[gnu::noinline]] inline double sigmoid(double eta) { return 1.0 / (1.0 + std::exp(-eta)); }

// sum_i omega_i * Z(i,j)^2
[[gnu::noinline]] inline double col_weighted_sq(const double* z, const double* omega,
                                                Eigen::Index n) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += omega[i] * z[i] * z[i];
    return s;
}

[[gnu::noinline]] inline double support_sum(const double* v, const std::vector<int>& idx) {
    double s = 0.0;
    for (int i : idx) s += v[static_cast<std::size_t>(i)];
    return s;
}

// Linear predictor over a compact design from a position-keyed coefficient
// map. Shared by the solvers, the null fit, and artifact re-evaluation so
// equal models yield bit-equal predictions.
[[gnu::noinline]] inline Eigen::VectorXd linear_predictor(const ProjectionDesign& design,
                                                          const std::map<int, double>& coef,
                                                          double intercept) {
    Eigen::VectorXd eta = Eigen::VectorXd::Constant(design.points(), intercept);
    for (const auto& [pos, b] : coef) {
        const int jc = design.compact_of[static_cast<std::size_t>(pos)];
        if (jc < 0) throw std::invalid_argument("coefficient outside the active set");
        eta += b * design.Z.col(jc);
    }
    return eta;
}

[[gnu::noinline]] inline Eigen::VectorXd bernoulli_response(const Eigen::VectorXd& eta) {
    Eigen::VectorXd q(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) q[i] = clamp_probability(sigmoid(eta[i]));
    return q;
}

// Weighted-lasso coordinate descent on the working quadratic
//   0.5 sum_i omega_i (y_i - b0 - b.z_i)^2 + lambda |b|_1
// in the weighted-centered parametrization: the centered model's intercept
// is the weighted response mean, a closed form independent of b, so sweeps
// cycle over coefficients only and the columns decouple from the intercept.
// The residual is tracked uncentered, wr_i = omega_i (y_i - b0 - b.z_i),
// which keeps updates sparse for binary designs; centering then reduces to
// two scalars per coordinate:
//   rho_j = <z_j, wr> + delta s_j - c_j (T + delta sum_omega) + a_j b_j
// with s_j = sum_i omega_i z_ij, c_j = s_j / sum_omega, T = sum_i wr_i, and
// delta the intercept drift owed to coefficient moves (settled on exit).
// a_j is the centered curvature sum_i omega_i (z_ij - c_j)^2. The nonzero
// set is iterated between full sweeps (standard active-set strategy).
struct CdContext {
    Eigen::VectorXd s; // per column: sum_i omega_i z_ij
    Eigen::VectorXd c; // s_j / sum_omega
    Eigen::VectorXd a; // centered curvature; <= 0 marks a frozen column
    double sum_omega = 1.0;
};

inline CdContext make_cd_context(const ProjectionDesign& design,
                                 const Eigen::VectorXd& omega) {
    const Eigen::Index m = design.cols();
    CdContext ctx;
    ctx.sum_omega = sum_asc(omega);
    ctx.s.resize(m);
    ctx.c.resize(m);
    ctx.a.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        double sq;
        if (design.binary) {
            ctx.s[j] = support_sum(omega.data(),
                                   design.col_support[static_cast<std::size_t>(j)]);
            sq = ctx.s[j]; // z^2 = z for 0/1 columns
        } else {
            ctx.s[j] = dot_asc(design.Z.col(j).data(), omega.data(), design.points());
            sq = col_weighted_sq(design.Z.col(j).data(), omega.data(), design.points());
        }
        ctx.c[j] = ctx.s[j] / ctx.sum_omega;
        ctx.a[j] = sq - ctx.c[j] * ctx.s[j];
    }
    return ctx;
}

struct CdState {
    Eigen::VectorXd beta; // compact
    double intercept = 0.0;
    Eigen::VectorXd wr;
    double wr_sum = 0.0; // T
    double delta = 0.0;  // pending intercept drift from coefficient moves
    bool converged = true;
    bool saturated = false;
    int sweeps = 0;
};

inline double cd_sweep(const ProjectionDesign& design, const Eigen::VectorXd& omega,
                       const CdContext& ctx, double lambda, double coef_cap,
                       const std::vector<int>* subset, CdState& st) {
    const Eigen::Index n = design.points();
    const Eigen::Index m = design.cols();
    double change = 0.0;
    const Eigen::Index count = subset ? static_cast<Eigen::Index>(subset->size()) : m;
    for (Eigen::Index t = 0; t < count; ++t) {
        const Eigen::Index j = subset ? (*subset)[static_cast<std::size_t>(t)] : t;
        if (!(ctx.a[j] > 0.0)) continue;
        const std::vector<int>* support =
            design.binary ? &design.col_support[static_cast<std::size_t>(j)] : nullptr;
        const double zdot = support ? support_sum(st.wr.data(), *support)
                                    : dot_asc(design.Z.col(j).data(), st.wr.data(), n);
        const double rho = zdot + st.delta * ctx.s[j] -
                           ctx.c[j] * (st.wr_sum + st.delta * ctx.sum_omega) +
                           ctx.a[j] * st.beta[j];
        double bnew = soft_threshold(rho, lambda) / ctx.a[j];
        if (bnew > coef_cap) {
            bnew = coef_cap;
            st.saturated = true;
        } else if (bnew < -coef_cap) {
            bnew = -coef_cap;
            st.saturated = true;
        }
        const double d = bnew - st.beta[j];
        if (d != 0.0) {
            if (support) {
                double* wr = st.wr.data();
                const double* om = omega.data();
                for (int i : *support)
                    wr[static_cast<std::size_t>(i)] -= d * om[static_cast<std::size_t>(i)];
            } else {
                st.wr.array() -= d * (omega.array() * design.Z.col(j).array());
            }
            st.wr_sum -= d * ctx.s[j];
            st.delta += d * ctx.c[j];
            st.beta[j] = bnew;
            change = std::max(change, std::abs(d));
        }
    }
    st.wr_sum = sum_asc(st.wr); // refresh the tracked scalar once per sweep
    return change;
}

#ifndef NDEBUG
inline double cd_quadratic_objective(const Eigen::VectorXd& omega, double lambda,
                                     const CdContext& ctx, const CdState& st) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < omega.size(); ++i)
        if (omega[i] > 0.0) f += 0.5 * st.wr[i] * st.wr[i] / omega[i];
    f += st.delta * sum_asc(st.wr) + 0.5 * st.delta * st.delta * ctx.sum_omega;
    const double l1 = st.beta.cwiseAbs().sum();
    return l1 == 0.0 ? f : f + lambda * l1; // avoids inf * 0 at the null fit
}
#endif

inline void cd_solve(const ProjectionDesign& design, const Eigen::VectorXd& omega,
                     const CdContext& ctx, double lambda, double coef_cap, double tol,
                     int max_sweeps, CdState& st) {
    st.converged = false;
    // Closed-form centered intercept; sweeps never revisit it.
    st.wr_sum = sum_asc(st.wr);
    const double d0 = st.wr_sum / ctx.sum_omega;
    st.intercept += d0;
    st.wr.array() -= d0 * omega.array();
    st.wr_sum = sum_asc(st.wr);
    st.delta = 0.0;
#ifndef NDEBUG
    double dbg_prev = cd_quadratic_objective(omega, lambda, ctx, st);
#endif
    std::vector<int> working;
    while (st.sweeps < max_sweeps) {
        const double change = cd_sweep(design, omega, ctx, lambda, coef_cap, nullptr, st);
        ++st.sweeps;
#ifndef NDEBUG
        {
            const double dbg_now = cd_quadratic_objective(omega, lambda, ctx, st);
            assert(dbg_now <= dbg_prev + 1e-9 * (1.0 + std::abs(dbg_prev)));
            dbg_prev = dbg_now;
        }
#endif
        if (change < tol) {
            st.converged = true;
            break;
        }
        working.clear();
        for (Eigen::Index j = 0; j < st.beta.size(); ++j)
            if (st.beta[j] != 0.0) working.push_back(static_cast<int>(j));
        while (st.sweeps < max_sweeps) {
            const double inner = cd_sweep(design, omega, ctx, lambda, coef_cap, &working, st);
            ++st.sweeps;
#ifndef NDEBUG
            {
                const double dbg_now = cd_quadratic_objective(omega, lambda, ctx, st);
                assert(dbg_now <= dbg_prev + 1e-9 * (1.0 + std::abs(dbg_prev)));
                dbg_prev = dbg_now;
            }
#endif
            if (inner < tol) break;
        }
    }
    // Settle the drift: the uncentered intercept catches up with the moves.
    st.intercept -= st.delta;
    st.delta = 0.0;
}

inline std::map<int, double> compact_to_map(const ProjectionDesign& design,
                                            const Eigen::VectorXd& beta) {
    std::map<int, double> coef;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (beta[j] != 0.0) coef[design.positions[static_cast<std::size_t>(j)]] = beta[j];
    return coef;
}

// Coefficients within rounding noise of zero (relative to the fitted scale)
// are exact zeros of the underlying problem; snap them so sparsity counts
// are not polluted by accumulation residue, e.g. at lambda = 0 with
// constant targets.
inline void snap_numeric_zeros(Eigen::VectorXd& beta, double intercept, double target_scale) {
    if (beta.size() == 0) return;
    const double scale =
        std::max({target_scale, beta.cwiseAbs().maxCoeff(), std::abs(intercept)});
    const double eps = 1e-12 * scale;
    for (Eigen::Index j = 0; j < beta.size(); ++j)
        if (std::abs(beta[j]) <= eps) beta[j] = 0.0;
}

struct WarmStart {
    Eigen::VectorXd beta;
    double intercept = 0.0;
};

inline ExplanationModel project_gaussian_impl(const ProjectionDesign& design,
                                              const Eigen::VectorXd& mu,
                                              const Eigen::VectorXd& sigma2, double lambda,
                                              const SolverConfig& cfg, const WarmStart* warm,
                                              WarmStart* out_state) {
    const Eigen::Index n = design.points();
    const Eigen::Index m = design.cols();
    const Eigen::VectorXd& omega = design.w;
    const CdContext ctx = make_cd_context(design, omega);

    CdState st;
    if (warm) {
        st.beta = warm->beta;
        st.intercept = warm->intercept;
        const Eigen::VectorXd eta = linear_predictor(design, compact_to_map(design, st.beta),
                                                     st.intercept);
        st.wr = (omega.array() * (mu - eta).array()).matrix();
    } else {
        st.beta = Eigen::VectorXd::Zero(m);
        st.intercept = 0.0;
        st.wr = (omega.array() * mu.array()).matrix();
    }
    cd_solve(design, omega, ctx, lambda, std::numeric_limits<double>::infinity(), cfg.tol,
             cfg.max_iters, st);
    snap_numeric_zeros(st.beta, st.intercept,
                       mu.size() > 0 ? mu.cwiseAbs().maxCoeff() : 0.0);

    ExplanationModel model;
    model.family = Family::gaussian;
    model.lambda = lambda;
    model.intercept = st.intercept;
    model.coefficients = compact_to_map(design, st.beta);
    model.converged = st.converged;

    const Eigen::VectorXd eta = linear_predictor(design, model.coefficients, model.intercept);
    const Eigen::VectorXd resid = mu - eta;
    const Eigen::VectorXd ws2 = (design.w.array() * sigma2.array()).matrix();
    const Eigen::VectorXd wr2 = (design.w.array() * resid.array() * resid.array()).matrix();
    model.noise_var = clamp_variance(sum_asc(ws2) + sum_asc(wr2));
    const Eigen::VectorXd s2e = Eigen::VectorXd::Constant(n, model.noise_var);
    model.kl_loss = weighted_row_kl_gaussian(mu.data(), sigma2.data(), eta.data(), s2e.data(),
                                             design.w.data(), n);
    if (out_state) {
        out_state->beta = st.beta;
        out_state->intercept = st.intercept;
    }
    return model;
}

inline double bernoulli_objective(const ProjectionDesign& design, const Eigen::VectorXd& p,
                                  const std::map<int, double>& coef, double intercept,
                                  double lambda) {
    const Eigen::VectorXd eta = linear_predictor(design, coef, intercept);
    const Eigen::VectorXd q = bernoulli_response(eta);
    double l1 = 0.0;
    for (const auto& [j, b] : coef) l1 += std::abs(b);
    const double f = weighted_row_kl_bernoulli(p.data(), q.data(), design.w.data(),
                                               design.points());
    return l1 == 0.0 ? f : f + lambda * l1; // avoids inf * 0 at the null fit
}

inline ExplanationModel project_bernoulli_impl(const ProjectionDesign& design,
                                               const Eigen::VectorXd& p_raw, double lambda,
                                               const SolverConfig& cfg, const WarmStart* warm,
                                               WarmStart* out_state) {
    const Eigen::Index n = design.points();
    const Eigen::Index m = design.cols();
    constexpr int kMaxOuter = 100;

    Eigen::VectorXd p(n);
    for (Eigen::Index i = 0; i < n; ++i) p[i] = clamp_probability(p_raw[i]);

    CdState st;
    Eigen::VectorXd q(n);
    bool q_is_exact_constant = false;
    if (warm) {
        st.beta = warm->beta;
        st.intercept = warm->intercept;
    } else {
        st.beta = Eigen::VectorXd::Zero(m);
        const Eigen::VectorXd wp = (design.w.array() * p.array()).matrix();
        const double pbar = clamp_probability(sum_asc(wp) / design.sum_w);
        st.intercept = std::log(pbar / (1.0 - pbar));
        // The intercept-only predictive value is pbar itself; starting from
        // it (rather than sigmoid(logit(pbar))) keeps the first working
        // residual aligned with the lambda_max gradient up to rounding
        // residue, which the final zero snap absorbs.
        q.setConstant(pbar);
        q_is_exact_constant = true;
    }

    double prev_obj = bernoulli_objective(design, p, compact_to_map(design, st.beta),
                                          st.intercept, lambda);
    bool outer_converged = false;
    bool saturated = false;
    double prev_outer_change = std::numeric_limits<double>::infinity();
    for (int outer = 0; outer < kMaxOuter && st.sweeps < cfg.max_iters; ++outer) {
        if (!q_is_exact_constant) {
            Eigen::VectorXd eta = linear_predictor(design, compact_to_map(design, st.beta),
                                                   st.intercept);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double e = std::clamp(eta[i], -kEtaClamp, kEtaClamp);
                q[i] = sigmoid(e);
            }
        }
        q_is_exact_constant = false;

        const Eigen::VectorXd omega =
            (design.w.array() * (q.array() * (1.0 - q.array()))).matrix();
        const CdContext ctx = make_cd_context(design, omega);
        st.wr = (design.w.array() * (p - q).array()).matrix();

        const Eigen::VectorXd beta_prev = st.beta;
        const double intercept_prev = st.intercept;

        // Early quadratic subproblems need not be solved to full accuracy;
        // the tolerance tightens with the outer progress and the final
        // iterations run at cfg.tol.
        const double inner_tol =
            std::max(cfg.tol, std::min(0.1 * prev_outer_change, 1e-3));
        cd_solve(design, omega, ctx, lambda, kCoefCap, inner_tol, cfg.max_iters, st);
        saturated = saturated || st.saturated;

        if (cfg.irls_damping < 1.0) {
            st.beta = beta_prev + cfg.irls_damping * (st.beta - beta_prev);
            st.intercept = intercept_prev + cfg.irls_damping * (st.intercept - intercept_prev);
        }

        // The quadratic model can overshoot the KL objective; halve the step
        // until it improves.
        double obj = bernoulli_objective(design, p, compact_to_map(design, st.beta),
                                         st.intercept, lambda);
        if (obj > prev_obj + 1e-12) {
            double t = 0.5;
            bool improved = false;
            for (int h = 0; h < 30; ++h, t *= 0.5) {
                const Eigen::VectorXd bt = beta_prev + t * (st.beta - beta_prev);
                const double it = intercept_prev + t * (st.intercept - intercept_prev);
                const double ot = bernoulli_objective(design, p, compact_to_map(design, bt), it,
                                                      lambda);
                if (ot <= prev_obj + 1e-12) {
                    st.beta = bt;
                    st.intercept = it;
                    obj = ot;
                    improved = true;
                    break;
                }
            }
            if (!improved) {
                st.beta = beta_prev;
                st.intercept = intercept_prev;
                obj = prev_obj;
                outer_converged = true;
                break;
            }
        }
        prev_obj = obj;

        double outer_change = std::abs(st.intercept - intercept_prev);
        for (Eigen::Index j = 0; j < m; ++j)
            outer_change = std::max(outer_change, std::abs(st.beta[j] - beta_prev[j]));
        if (outer_change < cfg.tol) {
            outer_converged = true;
            break;
        }
        prev_outer_change = outer_change;
    }

    snap_numeric_zeros(st.beta, st.intercept, 1.0);

    ExplanationModel model;
    model.family = Family::bernoulli;
    model.lambda = lambda;
    model.intercept = st.intercept;
    model.coefficients = compact_to_map(design, st.beta);
    model.converged = outer_converged;
    model.saturated = saturated;
    const Eigen::VectorXd eta = linear_predictor(design, model.coefficients, model.intercept);
    const Eigen::VectorXd q_final = bernoulli_response(eta);
    model.kl_loss =
        weighted_row_kl_bernoulli(p.data(), q_final.data(), design.w.data(), n);
    if (out_state) {
        out_state->beta = st.beta;
        out_state->intercept = st.intercept;
    }
    return model;
}

// max_j |sum_i w_i z_ij (t_i - tbar)|, the entry point of the lasso path.
inline double lambda_max_design(const ProjectionDesign& design, const Eigen::VectorXd& targets) {
    const Eigen::Index n = design.points();
    const Eigen::VectorXd wt = (design.w.array() * targets.array()).matrix();
    const double tbar = sum_asc(wt) / design.sum_w;
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r[i] = targets[i] - tbar;
    const Eigen::VectorXd wr = (design.w.array() * r.array()).matrix();
    double lmax = 0.0;
    for (Eigen::Index j = 0; j < design.cols(); ++j)
        lmax = std::max(lmax, std::abs(dot_asc(design.Z.col(j).data(), wr.data(), n)));
    // Constant targets have an exactly-zero centered gradient; values at
    // rounding-noise level are that zero.
    if (lmax <= 1e-12 * targets.cwiseAbs().maxCoeff()) return 0.0;
    return lmax;
}

} // namespace detail

inline ExplanationModel project_gaussian(const PerturbationBatch& batch,
                                         const Eigen::VectorXd& mu,
                                         const Eigen::VectorXd& sigma2, double lambda,
                                         const SolverConfig& cfg = {}) {
    cfg.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("project: lambda must be >= 0");
    if (mu.size() != batch.size() || sigma2.size() != batch.size())
        throw std::invalid_argument("project: target length mismatch");
    Eigen::VectorXd s2 = sigma2;
    for (Eigen::Index i = 0; i < s2.size(); ++i) s2[i] = clamp_variance(s2[i]);
    const ProjectionDesign design = make_design(batch, cfg.representation);
    return detail::project_gaussian_impl(design, mu, s2, lambda, cfg, nullptr, nullptr);
}

inline ExplanationModel project_bernoulli(const PerturbationBatch& batch,
                                          const Eigen::VectorXd& p, double lambda,
                                          const SolverConfig& cfg = {}) {
    cfg.validate();
    if (!(lambda >= 0.0)) throw std::invalid_argument("project: lambda must be >= 0");
    if (p.size() != batch.size())
        throw std::invalid_argument("project: target length mismatch");
    const ProjectionDesign design = make_design(batch, cfg.representation);
    return detail::project_bernoulli_impl(design, p, lambda, cfg, nullptr, nullptr);
}

inline double lambda_max(const PerturbationBatch& batch, const Eigen::VectorXd& targets,
                         Family family,
                         Representation rep = Representation::binary_presence) {
    if (targets.size() != batch.size())
        throw std::invalid_argument("lambda_max: target length mismatch");
    const ProjectionDesign design = make_design(batch, rep);
    if (family == Family::bernoulli) {
        Eigen::VectorXd p(targets.size());
        for (Eigen::Index i = 0; i < targets.size(); ++i) p[i] = clamp_probability(targets[i]);
        return detail::lambda_max_design(design, p);
    }
    return detail::lambda_max_design(design, targets);
}

// Geometric grid from lambda_max down to lambda_min_ratio * lambda_max.
inline std::vector<double> make_lambda_grid(double lambda_max_value, const SolverConfig& cfg) {
    if (!cfg.lambda_grid.empty()) return cfg.lambda_grid;
    const int k = cfg.num_lambdas;
    std::vector<double> grid(static_cast<std::size_t>(k));
    if (!(lambda_max_value > 0.0)) {
        std::fill(grid.begin(), grid.end(), 0.0);
        return grid;
    }
    for (int i = 0; i < k; ++i) {
        const double frac = k == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(k - 1);
        grid[static_cast<std::size_t>(i)] = lambda_max_value * std::pow(cfg.lambda_min_ratio, frac);
    }
    return grid;
}

namespace detail {

inline std::vector<ExplanationModel> fit_path_design(const ProjectionDesign& design,
                                                     Family family, const Eigen::VectorXd& loc,
                                                     const Eigen::VectorXd& sigma2,
                                                     const std::vector<double>& grid,
                                                     const SolverConfig& cfg) {
    std::vector<ExplanationModel> path;
    path.reserve(grid.size());
    WarmStart state;
    bool have_state = false;
    for (double lambda : grid) {
        const WarmStart* warm = have_state ? &state : nullptr;
        ExplanationModel model =
            family == Family::gaussian
                ? project_gaussian_impl(design, loc, sigma2, lambda, cfg, warm, &state)
                : project_bernoulli_impl(design, loc, lambda, cfg, warm, &state);
        have_state = true;
        path.push_back(std::move(model));
    }
    return path;
}

inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
    threads = std::min(std::max(threads, 1), count);
    if (threads <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace detail

// Fits one regularization path (decreasing lambda, warm starts).
inline std::vector<ExplanationModel> fit_path(const PerturbationBatch& batch, Family family,
                                              const Eigen::VectorXd& loc,
                                              const Eigen::VectorXd& sigma2,
                                              const SolverConfig& cfg = {}) {
    cfg.validate();
    const ProjectionDesign design = make_design(batch, cfg.representation);
    Eigen::VectorXd targets = loc;
    Eigen::VectorXd s2 = sigma2;
    if (family == Family::bernoulli) {
        for (Eigen::Index i = 0; i < targets.size(); ++i)
            targets[i] = clamp_probability(targets[i]);
    } else {
        for (Eigen::Index i = 0; i < s2.size(); ++i) s2[i] = clamp_variance(s2[i]);
    }
    const double lmax = detail::lambda_max_design(design, targets);
    const std::vector<double> grid = make_lambda_grid(lmax, cfg);
    return detail::fit_path_design(design, family, targets, s2, grid, cfg);
}

// L explanation-model paths over one shared penalty grid plus aggregated
// posterior mean/variance coefficient maps (dense over all d positions).
struct ProjectionEnsemble {
    Family family = Family::gaussian;
    int dim = 0;
    std::vector<double> lambda_grid;                      // K
    std::vector<std::vector<ExplanationModel>> per_sample_paths; // L x K
    Eigen::MatrixXd mean_coefficients;                    // K x d
    Eigen::MatrixXd var_coefficients;                     // K x d, population variance
    std::vector<double> mean_intercept;                   // K
    std::vector<double> mean_complexity;                  // K, mean nnz
    bool all_converged = true;
    bool any_saturated = false;

    Eigen::Index samples() const { return static_cast<Eigen::Index>(per_sample_paths.size()); }
    Eigen::Index grid_size() const { return static_cast<Eigen::Index>(lambda_grid.size()); }
};

inline ProjectionEnsemble project_ensemble(const PerturbationBatch& batch,
                                           const PredictionMatrix& preds,
                                           const SolverConfig& cfg = {}) {
    cfg.validate();
    if (preds.points() != batch.size())
        throw std::invalid_argument("ensemble: prediction count != batch size");
    const ProjectionDesign design = make_design(batch, cfg.representation);
    const Eigen::Index L = preds.samples();

    ProjectionEnsemble ens;
    ens.family = preds.family;
    ens.dim = static_cast<int>(batch.dim());

    // Shared grid from the pooled lambda_max so grid index k is comparable
    // across posterior samples.
    double pooled_lmax = 0.0;
    for (Eigen::Index l = 0; l < L; ++l) {
        const Eigen::VectorXd row = preds.location.row(l);
        pooled_lmax = std::max(pooled_lmax, detail::lambda_max_design(design, row));
    }
    ens.lambda_grid = make_lambda_grid(pooled_lmax, cfg);
    const auto K = static_cast<Eigen::Index>(ens.lambda_grid.size());

    ens.per_sample_paths.resize(static_cast<std::size_t>(L));
    const int threads = cfg.num_threads > 0
                            ? cfg.num_threads
                            : static_cast<int>(std::thread::hardware_concurrency());
    detail::parallel_for(static_cast<int>(L), threads, [&](int l) {
        const Eigen::VectorXd loc = preds.location.row(l);
        Eigen::VectorXd s2;
        if (preds.family == Family::gaussian) s2 = preds.sigma2.row(l);
        ens.per_sample_paths[static_cast<std::size_t>(l)] =
            detail::fit_path_design(design, preds.family, loc, s2, ens.lambda_grid, cfg);
    });

    ens.mean_coefficients = Eigen::MatrixXd::Zero(K, ens.dim);
    ens.var_coefficients = Eigen::MatrixXd::Zero(K, ens.dim);
    ens.mean_intercept.assign(static_cast<std::size_t>(K), 0.0);
    ens.mean_complexity.assign(static_cast<std::size_t>(K), 0.0);
    const double invL = 1.0 / static_cast<double>(L);
    for (Eigen::Index k = 0; k < K; ++k) {
        double nnz_sum = 0.0;
        for (Eigen::Index l = 0; l < L; ++l) {
            const ExplanationModel& m = ens.per_sample_paths[static_cast<std::size_t>(l)]
                                                            [static_cast<std::size_t>(k)];
            for (const auto& [pos, b] : m.coefficients) ens.mean_coefficients(k, pos) += b;
            ens.mean_intercept[static_cast<std::size_t>(k)] += m.intercept;
            nnz_sum += m.nnz();
            ens.all_converged = ens.all_converged && m.converged;
            ens.any_saturated = ens.any_saturated || m.saturated;
        }
        ens.mean_coefficients.row(k) *= invL;
        ens.mean_intercept[static_cast<std::size_t>(k)] *= invL;
        ens.mean_complexity[static_cast<std::size_t>(k)] = nnz_sum * invL;
        for (Eigen::Index l = 0; l < L; ++l) {
            const ExplanationModel& m = ens.per_sample_paths[static_cast<std::size_t>(l)]
                                                            [static_cast<std::size_t>(k)];
            for (Eigen::Index pos = 0; pos < ens.dim; ++pos) {
                const auto it = m.coefficients.find(static_cast<int>(pos));
                const double b = it == m.coefficients.end() ? 0.0 : it->second;
                const double dbar = b - ens.mean_coefficients(k, pos);
                ens.var_coefficients(k, pos) += dbar * dbar;
            }
        }
        ens.var_coefficients.row(k) *= invL;
    }
    return ens;
}

// Per-sample predictive rows implied by an explanation model over a batch.
inline PredictionMatrix explanation_predictions(const std::vector<ExplanationModel>& models,
                                                const PerturbationBatch& batch,
                                                Representation rep) {
    if (models.empty()) throw std::invalid_argument("explanation_predictions: no models");
    const ProjectionDesign design = make_design(batch, rep);
    const Eigen::Index L = static_cast<Eigen::Index>(models.size());
    const Eigen::Index n = design.points();
    Eigen::MatrixXd loc(L, n);
    Eigen::MatrixXd s2;
    const Family family = models.front().family;
    if (family == Family::gaussian) s2.resize(L, n);
    for (Eigen::Index l = 0; l < L; ++l) {
        const ExplanationModel& m = models[static_cast<std::size_t>(l)];
        if (m.family != family)
            throw std::invalid_argument("explanation_predictions: mixed families");
        const Eigen::VectorXd eta =
            detail::linear_predictor(design, m.coefficients, m.intercept);
        if (family == Family::gaussian) {
            loc.row(l) = eta;
            s2.row(l).setConstant(clamp_variance(m.noise_var));
        } else {
            loc.row(l) = detail::bernoulli_response(eta);
        }
    }
    return family == Family::gaussian ? PredictionMatrix::gaussian(std::move(loc), std::move(s2))
                                      : PredictionMatrix::bernoulli(std::move(loc));
}

// Intercept-only projections per posterior sample and the null information
// loss delta_0 anchoring the power denominator.
struct NullProjection {
    std::vector<ExplanationModel> per_sample; // L intercept-only models
    double delta_0 = 0.0;
};

inline NullProjection fit_null(const PerturbationBatch& batch, const PredictionMatrix& preds,
                               const SolverConfig& cfg = {}) {
    cfg.validate();
    if (preds.points() != batch.size())
        throw std::invalid_argument("fit_null: prediction count != batch size");
    const ProjectionDesign design = make_design(batch, cfg.representation);
    const Eigen::Index L = preds.samples();
    NullProjection null;
    null.per_sample.reserve(static_cast<std::size_t>(L));
    const double inf = std::numeric_limits<double>::infinity();
    for (Eigen::Index l = 0; l < L; ++l) {
        const Eigen::VectorXd loc = preds.location.row(l);
        if (preds.family == Family::gaussian) {
            const Eigen::VectorXd s2 = preds.sigma2.row(l);
            null.per_sample.push_back(
                detail::project_gaussian_impl(design, loc, s2, inf, cfg, nullptr, nullptr));
        } else {
            null.per_sample.push_back(
                detail::project_bernoulli_impl(design, loc, inf, cfg, nullptr, nullptr));
        }
    }
    const PredictionMatrix expl =
        explanation_predictions(null.per_sample, batch, cfg.representation);
    null.delta_0 = information_loss(preds, expl, batch.weights);
    return null;
}

struct PowerPoint {
    double lambda = 0.0;
    double mean_complexity = 0.0;
    double power = 0.0;
};

struct PowerCurve {
    std::vector<PowerPoint> points; // ordered by decreasing lambda
    std::vector<double> delta_s;    // per grid point, averaged over samples
    double delta_0 = 0.0;
    std::optional<int> selected_index;
    std::optional<double> target_power;
    bool target_attained = true;
};

inline PowerCurve power_curve(const ProjectionEnsemble& ens, double delta_0) {
    PowerCurve curve;
    curve.delta_0 = delta_0;
    const Eigen::Index K = ens.grid_size();
    const Eigen::Index L = ens.samples();
    for (Eigen::Index k = 0; k < K; ++k) {
        double total = 0.0;
        for (Eigen::Index l = 0; l < L; ++l)
            total += ens.per_sample_paths[static_cast<std::size_t>(l)]
                                         [static_cast<std::size_t>(k)].kl_loss;
        const double delta_sk = total / static_cast<double>(L);
        curve.delta_s.push_back(delta_sk);
        PowerPoint pt;
        pt.lambda = ens.lambda_grid[static_cast<std::size_t>(k)];
        pt.mean_complexity = ens.mean_complexity[static_cast<std::size_t>(k)];
        pt.power = relative_power(delta_sk, delta_0);
        curve.points.push_back(pt);
    }
    return curve;
}

// Smallest mean complexity among points attaining the target power; ties go
// to larger lambda. Falls back to the max-power point with attained = false.
struct ComplexitySelection {
    int index = 0;
    bool attained = true;
};

inline ComplexitySelection select_complexity(const PowerCurve& curve, double target_power) {
    if (!(target_power <= 1.0))
        throw std::invalid_argument("select_complexity: target power must be <= 1");
    if (curve.points.empty()) throw std::invalid_argument("select_complexity: empty curve");
    int best = -1;
    for (std::size_t k = 0; k < curve.points.size(); ++k) {
        if (curve.points[k].power >= target_power &&
            (best < 0 || curve.points[k].mean_complexity <
                             curve.points[static_cast<std::size_t>(best)].mean_complexity))
            best = static_cast<int>(k);
    }
    if (best >= 0) return {best, true};
    int argmax = 0;
    for (std::size_t k = 1; k < curve.points.size(); ++k)
        if (curve.points[k].power > curve.points[static_cast<std::size_t>(argmax)].power)
            argmax = static_cast<int>(k);
    return {argmax, false};
}

} // namespace kllime
