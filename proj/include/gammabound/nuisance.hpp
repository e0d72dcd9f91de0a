#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/rng.hpp"
#include "gammabound/stats.hpp"

namespace gammabound {

inline double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

inline double softplus(double eta) { return std::max(eta, 0.0) + std::log1p(std::exp(-std::abs(eta))); }

constexpr double kPropensityClip = 1e-3;

inline double clip_probability(double p, double eps = kPropensityClip) {
    return std::min(std::max(p, eps), 1.0 - eps);
}

// ---------------------------------------------------------------------------
// Ridge-penalized logistic regression (Newton with step halving).
// Intercept first, unpenalized; lambda applies to the remaining coordinates.
// ---------------------------------------------------------------------------

inline double logistic_penalized_nll(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& beta, double lambda) {
    const Eigen::VectorXd eta = X * beta;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) nll += softplus(eta[i]) - y[i] * eta[i];
    for (Eigen::Index j = 1; j < beta.size(); ++j) nll += 0.5 * lambda * beta[j] * beta[j];
    return nll;
}

inline Eigen::VectorXd logistic_penalized_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& beta, double lambda) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd p(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = sigmoid(eta[i]);
    Eigen::VectorXd g = X.transpose() * (p - y);
    for (Eigen::Index j = 1; j < beta.size(); ++j) g[j] += lambda * beta[j];
    return g;
}

struct LogisticFitOptions {
    double grad_tol = 1e-8;
    int max_iter = 200;
};

/// Newton MLE of the ridge-penalized logistic model. Throws NoConvergence on
/// iteration exhaustion or (at lambda = 0) numerically perfect separation.
inline Eigen::VectorXd logistic_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    double lambda, const LogisticFitOptions& opts = {}) {
    const Eigen::Index n = X.rows(), p = X.cols();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    double nll = logistic_penalized_nll(X, y, beta, lambda);

    for (int iter = 0; iter < opts.max_iter; ++iter) {
        const Eigen::VectorXd eta = X * beta;
        Eigen::VectorXd prob(n), w(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = sigmoid(eta[i]);
            w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-12);
        }
        Eigen::VectorXd g = X.transpose() * (prob - y);
        for (Eigen::Index j = 1; j < p; ++j) g[j] += lambda * beta[j];

        if (g.lpNorm<Eigen::Infinity>() < opts.grad_tol) {
            if (lambda == 0.0) {
                double worst = 0.0;  // largest distance of any unit from its label
                for (Eigen::Index i = 0; i < n; ++i)
                    worst = std::max(worst, std::min(prob[i], 1.0 - prob[i]));
                if (worst < 1e-10)
                    throw NoConvergence(
                        "perfect separation in logistic fit (final gradient inf-norm " +
                        std::to_string(g.lpNorm<Eigen::Infinity>()) + ")");
            }
            return beta;
        }

        Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        for (Eigen::Index j = 1; j < p; ++j) H(j, j) += lambda;
        Eigen::VectorXd step = H.ldlt().solve(g);
        if (!step.allFinite()) throw NoConvergence("singular Hessian in logistic fit");

        double scale = 1.0;
        for (int h = 0; h < 40; ++h) {
            const Eigen::VectorXd cand = beta - scale * step;
            const double cand_nll = logistic_penalized_nll(X, y, cand, lambda);
            if (cand_nll <= nll + 1e-14 * std::abs(nll)) {
                beta = cand;
                nll = cand_nll;
                break;
            }
            scale *= 0.5;
        }
    }

    const double gnorm =
        logistic_penalized_grad(X, y, beta, lambda).lpNorm<Eigen::Infinity>();
    throw NoConvergence("logistic fit: gradient inf-norm " + std::to_string(gnorm) +
                        " after " + std::to_string(opts.max_iter) + " iterations");
}

/// Logistic propensity model P(T=1|X); predictions clipped into
/// [kPropensityClip, 1 - kPropensityClip] by predict_clipped.
struct PropensityModel {
    Eigen::VectorXd coefficients;  // intercept first
    double lambda = 0.0;

    double predict_raw(std::span<const double> x) const {
        double eta = coefficients[0];
        for (std::size_t j = 0; j < x.size(); ++j) eta += coefficients[j + 1] * x[j];
        return sigmoid(eta);
    }
    double predict_clipped(std::span<const double> x) const {
        return clip_probability(predict_raw(x));
    }
};

namespace detail {

inline Eigen::MatrixXd design_matrix(const Dataset& d) {
    const Eigen::Index n = static_cast<Eigen::Index>(d.size());
    const Eigen::Index p = static_cast<Eigen::Index>(d.dim()) + 1;
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < p; ++j) X(i, j) = d.records[i].x[j - 1];
    }
    return X;
}

}  // namespace detail

inline PropensityModel fit_propensity(const Dataset& d, double lambda) {
    validate_dataset(d);
    bool any0 = false, any1 = false;
    for (const auto& r : d.records) (r.t ? any1 : any0) = true;
    if (!any0 || !any1) throw SingleArm();

    const Eigen::MatrixXd X = detail::design_matrix(d);
    Eigen::VectorXd y(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) y[static_cast<Eigen::Index>(i)] = d.records[i].t;
    return PropensityModel{logistic_fit(X, y, lambda), lambda};
}

// ---------------------------------------------------------------------------
// Check-loss (pinball) minimization.
// ---------------------------------------------------------------------------

inline double pinball(double r, double tau) { return r >= 0.0 ? tau * r : (tau - 1.0) * r; }

inline double check_loss(const Eigen::MatrixXd& G, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& gamma, double tau, const Eigen::VectorXd& w) {
    const Eigen::VectorXd r = y - G * gamma;
    double L = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) L += w[i] * pinball(r[i], tau);
    return L;
}

struct CheckFit {
    Eigen::VectorXd coef;
    double objective = 0.0;
};

/// IRLS (majorize-minimize on the smoothed check function with annealed
/// smoothing) for min_gamma sum_i w_i * pinball(y_i - gamma'g_i, tau).
/// Started from the exact weighted tau-quantile intercept, so the returned
/// objective never exceeds the best constant's.
inline CheckFit check_loss_irls(const Eigen::MatrixXd& G, const Eigen::VectorXd& y, double tau,
                                const Eigen::VectorXd& w, int max_iter = 250) {
    const Eigen::Index n = G.rows(), p = G.cols();

    std::vector<double> yv(y.data(), y.data() + n), wv(w.data(), w.data() + n);
    Eigen::VectorXd gamma = Eigen::VectorXd::Zero(p);
    gamma[0] = weighted_quantile(yv, wv, tau);

    CheckFit best{gamma, check_loss(G, y, gamma, tau, w)};
    if (best.objective <= 0.0) return best;

    double yscale = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) yscale = std::max(yscale, std::abs(y[i]));
    double delta = std::max(1e-2 * std::max(yscale, 1.0), 1e-10);

    double prev = best.objective;
    int stall = 0;
    for (int iter = 0; iter < max_iter; ++iter) {
        const Eigen::VectorXd r = y - G * gamma;
        Eigen::VectorXd a(n);
        for (Eigen::Index i = 0; i < n; ++i) a[i] = w[i] / std::max(std::abs(r[i]), delta);

        Eigen::MatrixXd A = G.transpose() * a.asDiagonal() * G;
        Eigen::VectorXd rhs = G.transpose() * (a.cwiseProduct(y)) +
                              (tau - 0.5) * (G.transpose() * w);
        for (Eigen::Index j = 0; j < p; ++j) A(j, j) += 1e-12;
        const Eigen::VectorXd cand = A.ldlt().solve(rhs);
        if (!cand.allFinite()) break;

        gamma = cand;
        const double obj = check_loss(G, y, gamma, tau, w);
        if (obj < best.objective) best = CheckFit{gamma, obj};

        delta = std::max(delta * 0.6, 1e-13);
        if (std::abs(prev - obj) < 1e-10 * (1.0 + std::abs(obj)) && delta <= 1e-12) {
            if (++stall >= 3) break;
        } else {
            stall = 0;
        }
        prev = obj;
    }
    return best;
}

namespace detail {

/// Exact 1-D minimization over the intercept given fixed slope: the weighted
/// tau-quantile of the partial residuals.
inline double exact_intercept(std::span<const double> y, std::span<const double> q, double slope,
                              double tau, std::span<const double> w) {
    std::vector<double> resid(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) resid[i] = y[i] - slope * q[i];
    return weighted_quantile(resid, w, tau);
}

}  // namespace detail

/// Check-loss fit for the two-column basis (1, q). Golden-section search on
/// the slope (the partially minimized objective is convex), exact intercept
/// per slope; small problems get an exhaustive vertex polish, which makes the
/// solution exact up to roundoff.
inline CheckFit check_loss_2d(std::span<const double> q, std::span<const double> y, double tau,
                              std::span<const double> w, std::size_t polish_limit = 256) {
    const std::size_t n = y.size();
    Eigen::MatrixXd G(n, 2);
    Eigen::VectorXd yv(n), wv(n);
    for (std::size_t i = 0; i < n; ++i) {
        G(i, 0) = 1.0;
        G(i, 1) = q[i];
        yv[i] = y[i];
        wv[i] = w[i];
    }

    double qlo = q[0], qhi = q[0];
    for (double v : q) {
        qlo = std::min(qlo, v);
        qhi = std::max(qhi, v);
    }
    // Degenerate regressor: intercept-only balancing.
    if (qhi - qlo < 1e-12 * (1.0 + std::abs(qhi))) {
        Eigen::VectorXd coef(2);
        coef[1] = 0.0;
        coef[0] = detail::exact_intercept(y, q, 0.0, tau, w);
        return CheckFit{coef, check_loss(G, yv, coef, tau, wv)};
    }

    const auto objective_at_slope = [&](double b) {
        const double a = detail::exact_intercept(y, q, b, tau, w);
        double L = 0.0;
        for (std::size_t i = 0; i < n; ++i) L += w[i] * pinball(y[i] - a - b * q[i], tau);
        return std::pair<double, double>(L, a);
    };

    double ylo = y[0], yhi = y[0];
    for (double v : y) {
        ylo = std::min(ylo, v);
        yhi = std::max(yhi, v);
    }
    const double span = std::max((yhi - ylo) / std::max(qhi - qlo, 1e-12), 1.0);
    double lo = -4.0 * span, hi = 4.0 * span;

    constexpr double invphi = 0.6180339887498949;
    double x1 = hi - invphi * (hi - lo), x2 = lo + invphi * (hi - lo);
    auto [f1, a1] = objective_at_slope(x1);
    auto [f2, a2] = objective_at_slope(x2);
    for (int it = 0; it < 140 && (hi - lo) > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            a2 = a1;
            x1 = hi - invphi * (hi - lo);
            std::tie(f1, a1) = objective_at_slope(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            a1 = a2;
            x2 = lo + invphi * (hi - lo);
            std::tie(f2, a2) = objective_at_slope(x2);
        }
    }

    Eigen::VectorXd coef(2);
    if (f1 <= f2) {
        coef[0] = a1;
        coef[1] = x1;
    } else {
        coef[0] = a2;
        coef[1] = x2;
    }
    CheckFit best{coef, check_loss(G, yv, coef, tau, wv)};

    // Zero-slope candidate (best constant) is always admissible.
    {
        Eigen::VectorXd c0(2);
        c0[1] = 0.0;
        c0[0] = detail::exact_intercept(y, q, 0.0, tau, w);
        const double L0 = check_loss(G, yv, c0, tau, wv);
        if (L0 < best.objective) best = CheckFit{c0, L0};
    }

    if (n <= polish_limit) {
        // The minimizer of a piecewise-linear convex objective sits where two
        // residuals vanish; enumerate those vertices.
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dq = q[i] - q[j];
                if (std::abs(dq) < 1e-14 * (1.0 + std::abs(q[i]))) continue;
                const double b = (y[i] - y[j]) / dq;
                const double a = y[i] - b * q[i];
                double L = 0.0;
                for (std::size_t k = 0; k < n; ++k) L += w[k] * pinball(y[k] - a - b * q[k], tau);
                if (L < best.objective) {
                    Eigen::VectorXd c(2);
                    c[0] = a;
                    c[1] = b;
                    best = CheckFit{c, L};
                }
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Conditional-quantile models.
// ---------------------------------------------------------------------------

enum class QuantileKind { LinearPinball, BinaryClosedForm, EmpiricalKnn };

inline const char* to_string(QuantileKind k) {
    switch (k) {
        case QuantileKind::LinearPinball: return "linear";
        case QuantileKind::BinaryClosedForm: return "binary";
        case QuantileKind::EmpiricalKnn: return "knn";
    }
    return "?";
}

struct QuantileOptions {
    std::size_t knn_k = 50;
    double ridge_lambda = 1e-6;  // conditional-mean model of the binary closed form
};

struct QuantileModel {
    QuantileKind kind = QuantileKind::LinearPinball;
    double tau = 0.5;

    Eigen::VectorXd coefficients;          // LinearPinball: intercept first
    Eigen::VectorXd mean_coefficients;     // BinaryClosedForm: logistic mean model
    std::vector<std::vector<double>> knn_x;
    std::vector<double> knn_y;
    std::size_t knn_k = 0;

    double predict(std::span<const double> x) const {
        switch (kind) {
            case QuantileKind::LinearPinball: {
                double v = coefficients[0];
                for (std::size_t j = 0; j < x.size(); ++j) v += coefficients[j + 1] * x[j];
                return v;
            }
            case QuantileKind::BinaryClosedForm: {
                double eta = mean_coefficients[0];
                for (std::size_t j = 0; j < x.size(); ++j) eta += mean_coefficients[j + 1] * x[j];
                const double m = sigmoid(eta);
                return tau > 1.0 - m ? 1.0 : 0.0;
            }
            case QuantileKind::EmpiricalKnn: {
                const std::size_t k = std::min(knn_k, knn_y.size());
                std::vector<std::pair<double, std::size_t>> dist(knn_y.size());
                for (std::size_t i = 0; i < knn_y.size(); ++i) {
                    double d2 = 0.0;
                    for (std::size_t j = 0; j < x.size(); ++j) {
                        const double dxj = knn_x[i][j] - x[j];
                        d2 += dxj * dxj;
                    }
                    dist[i] = {d2, i};
                }
                std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
                std::vector<double> ys(k);
                for (std::size_t i = 0; i < k; ++i) ys[i] = knn_y[dist[i].second];
                return quantile(std::move(ys), tau);
            }
        }
        return 0.0;
    }
};

/// Fits the tau-quantile of Y | X on one treatment arm.
inline QuantileModel fit_quantile(const Dataset& d, int arm, double tau, QuantileKind kind,
                                  const QuantileOptions& opts = {}) {
    if (!(tau > 0.0 && tau < 1.0)) throw DomainError("quantile level must lie in (0,1)");
    validate_dataset(d);

    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d.records[i].t == arm) idx.push_back(i);
    const std::size_t need = std::max<std::size_t>(10, d.dim() + 2);
    if (idx.size() < need)
        throw TooFewRecords("arm " + std::to_string(arm) + " has " + std::to_string(idx.size()) +
                            " records, needs " + std::to_string(need));

    QuantileModel m;
    m.kind = kind;
    m.tau = tau;

    switch (kind) {
        case QuantileKind::LinearPinball: {
            const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
            const Eigen::Index p = static_cast<Eigen::Index>(d.dim()) + 1;
            Eigen::MatrixXd G(n, p);
            Eigen::VectorXd y(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const auto& r = d.records[idx[i]];
                G(i, 0) = 1.0;
                for (Eigen::Index j = 1; j < p; ++j) G(i, j) = r.x[j - 1];
                y[i] = r.y;
            }
            m.coefficients = check_loss_irls(G, y, tau, Eigen::VectorXd::Ones(n)).coef;
            break;
        }
        case QuantileKind::BinaryClosedForm: {
            Dataset armset;
            armset.kind = d.kind;
            for (std::size_t i : idx) armset.records.push_back(d.records[i]);
            for (const auto& r : armset.records)
                if (r.y != 0.0 && r.y != 1.0) throw NonBinaryOutcome();
            const Eigen::MatrixXd X = detail::design_matrix(armset);
            Eigen::VectorXd y(armset.size());
            for (std::size_t i = 0; i < armset.size(); ++i)
                y[static_cast<Eigen::Index>(i)] = armset.records[i].y;
            m.mean_coefficients = logistic_fit(X, y, std::max(opts.ridge_lambda, 1e-10));
            break;
        }
        case QuantileKind::EmpiricalKnn: {
            m.knn_k = std::max<std::size_t>(1, opts.knn_k);
            for (std::size_t i : idx) {
                m.knn_x.push_back(d.records[i].x);
                m.knn_y.push_back(d.records[i].y);
            }
            break;
        }
    }
    return m;
}

/// Monotone rearrangement: predictions of models ordered by tau, sorted so the
/// quantile curve in tau is nondecreasing at every x.
inline std::vector<double> rearranged_quantiles(const std::vector<QuantileModel>& models,
                                                std::span<const double> x) {
    std::vector<double> preds(models.size());
    for (std::size_t i = 0; i < models.size(); ++i) preds[i] = models[i].predict(x);
    std::sort(preds.begin(), preds.end());
    return preds;
}

// ---------------------------------------------------------------------------
// Cross-fitting.
// ---------------------------------------------------------------------------

struct CrossFitPlan {
    std::size_t folds = 5;
    std::vector<std::uint32_t> assignment;  // fold id per record
    RngSpec rng;
};

inline CrossFitPlan make_crossfit_plan(std::size_t n, std::size_t folds, const RngSpec& spec) {
    if (folds < 1) throw InvalidArgument("crossfit folds must be >= 1");
    if (folds > n) throw InvalidArgument("crossfit folds exceed record count");
    CrossFitPlan plan;
    plan.folds = folds;
    plan.rng = spec;
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Rng rng(spec);
    rng.shuffle(order);
    plan.assignment.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        plan.assignment[order[i]] = static_cast<std::uint32_t>(i % folds);
    return plan;
}

struct NuisanceSpec {
    double propensity_lambda = 1e-6;
    QuantileKind quantile_kind = QuantileKind::LinearPinball;
    std::size_t knn_k = 50;
    std::size_t folds = 5;
    bool outcome_means = false;
};

/// Per-record out-of-fold nuisance predictions at one Gamma's quantile levels
/// (hi = tau, lo = 1 - tau, per arm).
struct NuisanceTable {
    double tau = 0.5;
    std::vector<double> e_hat;  // clipped
    std::vector<double> q1_hi, q1_lo;  // arm 1: Q_tau, Q_{1-tau}
    std::vector<double> q0_hi, q0_lo;  // arm 0
    std::vector<double> mu1, mu0;      // optional outcome means (may be empty)

    std::size_t size() const { return e_hat.size(); }
};

/// Fits propensity and fold structure once; serves Gamma-specific quantile
/// columns on demand (quantile models are cached per (fold, arm, tau)).
class CrossFitter {
public:
    CrossFitter(Dataset data, CrossFitPlan plan, NuisanceSpec spec)
        : data_(std::move(data)), plan_(std::move(plan)), spec_(spec) {
        validate_dataset(data_);
        if (plan_.assignment.size() != data_.size())
            throw InvalidArgument("crossfit plan does not match dataset size");
        fit_fold_models();
    }

    const Dataset& data() const { return data_; }
    const CrossFitPlan& plan() const { return plan_; }

    const std::vector<double>& propensities() const { return e_hat_; }

    /// Quantile level for a confounding strength: tau = Gamma / (Gamma + 1).
    static double tau_for(const GammaValue& gamma) { return gamma.value / (gamma.value + 1.0); }

    NuisanceTable table(const GammaValue& gamma) {
        const double tau = tau_for(gamma);
        NuisanceTable t;
        t.tau = tau;
        t.e_hat = e_hat_;
        const std::size_t n = data_.size();
        t.q1_hi.resize(n);
        t.q1_lo.resize(n);
        t.q0_hi.resize(n);
        t.q0_lo.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& x = data_.records[i].x;
            const std::uint32_t f = plan_.assignment[i];
            double hi1 = quantile_model(f, 1, tau).predict(x);
            double lo1 = quantile_model(f, 1, 1.0 - tau).predict(x);
            double hi0 = quantile_model(f, 0, tau).predict(x);
            double lo0 = quantile_model(f, 0, 1.0 - tau).predict(x);
            // Rearrangement: tau >= 1/2 must give q_lo <= q_hi.
            if (tau >= 0.5) {
                if (lo1 > hi1) std::swap(lo1, hi1);
                if (lo0 > hi0) std::swap(lo0, hi0);
            }
            t.q1_hi[i] = hi1;
            t.q1_lo[i] = lo1;
            t.q0_hi[i] = hi0;
            t.q0_lo[i] = lo0;
        }
        if (spec_.outcome_means) {
            t.mu1.resize(n);
            t.mu0.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const auto& x = data_.records[i].x;
                const std::uint32_t f = plan_.assignment[i];
                t.mu1[i] = predict_linear(mean_models_[f][1], x);
                t.mu0[i] = predict_linear(mean_models_[f][0], x);
            }
        }
        return t;
    }

private:
    static double predict_linear(const Eigen::VectorXd& beta, std::span<const double> x) {
        double v = beta[0];
        for (std::size_t j = 0; j < x.size(); ++j) v += beta[j + 1] * x[j];
        return v;
    }

    Dataset complement_of(std::uint32_t fold) const {
        Dataset c;
        c.kind = data_.kind;
        c.x_names = data_.x_names;
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (plan_.folds == 1 || plan_.assignment[i] != fold) c.records.push_back(data_.records[i]);
        return c;
    }

    void fit_fold_models() {
        const std::size_t F = plan_.folds;
        propensity_models_.resize(F);
        complements_.resize(F);
        if (spec_.outcome_means) mean_models_.resize(F);

        for (std::uint32_t f = 0; f < F; ++f) {
            complements_[f] = complement_of(f);
            bool any0 = false, any1 = false;
            for (const auto& r : complements_[f].records) (r.t ? any1 : any0) = true;
            if (!any0 || !any1)
                throw FoldDegenerate("training complement of fold " + std::to_string(f) +
                                     " lacks a treatment arm");
            propensity_models_[f] = fit_propensity(complements_[f], spec_.propensity_lambda);
            if (spec_.outcome_means) {
                mean_models_[f][0] = linear_mean(complements_[f], 0);
                mean_models_[f][1] = linear_mean(complements_[f], 1);
            }
        }

        e_hat_.resize(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i)
            e_hat_[i] = propensity_models_[plan_.assignment[i]].predict_clipped(data_.records[i].x);
    }

    static Eigen::VectorXd linear_mean(const Dataset& d, int arm) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (d.records[i].t == arm) idx.push_back(i);
        const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
        const Eigen::Index p = static_cast<Eigen::Index>(d.dim()) + 1;
        Eigen::MatrixXd X(n, p);
        Eigen::VectorXd y(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& r = d.records[idx[i]];
            X(i, 0) = 1.0;
            for (Eigen::Index j = 1; j < p; ++j) X(i, j) = r.x[j - 1];
            y[i] = r.y;
        }
        Eigen::MatrixXd A = X.transpose() * X;
        for (Eigen::Index j = 0; j < p; ++j) A(j, j) += 1e-8;
        return A.ldlt().solve(X.transpose() * y);
    }

    const QuantileModel& quantile_model(std::uint32_t fold, int arm, double tau) {
        const auto key = std::make_tuple(fold, arm, tau);
        auto it = quantile_cache_.find(key);
        if (it != quantile_cache_.end()) return it->second;
        QuantileOptions opts;
        opts.knn_k = spec_.knn_k;
        opts.ridge_lambda = std::max(spec_.propensity_lambda, 1e-8);
        auto model = fit_quantile(complements_[fold], arm, tau, spec_.quantile_kind, opts);
        return quantile_cache_.emplace(key, std::move(model)).first->second;
    }

    Dataset data_;
    CrossFitPlan plan_;
    NuisanceSpec spec_;
    std::vector<Dataset> complements_;
    std::vector<PropensityModel> propensity_models_;
    std::vector<std::array<Eigen::VectorXd, 2>> mean_models_;
    std::vector<double> e_hat_;
    std::map<std::tuple<std::uint32_t, int, double>, QuantileModel> quantile_cache_;
};

inline NuisanceTable cross_fit_predictions(const Dataset& d, const CrossFitPlan& plan,
                                           const NuisanceSpec& spec, const GammaValue& gamma) {
    CrossFitter fitter(d, plan, spec);
    return fitter.table(gamma);
}

}  // namespace gammabound
