#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/nuisance.hpp"
#include "gammabound/stats.hpp"

namespace gammabound {

/// Gamma-implied bounds on the full propensity at nominal propensity e.
struct NominalBounds {
    double ell;
    double u;
};

inline NominalBounds nominal_bounds(double e, const GammaValue& gamma) {
    if (!(e > 0.0 && e < 1.0)) throw DomainError("nominal propensity must lie in (0,1)");
    const double g = gamma.value;
    return NominalBounds{e / (e + (1.0 - e) * g), e / (e + (1.0 - e) / g)};
}

/// Quantile level tau = Gamma / (Gamma + 1).
inline double tau_level(const GammaValue& gamma) { return gamma.value / (gamma.value + 1.0); }

/// Residual sign with ties resolved to +1.
inline int sign_plus(double r) { return r >= 0.0 ? 1 : -1; }

// ---------------------------------------------------------------------------
// Working sample: outcome/treatment columns plus per-record nuisances, in a
// layout the estimators and the bootstrap can resample cheaply.
// ---------------------------------------------------------------------------

struct ObsSample {
    std::vector<double> y;
    std::vector<std::uint8_t> t;
    std::vector<double> e;  // clipped nominal propensity
    std::vector<double> q1_hi, q1_lo, q0_hi, q0_lo;  // empty when unused

    std::size_t size() const { return y.size(); }
    bool has_quantiles() const { return !q1_hi.empty(); }

    static ObsSample from(const Dataset& d, const NuisanceTable& table) {
        if (table.size() != d.size()) throw MissingNuisance("nuisance table size mismatch");
        ObsSample s;
        s.y = d.outcomes();
        s.t = d.treatments();
        s.e.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) s.e[i] = clip_probability(table.e_hat[i]);
        s.q1_hi = table.q1_hi;
        s.q1_lo = table.q1_lo;
        s.q0_hi = table.q0_hi;
        s.q0_lo = table.q0_lo;
        return s;
    }

    static ObsSample from(const Dataset& d, std::span<const double> e_hat) {
        if (e_hat.size() != d.size()) throw MissingNuisance("propensity column size mismatch");
        ObsSample s;
        s.y = d.outcomes();
        s.t = d.treatments();
        s.e.assign(e_hat.begin(), e_hat.end());
        for (auto& p : s.e) p = clip_probability(p);
        return s;
    }

    ObsSample gather(std::span<const std::uint32_t> idx) const {
        ObsSample s;
        s.y.reserve(idx.size());
        s.t.reserve(idx.size());
        s.e.reserve(idx.size());
        const bool q = has_quantiles();
        for (std::uint32_t i : idx) {
            s.y.push_back(y[i]);
            s.t.push_back(t[i]);
            s.e.push_back(e[i]);
            if (q) {
                s.q1_hi.push_back(q1_hi[i]);
                s.q1_lo.push_back(q1_lo[i]);
                s.q0_hi.push_back(q0_hi[i]);
                s.q0_lo.push_back(q0_lo[i]);
            }
        }
        return s;
    }
};

// ---------------------------------------------------------------------------
// Hajek (normalized IPW) estimator.
// ---------------------------------------------------------------------------

inline double ipw_hajek_arm(const ObsSample& s, int arm) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.t[i] != arm) continue;
        const double p = arm == 1 ? s.e[i] : 1.0 - s.e[i];
        num += s.y[i] / p;
        den += 1.0 / p;
    }
    if (den == 0.0) throw EmptyArm("no records in arm " + std::to_string(arm));
    return num / den;
}

inline double ipw_hajek(const Dataset& d, std::span<const double> e_hat, int arm) {
    return ipw_hajek_arm(ObsSample::from(d, e_hat), arm);
}

inline double ipw_hajek_contrast(const ObsSample& s) {
    return ipw_hajek_arm(s, 1) - ipw_hajek_arm(s, 0);
}

// ---------------------------------------------------------------------------
// ZSB interval: optimize the Hajek ratio over propensities with
// Gamma-bounded odds. Per arm the optimum splits the outcome order, so a
// sort plus a breakpoint scan is exact.
// ---------------------------------------------------------------------------

namespace detail {

/// max over lambda in [1/Gamma, Gamma]^m of sum y_i (1 + lambda_i c_i) /
/// sum (1 + lambda_i c_i). At the optimum lambda_i = Gamma exactly for
/// y_i above the optimal value, 1/Gamma below, so scanning the m+1 splits
/// of the descending outcome order attains the maximum.
inline double zsb_max_sorted(std::span<const double> y, std::span<const double> c, double g) {
    const std::size_t m = y.size();
    if (m == 0) throw EmptyArm("zsb on empty arm");
    std::vector<std::size_t> ord(m);
    std::iota(ord.begin(), ord.end(), std::size_t{0});
    std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) { return y[a] > y[b]; });

    // All-low start (every lambda = 1/Gamma), then move units to lambda =
    // Gamma from the top of the order.
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double wl = 1.0 + c[i] / g;
        num += y[i] * wl;
        den += wl;
    }
    double best = num / den;
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t i = ord[k];
        const double dw = c[i] * (g - 1.0 / g);
        num += y[i] * dw;
        den += dw;
        if (den <= 0.0) throw LpInfeasible("nonpositive Hajek denominator");
        best = std::max(best, num / den);
    }
    return best;
}

inline double zsb_min_sorted(std::span<const double> y, std::span<const double> c, double g) {
    std::vector<double> neg(y.begin(), y.end());
    for (double& v : neg) v = -v;
    return -zsb_max_sorted(neg, c, g);
}

/// Gathers one arm's outcomes and odds multipliers c = P(other)/P(this).
inline void gather_arm(const ObsSample& s, int arm, std::vector<double>& y,
                       std::vector<double>& c) {
    y.clear();
    c.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.t[i] != arm) continue;
        y.push_back(s.y[i]);
        c.push_back(arm == 1 ? (1.0 - s.e[i]) / s.e[i] : s.e[i] / (1.0 - s.e[i]));
    }
    if (y.empty()) throw EmptyArm("no records in arm " + std::to_string(arm));
}

}  // namespace detail

/// One arm's ZSB mean bound (direction +1 = upper, -1 = lower).
inline double zsb_arm_bound(const ObsSample& s, int arm, const GammaValue& gamma, int direction) {
    std::vector<double> y, c;
    detail::gather_arm(s, arm, y, c);
    return direction > 0 ? detail::zsb_max_sorted(y, c, gamma.value)
                         : detail::zsb_min_sorted(y, c, gamma.value);
}

/// ZSB ATE-contrast interval; standard errors are left at zero for the
/// caller (bootstrap) to fill.
inline SensitivityInterval zsb_interval(const ObsSample& s, const GammaValue& gamma) {
    SensitivityInterval out{gamma};
    out.upper = zsb_arm_bound(s, 1, gamma, +1) - zsb_arm_bound(s, 0, gamma, -1);
    out.lower = zsb_arm_bound(s, 1, gamma, -1) - zsb_arm_bound(s, 0, gamma, +1);
    return out;
}

inline SensitivityInterval zsb_interval(const Dataset& d, std::span<const double> e_hat,
                                        const GammaValue& gamma) {
    return zsb_interval(ObsSample::from(d, e_hat), gamma);
}

/// Brute-force oracle: every propensity at one of its odds bounds, all 2^m
/// assignments enumerated. Exact for small arms; also serves as the dense
/// fallback check for the breakpoint solver.
inline double zsb_arm_bound_enumerated(const ObsSample& s, int arm, const GammaValue& gamma,
                                       int direction) {
    std::vector<double> y, c;
    detail::gather_arm(s, arm, y, c);
    const std::size_t m = y.size();
    if (m > 24) throw InvalidArgument("vertex enumeration limited to 24 records");
    const double g = gamma.value;
    double best = direction > 0 ? -std::numeric_limits<double>::infinity()
                                : std::numeric_limits<double>::infinity();
    for (std::uint64_t mask = 0; mask < (1ull << m); ++mask) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            const double lam = (mask >> i) & 1 ? g : 1.0 / g;
            const double w = 1.0 + lam * c[i];
            num += y[i] * w;
            den += w;
        }
        const double v = num / den;
        best = direction > 0 ? std::max(best, v) : std::min(best, v);
    }
    return best;
}

// ---------------------------------------------------------------------------
// QB interval: quantile balancing added to the ZSB program. Closed form via
// the weighted check-loss minimizer; exactly the Hajek estimate at Gamma = 1.
// ---------------------------------------------------------------------------

namespace detail {

struct QbArmInput {
    std::vector<double> y, e, q;  // q: balancing quantile column for this direction
};

inline QbArmInput gather_qb_arm(const ObsSample& s, int arm, int direction) {
    if (!s.has_quantiles()) throw MissingNuisance("qb requires quantile columns");
    QbArmInput in;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.t[i] != arm) continue;
        in.y.push_back(s.y[i]);
        in.e.push_back(arm == 1 ? s.e[i] : 1.0 - s.e[i]);
        const double q = arm == 1 ? (direction > 0 ? s.q1_hi[i] : s.q1_lo[i])
                                  : (direction > 0 ? s.q0_hi[i] : s.q0_lo[i]);
        in.q.push_back(q);
    }
    if (in.y.empty()) throw EmptyArm("no records in arm " + std::to_string(arm));
    return in;
}

/// Upper bound for one arm mean: fit gamma-hat by weighted check loss at
/// tau = Gamma/(Gamma+1), then evaluate the closed form with
/// V_i = sign(residual), sign(0) = +1.
inline double qb_arm_upper(const QbArmInput& in, double g) {
    const std::size_t m = in.y.size();
    const double tau = g / (g + 1.0);
    std::vector<double> w(m);
    for (std::size_t i = 0; i < m; ++i) w[i] = (1.0 - in.e[i]) / in.e[i];

    const CheckFit fit = check_loss_2d(in.q, in.y, tau, w);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double fitted = fit.coef[0] + fit.coef[1] * in.q[i];
        const double r = in.y[i] - fitted;
        const double gpow = sign_plus(r) > 0 ? g : 1.0 / g;
        num += r * (1.0 + gpow * w[i]) + fitted / in.e[i];
        den += 1.0 / in.e[i];
    }
    return num / den;
}

}  // namespace detail

/// One arm's QB mean bound. The lower bound runs the upper-bound routine on
/// the negated outcome with the negated (1-tau)-quantile column and negates
/// the result.
inline double qb_arm_bound(const ObsSample& s, int arm, const GammaValue& gamma, int direction) {
    const double g = gamma.value;
    if (g == 1.0) return ipw_hajek_arm(s, arm);  // algebraic collapse
    detail::QbArmInput in = detail::gather_qb_arm(s, arm, direction);
    if (direction > 0) return detail::qb_arm_upper(in, g);
    for (double& v : in.y) v = -v;
    for (double& v : in.q) v = -v;
    return -detail::qb_arm_upper(in, g);
}

inline SensitivityInterval qb_interval(const ObsSample& s, const GammaValue& gamma) {
    SensitivityInterval out{gamma};
    out.upper = qb_arm_bound(s, 1, gamma, +1) - qb_arm_bound(s, 0, gamma, -1);
    out.lower = qb_arm_bound(s, 1, gamma, -1) - qb_arm_bound(s, 0, gamma, +1);
    return out;
}

inline SensitivityInterval qb_interval(const Dataset& d, const NuisanceTable& table,
                                       const GammaValue& gamma) {
    return qb_interval(ObsSample::from(d, table), gamma);
}

// ---------------------------------------------------------------------------
// CATE-bounds pseudo-outcome learner.
// ---------------------------------------------------------------------------

/// CVaR-style transforms: H_plus averages above the tau quantile, H_minus
/// below the (1-tau) quantile; both share the 1/(1-tau) tail weight.
inline double h_plus(double y, double q, double tau) {
    return q + std::max(y - q, 0.0) / (1.0 - tau);
}
inline double h_minus(double y, double q, double tau) {
    return q - std::max(q - y, 0.0) / (1.0 - tau);
}

inline double r_plus(double y, double q, double tau, double g) {
    return y / g + (1.0 - 1.0 / g) * h_plus(y, q, tau);
}
inline double r_minus(double y, double q, double tau, double g) {
    return y / g + (1.0 - 1.0 / g) * h_minus(y, q, tau);
}

enum class FinalStage { Linear, Knn };

struct FinalStageOptions {
    FinalStage kind = FinalStage::Linear;
    std::size_t knn_k = 50;
};

enum class BoundDirection { Upper, Lower };

/// Final-stage regression of the ATE-contrast pseudo-outcome on covariates.
/// Evaluations of the fitted model are the CATE bound tau_Gamma^{+/-}(x).
struct CateBoundModel {
    BoundDirection direction = BoundDirection::Upper;
    GammaValue gamma{1.0};
    FinalStage stage = FinalStage::Linear;

    Eigen::VectorXd coefficients;            // linear stage
    std::vector<std::vector<double>> knn_x;  // knn stage
    std::vector<double> knn_phi;
    std::size_t knn_k = 0;

    std::vector<double> pseudo_outcomes;  // per training record
    std::vector<double> rho1, rho0;       // adversarial regression predictions
    SupportBounds training_box;

    double evaluate(std::span<const double> x) const {
        if (stage == FinalStage::Linear) {
            double v = coefficients[0];
            for (std::size_t j = 0; j < x.size(); ++j) v += coefficients[j + 1] * x[j];
            return v;
        }
        const std::size_t k = std::min(knn_k, knn_phi.size());
        std::vector<std::pair<double, std::size_t>> dist(knn_phi.size());
        for (std::size_t i = 0; i < knn_phi.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double dx = knn_x[i][j] - x[j];
                d2 += dx * dx;
            }
            dist[i] = {d2, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
        double sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) sum += knn_phi[dist[i].second];
        return sum / static_cast<double>(k);
    }
};

namespace detail {

inline Eigen::VectorXd least_squares(const Dataset& d, std::span<const std::size_t> idx,
                                     std::span<const double> target) {
    const Eigen::Index n = static_cast<Eigen::Index>(idx.size());
    const Eigen::Index p = static_cast<Eigen::Index>(d.dim()) + 1;
    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = d.records[idx[i]];
        X(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < p; ++j) X(i, j) = r.x[j - 1];
        y[i] = target[i];
    }
    Eigen::MatrixXd A = X.transpose() * X;
    for (Eigen::Index j = 0; j < p; ++j) A(j, j) += 1e-10;
    return A.ldlt().solve(X.transpose() * y);
}

inline double eval_linear(const Eigen::VectorXd& beta, std::span<const double> x) {
    double v = beta[0];
    for (std::size_t j = 0; j < x.size(); ++j) v += beta[j + 1] * x[j];
    return v;
}

}  // namespace detail

/// Builds the debiased pseudo-outcome for the requested ATE-bound direction
/// and regresses it on covariates. Upper pairs the treated-arm upper with the
/// control-arm lower (worst-case propensity pairing); Lower mirrors it.
inline CateBoundModel cate_bound_learner(const Dataset& d, const NuisanceTable& table,
                                         const GammaValue& gamma, BoundDirection direction,
                                         const FinalStageOptions& opts = {}) {
    validate_dataset(d);
    const std::size_t n = d.size();
    if (table.size() != n || table.q1_hi.size() != n || table.q0_hi.size() != n)
        throw MissingNuisance("cate_bound_learner needs e_hat and all quantile columns");

    const double g = gamma.value;
    const double tau = tau_level(gamma);
    const bool upper = direction == BoundDirection::Upper;

    std::vector<std::size_t> treated, control;
    for (std::size_t i = 0; i < n; ++i) (d.records[i].t ? treated : control).push_back(i);
    if (treated.empty() || control.empty()) throw EmptyArm("cate_bound_learner needs both arms");

    // Adversarial transforms per arm. Upper ATE bound: R_plus on arm 1 and
    // R_minus on arm 0; the lower bound mirrors both.
    std::vector<double> r1(treated.size()), r0(control.size());
    for (std::size_t k = 0; k < treated.size(); ++k) {
        const std::size_t i = treated[k];
        r1[k] = upper ? r_plus(d.records[i].y, table.q1_hi[i], tau, g)
                      : r_minus(d.records[i].y, table.q1_lo[i], tau, g);
    }
    for (std::size_t k = 0; k < control.size(); ++k) {
        const std::size_t i = control[k];
        r0[k] = upper ? r_minus(d.records[i].y, table.q0_lo[i], tau, g)
                      : r_plus(d.records[i].y, table.q0_hi[i], tau, g);
    }

    const Eigen::VectorXd rho1_coef = detail::least_squares(d, treated, r1);
    const Eigen::VectorXd rho0_coef = detail::least_squares(d, control, r0);

    CateBoundModel model;
    model.direction = direction;
    model.gamma = gamma;
    model.stage = opts.kind;
    model.rho1.resize(n);
    model.rho0.resize(n);
    model.pseudo_outcomes.resize(n);

    std::vector<double> r1_all(n, 0.0), r0_all(n, 0.0);
    for (std::size_t k = 0; k < treated.size(); ++k) r1_all[treated[k]] = r1[k];
    for (std::size_t k = 0; k < control.size(); ++k) r0_all[control[k]] = r0[k];

    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = d.records[i];
        const double e = clip_probability(table.e_hat[i]);
        const double rho1 = detail::eval_linear(rho1_coef, rec.x);
        const double rho0 = detail::eval_linear(rho0_coef, rec.x);
        model.rho1[i] = rho1;
        model.rho0[i] = rho0;
        const double ti = rec.t;
        const double phi1 = ti * rec.y + (1.0 - ti) * rho1 +
                            (1.0 - e) * ti / e * (r1_all[i] - rho1);
        const double phi0 = (1.0 - ti) * rec.y + ti * rho0 +
                            e * (1.0 - ti) / (1.0 - e) * (r0_all[i] - rho0);
        model.pseudo_outcomes[i] = phi1 - phi0;
    }

    if (opts.kind == FinalStage::Linear) {
        std::vector<std::size_t> all(n);
        std::iota(all.begin(), all.end(), std::size_t{0});
        model.coefficients = detail::least_squares(d, all, model.pseudo_outcomes);
    } else {
        model.knn_k = std::max<std::size_t>(1, opts.knn_k);
        for (const auto& r : d.records) model.knn_x.push_back(r.x);
        model.knn_phi = model.pseudo_outcomes;
    }
    model.training_box = support_box(d);
    return model;
}

/// Averages the evaluated CATE bounds over the target covariates. SEs are the
/// sample SD of the evaluations / sqrt(n_target); zero for a single record.
inline SensitivityInterval transport_cate_bounds(const CateBoundModel& upper,
                                                 const CateBoundModel& lower,
                                                 const Dataset& target) {
    if (target.empty()) throw EmptyTarget();
    if (upper.gamma.value != lower.gamma.value)
        throw InvalidArgument("transport_cate_bounds: mismatched Gamma");

    std::size_t outside = 0;
    std::vector<double> up(target.size()), lo(target.size());
    for (std::size_t i = 0; i < target.size(); ++i) {
        const auto& x = target.records[i].x;
        if (!upper.training_box.contains(x)) ++outside;
        up[i] = upper.evaluate(x);
        lo[i] = lower.evaluate(x);
    }
    if (outside > 0)
        std::cerr << "[gammabound] warning: " << outside
                  << " target records outside the CATE training support\n";

    SensitivityInterval out{upper.gamma};
    const double n = static_cast<double>(target.size());
    out.upper = mean(up);
    out.lower = mean(lo);
    out.se_upper = target.size() > 1 ? sample_sd(up) / std::sqrt(n) : 0.0;
    out.se_lower = target.size() > 1 ? sample_sd(lo) / std::sqrt(n) : 0.0;
    return out;
}

}  // namespace gammabound
