#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gammabound/bounds.hpp"
#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/nuisance.hpp"
#include "gammabound/rng.hpp"
#include "gammabound/stats.hpp"

namespace gammabound {

enum class BoundsEstimator { Qb, Zsb, CateLearner };

inline const char* to_string(BoundsEstimator e) {
    switch (e) {
        case BoundsEstimator::Qb: return "qb";
        case BoundsEstimator::Zsb: return "zsb";
        case BoundsEstimator::CateLearner: return "cate_learner";
    }
    return "?";
}

struct TestConfig {
    double alpha = 0.05;
    TargetPopulation target = TargetPopulation::ObsRestricted;
    std::size_t n_bs = 100;           // bootstrap replicates (ObsRestricted path)
    RngSpec rng;
    BoundsEstimator estimator = BoundsEstimator::Qb;
    bool one_sided = false;           // evaluate only the upper-side statistic
    NuisanceSpec nuisance;
    FinalStageOptions final_stage;    // CATE-learner path
};

struct TestResult {
    GammaValue gamma{1.0};
    double stat_plus = 0.0;
    double stat_minus = 0.0;
    double threshold = 0.0;  // z_{alpha/2}, negative
    bool reject = false;
    AteEstimate ate;
    SensitivityInterval interval{GammaValue{1.0}};
};

// ---------------------------------------------------------------------------
// Trial-side ATE.
// ---------------------------------------------------------------------------

/// Difference-in-weighted-means over the trial with known assignment
/// probability pi and per-record target weights w. SE is estimator scale.
inline AteEstimate rct_ate(const Dataset& d_rct, double pi, std::span<const double> w,
                           TargetPopulation target = TargetPopulation::Rct) {
    validate_dataset(d_rct);
    if (!(pi > 0.0 && pi < 1.0)) throw DomainError("pi must lie in (0,1)");
    if (w.size() != d_rct.size()) throw InvalidArgument("rct_ate: weight length mismatch");

    const std::size_t n = d_rct.size();
    std::vector<double> terms(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& r = d_rct.records[i];
        if (w[i] < 0.0) throw InvalidArgument("rct_ate: negative weight");
        terms[i] = r.y * (r.t / pi - (1.0 - r.t) / (1.0 - pi)) * w[i];
    }
    AteEstimate est;
    est.value = mean(terms);
    est.se = n > 1 ? std::sqrt(sample_variance(terms) / static_cast<double>(n)) : 0.0;
    est.target = target;
    return est;
}

inline AteEstimate rct_ate(const Dataset& d_rct, double pi) {
    return rct_ate(d_rct, pi, std::vector<double>(d_rct.size(), 1.0));
}

// ---------------------------------------------------------------------------
// Bootstrap bags: index arrays materialized once per rng and reused for every
// Gamma in a session, so the resampling noise is common across the grid.
// ---------------------------------------------------------------------------

struct BootstrapBags {
    std::vector<std::vector<std::uint32_t>> bags;

    static BootstrapBags make(std::size_t n, std::size_t n_bs, const RngSpec& spec) {
        BootstrapBags b;
        Rng rng(spec);
        b.bags.resize(n_bs);
        for (auto& bag : b.bags) {
            bag.resize(n);
            for (auto& idx : bag) idx = static_cast<std::uint32_t>(rng.uniform_index(n));
        }
        return b;
    }
};

namespace detail {

inline SensitivityInterval point_interval(const ObsSample& s, BoundsEstimator est,
                                          const GammaValue& gamma) {
    switch (est) {
        case BoundsEstimator::Qb: return qb_interval(s, gamma);
        case BoundsEstimator::Zsb: return zsb_interval(s, gamma);
        case BoundsEstimator::CateLearner:
            throw InvalidArgument("cate_learner has no direct ATE-interval path");
    }
    throw InvalidArgument("unknown estimator");
}

}  // namespace detail

/// Point bounds plus bootstrap standard errors. The balancing coefficient is
/// re-solved per bag; the per-record nuisances travel with the resampled rows.
inline SensitivityInterval bootstrap_interval_se(const ObsSample& s, const GammaValue& gamma,
                                                 BoundsEstimator est, const BootstrapBags& bags) {
    if (bags.bags.size() < 2) throw InvalidArgument("bootstrap needs at least 2 bags");
    SensitivityInterval point = detail::point_interval(s, est, gamma);
    std::vector<double> lows, ups;
    lows.reserve(bags.bags.size());
    ups.reserve(bags.bags.size());
    for (const auto& bag : bags.bags) {
        const ObsSample resampled = s.gather(bag);
        const SensitivityInterval iv = detail::point_interval(resampled, est, gamma);
        lows.push_back(iv.lower);
        ups.push_back(iv.upper);
    }
    point.se_lower = sample_sd(lows);
    point.se_upper = sample_sd(ups);
    return point;
}

inline SensitivityInterval bootstrap_interval_se(const Dataset& d_obs, const NuisanceTable& table,
                                                 const GammaValue& gamma, BoundsEstimator est,
                                                 std::size_t n_bs, const RngSpec& rng) {
    const ObsSample s = ObsSample::from(d_obs, table);
    return bootstrap_interval_se(s, gamma, est, BootstrapBags::make(s.size(), n_bs, rng));
}

// ---------------------------------------------------------------------------
// The level-alpha test.
// ---------------------------------------------------------------------------

namespace detail {

/// Standardized gap; zero denominators degrade to signed infinities so grid
/// walks stay deterministic.
inline double standardized_stat(double numerator, double denom) {
    if (denom > 0.0) return numerator / denom;
    return numerator >= 0.0 ? std::numeric_limits<double>::infinity()
                            : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Reusable context for testing many Gamma values on the same data: the trial
/// estimate, cross-fitted nuisances and bootstrap bags are built once.
class TestSession {
public:
    TestSession(const Dataset& d_rct, const Dataset& d_obs, TestConfig cfg,
                std::optional<std::vector<double>> rct_weights = std::nullopt)
        : cfg_(std::move(cfg)), d_rct_(d_rct), d_obs_(d_obs) {
        validate_dataset(d_rct_);
        validate_dataset(d_obs_);
        if (d_rct_.kind != DatasetKind::Rct)
            throw InvalidArgument("run_test: first dataset must be the trial");
        const double pi = d_rct_.pi.value_or(0.5);

        std::vector<double> w =
            rct_weights ? std::move(*rct_weights) : std::vector<double>(d_rct_.size(), 1.0);
        ate_ = rct_ate(d_rct_, pi, w, cfg_.target);

        auto plan = make_crossfit_plan(d_obs_.size(), cfg_.nuisance.folds,
                                       cfg_.rng.fork("crossfit"));
        fitter_ = std::make_unique<CrossFitter>(d_obs_, std::move(plan), cfg_.nuisance);

        if (cfg_.target == TargetPopulation::ObsRestricted) {
            if (cfg_.n_bs > 0)
                bags_ = BootstrapBags::make(d_obs_.size(), cfg_.n_bs, cfg_.rng.fork("bootstrap"));
            else if (cfg_.estimator != BoundsEstimator::CateLearner)
                throw InvalidArgument("n_bs = 0 requires analytic SEs");
        }
    }

    const AteEstimate& ate() const { return ate_; }

    SensitivityInterval interval(const GammaValue& gamma) {
        const NuisanceTable table = fitter_->table(gamma);
        if (cfg_.target == TargetPopulation::Rct ||
            cfg_.estimator == BoundsEstimator::CateLearner) {
            const auto upper = cate_bound_learner(d_obs_, table, gamma, BoundDirection::Upper,
                                                  cfg_.final_stage);
            const auto lower = cate_bound_learner(d_obs_, table, gamma, BoundDirection::Lower,
                                                  cfg_.final_stage);
            const Dataset& target = cfg_.target == TargetPopulation::Rct ? d_rct_ : d_obs_;
            return transport_cate_bounds(upper, lower, target);
        }
        const ObsSample s = ObsSample::from(d_obs_, table);
        return bootstrap_interval_se(s, gamma, cfg_.estimator, bags_);
    }

    TestResult test(const GammaValue& gamma) {
        TestResult res;
        res.gamma = gamma;
        res.ate = ate_;
        res.interval = interval(gamma);
        res.threshold = normal_quantile(cfg_.alpha / 2.0);

        const double se_mu = ate_.se;
        double denom_plus, denom_minus;
        if (cfg_.target == TargetPopulation::Rct) {
            denom_plus = std::sqrt(res.interval.se_upper * res.interval.se_upper +
                                   se_mu * se_mu + 2.0 * res.interval.se_upper * se_mu);
            denom_minus = std::sqrt(res.interval.se_lower * res.interval.se_lower +
                                    se_mu * se_mu + 2.0 * res.interval.se_lower * se_mu);
        } else {
            denom_plus =
                std::sqrt(res.interval.se_upper * res.interval.se_upper + se_mu * se_mu);
            denom_minus =
                std::sqrt(res.interval.se_lower * res.interval.se_lower + se_mu * se_mu);
        }
        res.stat_plus = detail::standardized_stat(res.interval.upper - ate_.value, denom_plus);
        res.stat_minus = detail::standardized_stat(ate_.value - res.interval.lower, denom_minus);

        const double decisive =
            cfg_.one_sided ? res.stat_plus : std::min(res.stat_plus, res.stat_minus);
        res.reject = decisive < res.threshold;
        return res;
    }

private:
    TestConfig cfg_;
    Dataset d_rct_;
    Dataset d_obs_;
    AteEstimate ate_;
    std::unique_ptr<CrossFitter> fitter_;
    BootstrapBags bags_;
};

/// Algorithm entry point for a single Gamma. For grids prefer TestSession,
/// which shares nuisances and bootstrap bags across the walk.
inline TestResult run_test(const Dataset& d_rct, const Dataset& d_obs, const GammaValue& gamma,
                           const TestConfig& cfg,
                           std::optional<std::vector<double>> rct_weights = std::nullopt) {
    TestSession session(d_rct, d_obs, cfg, std::move(rct_weights));
    return session.test(gamma);
}

}  // namespace gammabound
