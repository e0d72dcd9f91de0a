#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "gammabound/bounds.hpp"
#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/hypothesis.hpp"

namespace gammabound {

/// Additive search grid over confounding strengths, anchored at 1.
struct GammaGrid {
    double start = 1.0;
    double step = 0.05;
    double max = 20.0;

    GammaGrid() = default;
    GammaGrid(double step_, double max_) : step(step_), max(max_) {
        if (!(step > 0.0)) throw InvalidArgument("grid step must be positive");
        if (!(max >= start)) throw InvalidArgument("grid max must be >= 1");
    }

    std::vector<double> points() const {
        std::vector<double> out;
        for (double g = start; g <= max + 1e-12; g += step) out.push_back(std::min(g, max));
        return out;
    }
};

struct LowerBoundResult {
    std::optional<GammaValue> gamma_lb;  // nullopt = not found up to grid.max
    std::optional<GammaValue> gamma_ct;
    std::optional<int> psi_sens;
    std::optional<int> psi_bin;
    GammaGrid grid;
    std::vector<std::pair<double, TestResult>> trace;
};

/// Walks the grid upward with an arbitrary tester and reports the first
/// accepted Gamma. With full_trace the whole grid is evaluated (diagnostics);
/// otherwise the walk stops at the first acceptance.
inline LowerBoundResult gamma_lower_bound_with(
    const std::function<TestResult(const GammaValue&)>& tester, const GammaGrid& grid,
    bool full_trace = false) {
    LowerBoundResult out;
    out.grid = grid;
    for (double g : grid.points()) {
        const TestResult res = tester(GammaValue{g});
        out.trace.emplace_back(g, res);
        if (!res.reject && !out.gamma_lb) {
            out.gamma_lb = GammaValue{g};
            if (!full_trace) break;
        }
    }
    return out;
}

/// Grid search for the smallest accepted Gamma. Nuisances and bootstrap bags
/// are shared across the walk via TestSession.
inline LowerBoundResult gamma_lower_bound(const Dataset& d_rct, const Dataset& d_obs,
                                          const GammaGrid& grid, const TestConfig& cfg,
                                          std::optional<std::vector<double>> rct_weights =
                                              std::nullopt,
                                          bool full_trace = false) {
    TestSession session(d_rct, d_obs, cfg, std::move(rct_weights));
    return gamma_lower_bound_with(
        [&session](const GammaValue& g) { return session.test(g); }, grid, full_trace);
}

/// Smallest grid Gamma whose sensitivity interval contains zero; the point at
/// which the study's qualitative conclusion could be explained away.
inline std::optional<GammaValue> critical_value(const Dataset& d_obs, const GammaGrid& grid,
                                                BoundsEstimator estimator,
                                                const NuisanceSpec& nuisance,
                                                const RngSpec& rng) {
    validate_dataset(d_obs);
    auto plan = make_crossfit_plan(d_obs.size(), nuisance.folds, rng.fork("crossfit"));
    CrossFitter fitter(d_obs, std::move(plan), nuisance);
    for (double g : grid.points()) {
        const GammaValue gamma{g};
        const NuisanceTable table = fitter.table(gamma);
        const ObsSample s = ObsSample::from(d_obs, table);
        const SensitivityInterval iv = estimator == BoundsEstimator::Zsb
                                           ? zsb_interval(s, gamma)
                                           : qb_interval(s, gamma);
        if (iv.lower <= 0.0 && 0.0 <= iv.upper) return gamma;
    }
    return std::nullopt;
}

/// psi_sens = 1{Gamma_LB > Gamma_CT}, psi_bin = 1{Gamma_LB > 1}. A lower
/// bound beyond the searchable range still flags confounding; an unreachable
/// critical value never overturns the study.
inline std::pair<int, int> flag_decisions(const std::optional<GammaValue>& gamma_lb,
                                          const std::optional<GammaValue>& gamma_ct) {
    int psi_sens, psi_bin;
    if (!gamma_lb) {
        psi_bin = 1;
        psi_sens = gamma_ct ? 1 : 0;
    } else {
        psi_bin = gamma_lb->value > 1.0 ? 1 : 0;
        psi_sens = gamma_ct && gamma_lb->value > gamma_ct->value ? 1 : 0;
    }
    return {psi_sens, psi_bin};
}

// ---------------------------------------------------------------------------
// Infinite-sample lower bound on an oracle data-generating process.
// ---------------------------------------------------------------------------

/// Population-level view of a DGP: everything the infinite-sample bound needs.
/// Draws are from the (support-restricted) observational law; quantiles are
/// the population conditional quantiles of Y | X, T under that law.
struct PopulationOracle {
    double true_ate = 0.0;
    std::function<double(double)> nominal_propensity;       // e(x)
    std::function<double(double, int, double)> quantile;    // Q_z(x, t)
    // Draws one (x, t, y) from the observational law into the output args.
    std::function<void(Rng&, double&, int&, double&)> draw;
};

namespace detail {

struct OracleDraw {
    double x;
    int t;
    double y;
};

/// Population sensitivity bounds at Gamma via the closed-form worst-case
/// propensities, Monte Carlo over frozen draws.
inline std::pair<double, double> population_bounds(const PopulationOracle& oracle,
                                                   std::span<const OracleDraw> draws,
                                                   const GammaValue& gamma) {
    const double g = gamma.value;
    const double tau1 = g / (g + 1.0);
    const double tau0 = 1.0 / (g + 1.0);
    double sum_plus = 0.0, sum_minus = 0.0;
    for (const auto& d : draws) {
        const double e = oracle.nominal_propensity(d.x);
        const NominalBounds nb = nominal_bounds(e, gamma);
        const double q = d.t == 1 ? oracle.quantile(d.x, 1, tau1) : oracle.quantile(d.x, 0, tau0);
        // Upper bound: ell above the arm's quantile threshold, u below; the
        // lower bound swaps them. Only the threshold level depends on the arm.
        const double e_plus = d.y > q ? nb.ell : nb.u;
        const double e_minus = d.y > q ? nb.u : nb.ell;
        if (d.t == 1) {
            sum_plus += d.y / e_plus;
            sum_minus += d.y / e_minus;
        } else {
            sum_plus -= d.y / (1.0 - e_plus);
            sum_minus -= d.y / (1.0 - e_minus);
        }
    }
    const double n = static_cast<double>(draws.size());
    return {sum_minus / n, sum_plus / n};  // (lower, upper)
}

}  // namespace detail

/// Bisects on Gamma for the point where the binding population bound reaches
/// the true ATE. Returns 1.0 when the Gamma = 1 interval already covers the
/// ATE (up to Monte Carlo noise). Tolerance 1e-3 in Gamma.
inline GammaValue infinite_sample_lower_bound(const PopulationOracle& oracle,
                                              const GammaValue& gamma_star, std::size_t mc_n,
                                              const RngSpec& rng_spec) {
    (void)gamma_star;  // the oracle already embeds the designed strength
    Rng rng(rng_spec);
    std::vector<detail::OracleDraw> draws(mc_n);
    std::vector<double> ipw_terms(mc_n);
    for (auto& d : draws) oracle.draw(rng, d.x, d.t, d.y);

    const auto [lo1, up1] = detail::population_bounds(oracle, draws, GammaValue{1.0});
    // At Gamma = 1 both bounds equal the nominal IPW value; guard the
    // inclusion check with its Monte Carlo error.
    for (std::size_t i = 0; i < mc_n; ++i) {
        const auto& d = draws[i];
        const double e = oracle.nominal_propensity(d.x);
        ipw_terms[i] = d.t == 1 ? d.y / e : -d.y / (1.0 - e);
    }
    const double mc_se = sample_sd(ipw_terms) / std::sqrt(static_cast<double>(mc_n));
    const double mu = oracle.true_ate;
    if (mu >= lo1 - 3.0 * mc_se && mu <= up1 + 3.0 * mc_se) return GammaValue{1.0};

    const bool need_upper = mu > up1;  // confounding biased the estimate down
    auto gap = [&](double g) {
        const auto [lo, up] = detail::population_bounds(oracle, draws, GammaValue{g});
        return need_upper ? up - mu : mu - lo;
    };

    double lo_g = 1.0, hi_g = 2.0;
    while (gap(hi_g) < 0.0) {
        lo_g = hi_g;
        hi_g *= 2.0;
        if (hi_g > 1024.0) throw NoConvergence("infinite_sample_lower_bound: no bracket");
    }
    while (hi_g - lo_g > 1e-3) {
        const double mid = 0.5 * (lo_g + hi_g);
        (gap(mid) >= 0.0 ? hi_g : lo_g) = mid;
    }
    return GammaValue{0.5 * (lo_g + hi_g)};
}

}  // namespace gammabound
