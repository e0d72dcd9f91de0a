#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "gammabound/bounds.hpp"
#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/lower_bound.hpp"
#include "gammabound/nuisance.hpp"
#include "gammabound/rng.hpp"
#include "gammabound/stats.hpp"

namespace gammabound {

/// How the hidden confounder enters the outcome model.
///  - Additive: Y(T) = (2T-1)X + (2T-1) + U + eps  (the default design)
///  - PotentialOutcome: same but eps = 0, so the outcome order coincides with
///    the U order and the full propensity is the closed-form worst case
///  - Independent: U drives treatment only; Y(T) = (2T-1)X + (2T-1) + eps
enum class ConfounderMode { Additive, PotentialOutcome, Independent };

inline const char* to_string(ConfounderMode m) {
    switch (m) {
        case ConfounderMode::Additive: return "additive";
        case ConfounderMode::PotentialOutcome: return "potential_outcome";
        case ConfounderMode::Independent: return "independent";
    }
    return "?";
}

struct SyntheticSpec {
    GammaValue gamma_star{1.0};
    std::size_t n_rct = 2000;
    std::size_t n_obs = 2000;
    double sigma_y = 0.31622776601683794;  // SD; variance 0.1
    double pi = 0.5;
    ConfounderMode mode = ConfounderMode::Additive;
    RngSpec rng;
};

/// Marginal observational propensity e(x): logistic in x.
inline double marginal_propensity(double x) { return sigmoid(0.75 * x + 0.5); }

/// Boundary-of-MSM full propensity: the threshold on the uniform confounder
/// is chosen so E[e+(X,U) | X] = e(X) exactly.
inline double adversarial_propensity(double x, double u, const GammaValue& gamma_star) {
    if (!(u >= 0.0 && u <= 1.0)) throw DomainError("hidden confounder must lie in [0,1]");
    const double e = marginal_propensity(x);
    if (gamma_star.value == 1.0) return e;
    const NominalBounds nb = nominal_bounds(e, gamma_star);
    const double threshold = (e - nb.ell) / (nb.u - nb.ell);
    return u <= threshold ? nb.u : nb.ell;
}

struct OracleRows {
    std::vector<double> u, y0, y1, e, e_plus;

    std::size_t size() const { return u.size(); }
};

struct OracleView {
    OracleRows rct;
    OracleRows obs;
};

struct SyntheticData {
    Dataset rct;
    Dataset obs;
    OracleView oracle;
};

/// Sample Pearson correlation between the hidden confounder and the treated
/// potential outcome.
inline double correlation_uy(std::span<const double> u, std::span<const double> y1) {
    return pearson_correlation(u, y1);
}

inline double correlation_uy(const OracleRows& rows) {
    return correlation_uy(rows.u, rows.y1);
}

/// Draws the paired study. Hidden confounders stay on the records (benchmark
/// view); strip_hidden gives the analyst view.
inline SyntheticData generate(const SyntheticSpec& spec) {
    if (spec.n_rct < 1 || spec.n_obs < 1) throw InvalidArgument("sample sizes must be >= 1");
    if (!(spec.sigma_y >= 0.0)) throw InvalidArgument("sigma_y must be >= 0");
    if (!(spec.pi > 0.0 && spec.pi < 1.0)) throw InvalidArgument("pi must lie in (0,1)");

    Rng rng(spec.rng);
    SyntheticData out;
    out.rct.kind = DatasetKind::Rct;
    out.rct.pi = spec.pi;
    out.obs.kind = DatasetKind::Obs;
    out.rct.x_names = out.obs.x_names = {"x0"};
    out.rct.u_names = out.obs.u_names = {"u0"};

    const auto outcome_pair = [&](double x, double u, double eps) {
        double shift = 0.0;
        switch (spec.mode) {
            case ConfounderMode::Additive: shift = u + eps; break;
            case ConfounderMode::PotentialOutcome: shift = u; break;
            case ConfounderMode::Independent: shift = eps; break;
        }
        return std::pair<double, double>{-x - 1.0 + shift, x + 1.0 + shift};  // (y0, y1)
    };

    const auto push = [&](Dataset& d, OracleRows& rows, double x, double u, int t, double e,
                          double e_plus) {
        const double eps = spec.mode == ConfounderMode::PotentialOutcome
                               ? 0.0
                               : rng.normal(0.0, spec.sigma_y);
        const auto [y0, y1] = outcome_pair(x, u, eps);
        UnitRecord r;
        r.x = {x};
        r.u = {u};
        r.t = static_cast<std::uint8_t>(t);
        r.y = t == 1 ? y1 : y0;
        d.records.push_back(std::move(r));
        rows.u.push_back(u);
        rows.y0.push_back(y0);
        rows.y1.push_back(y1);
        rows.e.push_back(e);
        rows.e_plus.push_back(e_plus);
    };

    for (std::size_t i = 0; i < spec.n_rct; ++i) {
        const double x = rng.uniform(-1.0, 1.0);
        const double u = rng.uniform();
        const int t = rng.bernoulli(spec.pi) ? 1 : 0;
        push(out.rct, out.oracle.rct, x, u, t, spec.pi, spec.pi);
    }
    for (std::size_t i = 0; i < spec.n_obs; ++i) {
        const double x = rng.uniform(-2.0, 2.0);
        const double u = rng.uniform();
        const double ep = adversarial_propensity(x, u, spec.gamma_star);
        const int t = rng.bernoulli(ep) ? 1 : 0;
        push(out.obs, out.oracle.obs, x, u, t, marginal_propensity(x), ep);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Population oracle for the infinite-sample lower bound. The observational
// law is restricted to the trial support X in [-1, 1].
// ---------------------------------------------------------------------------

namespace detail {

/// Conditional quantile of U given arm membership when the full propensity
/// steps from u_b (below the threshold) to ell (above it).
inline double tilted_u_quantile(double e, const NominalBounds& nb, double threshold, int t,
                                double z) {
    const double wlo = t == 1 ? nb.u : 1.0 - nb.u;
    const double whi = t == 1 ? nb.ell : 1.0 - nb.ell;
    const double mass = t == 1 ? e : 1.0 - e;
    const double mass_below = wlo * threshold / mass;
    if (z <= mass_below) return z * mass / wlo;
    return threshold + (z * mass - wlo * threshold) / whi;
}

/// int_a^b Phi((c - v) / sigma) dv in closed form.
inline double phi_integral(double c, double sigma, double a, double b) {
    const auto big_g = [](double z) { return z * normal_cdf(z) + normal_pdf(z); };
    return sigma * (big_g((c - a) / sigma) - big_g((c - b) / sigma));
}

}  // namespace detail

/// Population conditional quantile Q_z(x, t) of the synthetic observational
/// law, exact for every confounder mode.
inline double synthetic_population_quantile(const SyntheticSpec& spec, double x, int t, double z) {
    const double base = (2.0 * t - 1.0) * (x + 1.0);
    const double e = marginal_propensity(x);

    if (spec.mode == ConfounderMode::Independent) {
        if (spec.sigma_y == 0.0) return base;
        return base + spec.sigma_y * normal_quantile(z);
    }

    if (spec.gamma_star.value == 1.0) {
        // Uniform confounder, no tilt.
        if (spec.mode == ConfounderMode::PotentialOutcome) return base + z;
        // Additive: U + eps with U uniform on [0,1].
        if (spec.sigma_y == 0.0) return base + z;
        double lo = base - 8.0 * spec.sigma_y, hi = base + 1.0 + 8.0 * spec.sigma_y;
        for (int it = 0; it < 100; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double cdf = detail::phi_integral(mid - base, spec.sigma_y, 0.0, 1.0);
            (cdf >= z ? hi : lo) = mid;
        }
        return 0.5 * (lo + hi);
    }

    const NominalBounds nb = nominal_bounds(e, spec.gamma_star);
    const double threshold = (e - nb.ell) / (nb.u - nb.ell);

    if (spec.mode == ConfounderMode::PotentialOutcome || spec.sigma_y == 0.0)
        return base + detail::tilted_u_quantile(e, nb, threshold, t, z);

    // Additive: piecewise-uniform tilted U convolved with Gaussian noise.
    const double wlo = t == 1 ? nb.u : 1.0 - nb.u;
    const double whi = t == 1 ? nb.ell : 1.0 - nb.ell;
    const double mass = t == 1 ? e : 1.0 - e;
    const auto cdf = [&](double q) {
        const double c = q - base;
        return (wlo * detail::phi_integral(c, spec.sigma_y, 0.0, threshold) +
                whi * detail::phi_integral(c, spec.sigma_y, threshold, 1.0)) /
               mass;
    };
    double lo = base - 8.0 * spec.sigma_y, hi = base + 1.0 + 8.0 * spec.sigma_y;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) >= z ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

inline PopulationOracle make_population_oracle(const SyntheticSpec& spec) {
    PopulationOracle oracle;
    oracle.true_ate = 2.0;  // E[2X + 2] over the restricted support
    oracle.nominal_propensity = [](double x) { return marginal_propensity(x); };
    oracle.quantile = [spec](double x, int t, double z) {
        return synthetic_population_quantile(spec, x, t, z);
    };
    oracle.draw = [spec](Rng& rng, double& x, int& t, double& y) {
        x = rng.uniform(-1.0, 1.0);
        const double u = rng.uniform();
        const double ep = adversarial_propensity(x, u, spec.gamma_star);
        t = rng.bernoulli(ep) ? 1 : 0;
        double shift = 0.0;
        switch (spec.mode) {
            case ConfounderMode::Additive: shift = u + rng.normal(0.0, spec.sigma_y); break;
            case ConfounderMode::PotentialOutcome: shift = u; break;
            case ConfounderMode::Independent: shift = rng.normal(0.0, spec.sigma_y); break;
        }
        y = (2.0 * t - 1.0) * (x + 1.0) + shift;
    };
    return oracle;
}

}  // namespace gammabound
