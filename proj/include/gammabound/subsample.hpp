#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gammabound/bounds.hpp"
#include "gammabound/data.hpp"
#include "gammabound/errors.hpp"
#include "gammabound/nuisance.hpp"
#include "gammabound/rng.hpp"
#include "gammabound/stats.hpp"

namespace gammabound {

enum class ConfounderKind { Continuous, Binary };
enum class CorrelationSign { Positive, Negative };

struct SubsampleSpec {
    GammaValue gamma_true{2.0};
    std::string confounder;  // column name, x* or u*
    ConfounderKind kind = ConfounderKind::Continuous;
    CorrelationSign sign = CorrelationSign::Positive;
    RngSpec rng;
};

/// The enforced two-valued full propensity P(T=1 | U) used by the rejection
/// sampler. Both branches sit on the MSM boundary around pi_hat; the branch
/// masses are chosen so the treated marginal stays pi_hat.
struct PropensityDesign {
    double pi_hat = 0.5;
    double ell = 0.5;
    double u = 0.5;
    double qstar = 0.5;
    double threshold = 0.0;  // empirical quantile of U (continuous kind)
    ConfounderKind kind = ConfounderKind::Continuous;
    CorrelationSign sign = CorrelationSign::Positive;

    double operator()(double uval) const {
        if (ell == u) return pi_hat;  // Gamma = 1 collapse
        if (kind == ConfounderKind::Binary) {
            const bool high = uval == 1.0;
            if (sign == CorrelationSign::Positive) return high ? ell : u;
            return high ? u : ell;
        }
        // Ties at the threshold take the u branch.
        if (sign == CorrelationSign::Positive) return uval <= threshold ? u : ell;
        return uval >= threshold ? u : ell;
    }
};

/// Builds the designed propensity from pi_hat and the confounder column.
/// Continuous confounders threshold at the empirical qstar-quantile with
///   positive: qstar = (pi - ell)/(u - ell)   (mass below gets u)
///   negative: qstar = (u - pi)/(u - ell)     (mass below gets ell)
/// which is the assignment that preserves E[P(T=1|U)] = pi_hat.
inline PropensityDesign designed_propensity(const SubsampleSpec& spec, double pi_hat,
                                            std::span<const double> u_column) {
    if (!(pi_hat > 0.0 && pi_hat < 1.0)) throw DomainError("pi_hat must lie in (0,1)");
    PropensityDesign d;
    d.pi_hat = pi_hat;
    d.kind = spec.kind;
    d.sign = spec.sign;
    const NominalBounds nb = nominal_bounds(pi_hat, spec.gamma_true);
    d.ell = nb.ell;
    d.u = nb.u;
    if (d.ell == d.u) return d;  // Gamma = 1

    if (spec.kind == ConfounderKind::Continuous) {
        double lo = u_column[0], hi = u_column[0];
        for (double v : u_column) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (!(hi > lo)) throw DegenerateQuantile("confounder column is constant");
        d.qstar = spec.sign == CorrelationSign::Positive
                      ? (pi_hat - nb.ell) / (nb.u - nb.ell)
                      : (nb.u - pi_hat) / (nb.u - nb.ell);
        std::vector<double> sorted(u_column.begin(), u_column.end());
        std::sort(sorted.begin(), sorted.end());
        d.threshold = quantile_sorted(sorted, d.qstar);
    } else {
        d.qstar = spec.sign == CorrelationSign::Positive
                      ? (nb.u - pi_hat) / (nb.u - nb.ell)   // target P(U=1)
                      : (pi_hat - nb.ell) / (nb.u - nb.ell);
    }
    return d;
}

struct SubsampleAudit {
    double pi_hat_pre = 0.0;   // treated fraction before the prevalence pre-step
    double pi_hat = 0.0;       // treated fraction used by the design
    double ell = 0.0;
    double u = 0.0;
    double qstar = 0.0;
    double big_m = 1.0;
    std::size_t passes = 0;
    std::size_t n_input = 0;
    std::size_t n_output = 0;
    double survival_fraction = 1.0;
};

namespace detail {

struct ConfounderRef {
    bool hidden = false;  // true: u column, false: x column
    std::size_t index = 0;
};

inline ConfounderRef resolve_confounder(const Dataset& d, const std::string& name) {
    for (std::size_t j = 0; j < d.u_names.size(); ++j)
        if (d.u_names[j] == name) return {true, j};
    for (std::size_t j = 0; j < d.x_names.size(); ++j)
        if (d.x_names[j] == name) return {false, j};
    throw InvalidArgument("confounder column '" + name + "' not found");
}

inline double confounder_value(const UnitRecord& r, const ConfounderRef& ref) {
    return ref.hidden ? r.u.at(ref.index) : r.x.at(ref.index);
}

inline Dataset drop_column(const Dataset& d, const ConfounderRef& ref) {
    Dataset out = d;
    if (ref.hidden) {
        out.u_names.erase(out.u_names.begin() + static_cast<long>(ref.index));
        for (auto& r : out.records) r.u.erase(r.u.begin() + static_cast<long>(ref.index));
    } else {
        out.x_names.erase(out.x_names.begin() + static_cast<long>(ref.index));
        for (auto& r : out.records) r.x.erase(r.x.begin() + static_cast<long>(ref.index));
    }
    return out;
}

}  // namespace detail

/// Rejection sampling of a trial into a confounded observational study with
/// designed strength Gamma. Each unit draws its acceptance uniform once; the
/// pass loop repeats until a full pass discards nothing and the confounder
/// column is stripped from the output.
inline std::pair<Dataset, SubsampleAudit> rejection_subsample(const Dataset& d,
                                                              const SubsampleSpec& spec) {
    validate_dataset(d);
    const auto ref = detail::resolve_confounder(d, spec.confounder);

    std::vector<std::size_t> keep(d.size());
    std::iota(keep.begin(), keep.end(), std::size_t{0});

    SubsampleAudit audit;
    audit.n_input = d.size();
    {
        double treated = 0.0;
        for (const auto& r : d.records) treated += r.t;
        audit.pi_hat_pre = treated / static_cast<double>(d.size());
    }

    Rng rng(spec.rng);

    if (spec.kind == ConfounderKind::Binary) {
        std::vector<std::size_t> ones, zeros;
        for (std::size_t i : keep) {
            const double v = detail::confounder_value(d.records[i], ref);
            if (v != 0.0 && v != 1.0)
                throw SchemaError("binary confounder has value outside {0,1}");
            (v == 1.0 ? ones : zeros).push_back(i);
        }
        const NominalBounds nb = nominal_bounds(audit.pi_hat_pre, spec.gamma_true);
        if (nb.u > nb.ell) {
            const double target = spec.sign == CorrelationSign::Positive
                                      ? (nb.u - audit.pi_hat_pre) / (nb.u - nb.ell)
                                      : (audit.pi_hat_pre - nb.ell) / (nb.u - nb.ell);
            // Down-sample the over-represented class uniformly at random.
            const double p1 = static_cast<double>(ones.size()) / static_cast<double>(keep.size());
            if (p1 > target) {
                const std::size_t want = static_cast<std::size_t>(
                    std::llround(target / (1.0 - target) * static_cast<double>(zeros.size())));
                rng.shuffle(ones);
                ones.resize(std::min(ones.size(), std::max<std::size_t>(want, 1)));
            } else if (p1 < target) {
                const std::size_t want = static_cast<std::size_t>(
                    std::llround((1.0 - target) / target * static_cast<double>(ones.size())));
                rng.shuffle(zeros);
                zeros.resize(std::min(zeros.size(), std::max<std::size_t>(want, 1)));
            }
            keep.clear();
            keep.insert(keep.end(), ones.begin(), ones.end());
            keep.insert(keep.end(), zeros.begin(), zeros.end());
            std::sort(keep.begin(), keep.end());
        }
    }

    // pi_hat re-estimated after the prevalence pre-step.
    {
        double treated = 0.0;
        for (std::size_t i : keep) treated += d.records[i].t;
        audit.pi_hat = treated / static_cast<double>(keep.size());
    }
    if (!(audit.pi_hat > 0.0 && audit.pi_hat < 1.0))
        throw SingleArm("input has a single treatment arm");

    std::vector<double> u_col(keep.size());
    for (std::size_t k = 0; k < keep.size(); ++k)
        u_col[k] = detail::confounder_value(d.records[keep[k]], ref);
    const PropensityDesign design = designed_propensity(spec, audit.pi_hat, u_col);
    audit.ell = design.ell;
    audit.u = design.u;
    audit.qstar = design.qstar;

    // M = max_i P(T=t_i | U_i) / min_i pi_hat(t_i), fixed before the loop.
    double max_num = 0.0, min_den = 1.0;
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const auto& r = d.records[keep[k]];
        const double p = design(u_col[k]);
        max_num = std::max(max_num, r.t == 1 ? p : 1.0 - p);
        min_den = std::min(min_den, r.t == 1 ? audit.pi_hat : 1.0 - audit.pi_hat);
    }
    audit.big_m = max_num / min_den;

    // One acceptance uniform per unit, fixed across passes.
    std::vector<double> k_draw(keep.size());
    for (double& v : k_draw) v = rng.uniform();

    std::vector<char> alive(keep.size(), 1);
    bool discarded = true;
    while (discarded) {
        discarded = false;
        ++audit.passes;
        for (std::size_t k = 0; k < keep.size(); ++k) {
            if (!alive[k]) continue;
            const auto& r = d.records[keep[k]];
            const double p = design(u_col[k]);
            const double accept = (r.t == 1 ? p : 1.0 - p) /
                                  ((r.t == 1 ? audit.pi_hat : 1.0 - audit.pi_hat) * audit.big_m);
            if (k_draw[k] > accept) {
                alive[k] = 0;
                discarded = true;
            }
        }
    }

    Dataset survivors;
    survivors.kind = DatasetKind::Obs;
    survivors.x_names = d.x_names;
    survivors.u_names = d.u_names;
    for (std::size_t k = 0; k < keep.size(); ++k)
        if (alive[k]) survivors.records.push_back(d.records[keep[k]]);
    if (survivors.records.empty()) throw EmptyResult("rejection sampling discarded every record");

    audit.n_output = survivors.size();
    audit.survival_fraction =
        static_cast<double>(audit.n_output) / static_cast<double>(audit.n_input);
    return {detail::drop_column(survivors, ref), audit};
}

// ---------------------------------------------------------------------------
// Nested-design importance weights.
// ---------------------------------------------------------------------------

struct NestedWeights {
    PropensityModel membership;  // logistic model for P(S=1 | X)
    double support_ratio = 1.0;  // P(S=1 | X in support) / P(S=0 | X in support)
    std::vector<double> w;       // per pooled record

    double weight(std::span<const double> x) const {
        const double p = membership.predict_clipped(x);
        return (1.0 - p) / p * support_ratio;
    }
};

/// w(x) = P(S=0|x)/P(S=1|x) * P(S=1 | X in supp)/P(S=0 | X in supp), with the
/// membership model clipped before the ratio.
inline NestedWeights estimate_nested_weights(const Dataset& pooled, const SupportBounds& support,
                                             double lambda = 1e-6) {
    validate_dataset(pooled);
    bool any0 = false, any1 = false;
    for (const auto& r : pooled.records) {
        if (!r.s) throw MissingStudyIndicator();
        (*r.s == 1 ? any1 : any0) = true;
    }
    if (!any0 || !any1) throw SingleStudy();

    // Reuse the logistic machinery with S as the response.
    Dataset relabeled = pooled;
    for (auto& r : relabeled.records) r.t = *r.s;
    NestedWeights nw;
    nw.membership = fit_propensity(relabeled, lambda);

    std::size_t in1 = 0, in0 = 0;
    for (const auto& r : pooled.records) {
        if (!support.contains(r.x)) continue;
        (*r.s == 1 ? in1 : in0) += 1;
    }
    if (in1 == 0 || in0 == 0)
        throw EmptyResult("support bounds exclude one study entirely");
    nw.support_ratio = static_cast<double>(in1) / static_cast<double>(in0);

    nw.w.resize(pooled.size());
    for (std::size_t i = 0; i < pooled.size(); ++i)
        nw.w[i] = nw.weight(pooled.records[i].x);
    return nw;
}

}  // namespace gammabound
