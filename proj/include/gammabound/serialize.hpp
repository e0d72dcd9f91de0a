#pragma once

#include <json.hpp>
#include <optional>
#include <string>

#include "gammabound/hypothesis.hpp"
#include "gammabound/lower_bound.hpp"
#include "gammabound/subsample.hpp"
#include "gammabound/synthetic.hpp"

namespace gammabound {

constexpr const char* kOutputVersion = "1";

inline nlohmann::json to_json(const TestResult& r, TargetPopulation target,
                              BoundsEstimator estimator) {
    const auto finite_or_null = [](double v) -> nlohmann::json {
        if (std::isfinite(v)) return v;
        return v > 0 ? "inf" : "-inf";
    };
    return nlohmann::json{{"version", kOutputVersion},
                          {"gamma", r.gamma.value},
                          {"stat_plus", finite_or_null(r.stat_plus)},
                          {"stat_minus", finite_or_null(r.stat_minus)},
                          {"threshold", r.threshold},
                          {"reject", r.reject},
                          {"mu_hat", r.ate.value},
                          {"se_mu", r.ate.se},
                          {"bound_lower", r.interval.lower},
                          {"bound_upper", r.interval.upper},
                          {"se_lower", r.interval.se_lower},
                          {"se_upper", r.interval.se_upper},
                          {"target", to_string(target)},
                          {"estimator", to_string(estimator)}};
}

inline nlohmann::json to_json(const LowerBoundResult& r, TargetPopulation target,
                              BoundsEstimator estimator, bool include_trace = true) {
    nlohmann::json j{{"version", kOutputVersion},
                     {"grid", {{"start", r.grid.start}, {"step", r.grid.step}, {"max", r.grid.max}}},
                     {"searched_max", r.grid.max}};
    j["gamma_lb"] = r.gamma_lb ? nlohmann::json(r.gamma_lb->value) : nlohmann::json(nullptr);
    j["gamma_ct"] = r.gamma_ct ? nlohmann::json(r.gamma_ct->value) : nlohmann::json(nullptr);
    if (r.psi_sens) j["psi_sens"] = *r.psi_sens;
    if (r.psi_bin) j["psi_bin"] = *r.psi_bin;
    if (include_trace) {
        nlohmann::json trace = nlohmann::json::array();
        for (const auto& [g, res] : r.trace) {
            auto t = to_json(res, target, estimator);
            t.erase("version");
            trace.push_back(std::move(t));
        }
        j["trace"] = std::move(trace);
    }
    return j;
}

inline nlohmann::json to_json(const SyntheticSpec& spec) {
    return nlohmann::json{{"version", kOutputVersion},
                          {"gamma_star", spec.gamma_star.value},
                          {"n_rct", spec.n_rct},
                          {"n_obs", spec.n_obs},
                          {"sigma_y", spec.sigma_y},
                          {"pi", spec.pi},
                          {"mode", to_string(spec.mode)},
                          {"seed", spec.rng.seed},
                          {"stream", spec.rng.stream}};
}

inline nlohmann::json to_json(const SubsampleAudit& audit) {
    return nlohmann::json{{"version", kOutputVersion},
                          {"pi_hat_pre", audit.pi_hat_pre},
                          {"pi_hat", audit.pi_hat},
                          {"ell", audit.ell},
                          {"u", audit.u},
                          {"qstar", audit.qstar},
                          {"M", audit.big_m},
                          {"passes", audit.passes},
                          {"n_input", audit.n_input},
                          {"n_output", audit.n_output},
                          {"survival_fraction", audit.survival_fraction}};
}

inline nlohmann::json error_json(const std::string& what) {
    return nlohmann::json{{"version", kOutputVersion}, {"error", what}};
}

}  // namespace gammabound
