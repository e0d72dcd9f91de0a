#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "gammabound/config.hpp"
#include "gammabound/data.hpp"
#include "gammabound/hypothesis.hpp"
#include "gammabound/lower_bound.hpp"
#include "gammabound/stats.hpp"
#include "gammabound/synthetic.hpp"

namespace gammabound {

/// Runs fn(i) for i in [0, n) across `jobs` threads. Exceptions propagate to
/// the caller after all workers join.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(jobs);
    const std::size_t k = std::min(jobs, n);
    for (std::size_t w = 0; w < k; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::size_t default_jobs() {
    if (const char* env = std::getenv("GAMMABOUND_JOBS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

enum class Scenario { ValidityCurve, PowerCurve, LbVsNobs, LbVsCorrelation, Coverage };

inline const char* to_string(Scenario s) {
    switch (s) {
        case Scenario::ValidityCurve: return "validity_curve";
        case Scenario::PowerCurve: return "power_curve";
        case Scenario::LbVsNobs: return "lb_vs_nobs";
        case Scenario::LbVsCorrelation: return "lb_vs_correlation";
        case Scenario::Coverage: return "coverage";
    }
    return "?";
}

inline Scenario parse_scenario(const std::string& s) {
    if (s == "validity_curve") return Scenario::ValidityCurve;
    if (s == "power_curve") return Scenario::PowerCurve;
    if (s == "lb_vs_nobs") return Scenario::LbVsNobs;
    if (s == "lb_vs_correlation") return Scenario::LbVsCorrelation;
    if (s == "coverage") return Scenario::Coverage;
    throw InvalidArgument("unknown scenario: " + s);
}

struct ExperimentConfig {
    Scenario scenario = Scenario::ValidityCurve;
    std::size_t seeds = 20;
    std::uint64_t base_seed = 1;
    std::size_t jobs = 0;  // 0 = default_jobs()

    GammaValue gamma_star{5.0};
    std::size_t n_rct = 2000;
    std::vector<std::size_t> n_obs = {2000};
    double sigma_y = 0.31622776601683794;
    ConfounderMode mode = ConfounderMode::Additive;

    double alpha = 0.05;
    TargetPopulation target = TargetPopulation::ObsRestricted;
    BoundsEstimator estimator = BoundsEstimator::Qb;
    std::size_t n_bs = 100;
    std::vector<double> gammas = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0};
    GammaGrid grid{0.25, 20.0};
    NuisanceSpec nuisance;

    static ExperimentConfig from_config(const Config& cfg) {
        ExperimentConfig ec;
        ec.scenario = parse_scenario(cfg.get("experiment.scenario", "validity_curve"));
        ec.seeds = static_cast<std::size_t>(cfg.get_int("experiment.seeds", 20));
        ec.base_seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
        ec.jobs = static_cast<std::size_t>(cfg.get_int("experiment.jobs", 0));
        ec.gamma_star = GammaValue{cfg.get_double("dgp.gamma_star", 5.0)};
        ec.n_rct = static_cast<std::size_t>(cfg.get_int("dgp.n_rct", 2000));
        ec.n_obs = parse_size_list(cfg.get("dgp.n_obs", "2000"));
        ec.sigma_y = cfg.get_double("dgp.sigma_y", ec.sigma_y);
        const std::string mode = cfg.get("dgp.mode", "additive");
        if (mode == "additive") ec.mode = ConfounderMode::Additive;
        else if (mode == "potential_outcome") ec.mode = ConfounderMode::PotentialOutcome;
        else if (mode == "independent") ec.mode = ConfounderMode::Independent;
        else throw InvalidArgument("unknown dgp.mode: " + mode);
        ec.alpha = cfg.get_double("test.alpha", 0.05);
        ec.target = cfg.get("test.target", "osrct") == "rct" ? TargetPopulation::Rct
                                                             : TargetPopulation::ObsRestricted;
        ec.estimator = parse_estimator(cfg.get("bounds.estimator", "qb"));
        ec.n_bs = static_cast<std::size_t>(cfg.get_int("test.n_bs", 100));
        ec.gammas = parse_double_list(cfg.get("test.gammas", "1,2,3,4,5,6,8"));
        ec.grid = GammaGrid(cfg.get_double("grid.step", 0.25), cfg.get_double("grid.max", 20.0));
        ec.nuisance = nuisance_from_config(cfg);
        return ec;
    }

    static std::vector<double> parse_double_list(const std::string& s) {
        std::vector<double> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
        if (out.empty()) throw InvalidArgument("empty list: " + s);
        return out;
    }
    static std::vector<std::size_t> parse_size_list(const std::string& s) {
        std::vector<std::size_t> out;
        for (double v : parse_double_list(s)) out.push_back(static_cast<std::size_t>(v));
        return out;
    }
};

struct ResultRow {
    std::string scenario;
    std::size_t seed = 0;
    std::optional<double> gamma;
    std::optional<std::size_t> n_obs;
    std::optional<double> rho_uy;
    std::optional<int> reject;
    std::optional<double> gamma_lb;  // grid.max + step stands in for "not found"
    double wall_ms = 0.0;
    std::string error;
};

struct ExperimentResult {
    std::vector<ResultRow> rows;
    nlohmann::json summary;
    std::size_t failures = 0;
};

namespace detail {

struct ReplicateData {
    Dataset rct;
    Dataset obs_for_test;  // restricted when the target is ObsRestricted
    double rho_uy = 0.0;
};

inline ReplicateData make_replicate(const ExperimentConfig& ec, std::size_t n_obs,
                                    double sigma_y, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.gamma_star = ec.gamma_star;
    spec.n_rct = ec.n_rct;
    spec.n_obs = n_obs;
    spec.sigma_y = sigma_y;
    spec.mode = ec.mode;
    spec.rng = RngSpec{seed, "dgp"};
    SyntheticData data = generate(spec);

    ReplicateData rep;
    rep.rho_uy = ec.mode == ConfounderMode::Independent
                     ? 0.0
                     : correlation_uy(data.oracle.obs);
    rep.rct = strip_hidden(std::move(data.rct));
    Dataset obs = strip_hidden(std::move(data.obs));
    if (ec.target == TargetPopulation::ObsRestricted) {
        // Trial support is X in [-1,1] by design; the restricted covariate
        // law matches the trial's, so the importance weights are 1.
        rep.obs_for_test = restrict_support(obs, SupportBounds{{{-1.0, 1.0}}});
    } else {
        rep.obs_for_test = std::move(obs);
    }
    return rep;
}

inline TestConfig test_config(const ExperimentConfig& ec, std::uint64_t seed) {
    TestConfig tc;
    tc.alpha = ec.alpha;
    tc.target = ec.target;
    tc.n_bs = ec.n_bs;
    tc.rng = RngSpec{seed, "test"};
    tc.estimator = ec.estimator;
    tc.nuisance = ec.nuisance;
    return tc;
}

inline double lb_value(const LowerBoundResult& r) {
    return r.gamma_lb ? r.gamma_lb->value : r.grid.max + r.grid.step;
}

}  // namespace detail

/// Runs the configured scenario, R seeded replicates in parallel, collecting
/// one row per (seed, grid point) and a scenario-level summary.
inline ExperimentResult run_experiment(const ExperimentConfig& ec) {
    const std::size_t jobs = ec.jobs > 0 ? ec.jobs : default_jobs();
    const std::string scen = to_string(ec.scenario);

    // Work units: seeds x settings, flattened.
    struct Unit {
        std::size_t seed_idx;
        std::size_t setting_idx;
    };
    std::vector<Unit> units;
    const bool per_nobs = ec.scenario == Scenario::LbVsNobs;
    const std::size_t settings = per_nobs ? ec.n_obs.size() : 1;
    for (std::size_t s = 0; s < ec.seeds; ++s)
        for (std::size_t k = 0; k < settings; ++k) units.push_back({s, k});

    std::vector<std::vector<ResultRow>> per_unit(units.size());

    parallel_for(units.size(), jobs, [&](std::size_t ui) {
        const auto [seed_idx, setting_idx] = units[ui];
        const std::uint64_t seed = ec.base_seed + seed_idx;
        auto& rows = per_unit[ui];
        const auto t0 = std::chrono::steady_clock::now();
        const auto elapsed_ms = [&t0] {
            return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                             t0)
                .count();
        };
        try {
            switch (ec.scenario) {
                case Scenario::ValidityCurve:
                case Scenario::PowerCurve: {
                    auto rep = detail::make_replicate(ec, ec.n_obs.front(), ec.sigma_y, seed);
                    TestSession session(rep.rct, rep.obs_for_test, detail::test_config(ec, seed));
                    for (double g : ec.gammas) {
                        const TestResult res = session.test(GammaValue{g});
                        ResultRow row;
                        row.scenario = scen;
                        row.seed = seed_idx;
                        row.gamma = g;
                        row.reject = res.reject ? 1 : 0;
                        row.wall_ms = elapsed_ms();
                        rows.push_back(std::move(row));
                    }
                    break;
                }
                case Scenario::LbVsNobs: {
                    const std::size_t n_obs = ec.n_obs.at(setting_idx);
                    auto rep = detail::make_replicate(ec, n_obs, ec.sigma_y, seed);
                    const auto lb = gamma_lower_bound(rep.rct, rep.obs_for_test, ec.grid,
                                                      detail::test_config(ec, seed));
                    ResultRow row;
                    row.scenario = scen;
                    row.seed = seed_idx;
                    row.n_obs = n_obs;
                    row.gamma_lb = detail::lb_value(lb);
                    row.wall_ms = elapsed_ms();
                    rows.push_back(std::move(row));
                    break;
                }
                case Scenario::LbVsCorrelation: {
                    // sigma_Y^2 ~ Unif[0,1] per draw.
                    Rng noise_rng(RngSpec{seed, "sigma"});
                    const double sigma = std::sqrt(noise_rng.uniform());
                    auto rep = detail::make_replicate(ec, ec.n_obs.front(), sigma, seed);
                    const auto lb = gamma_lower_bound(rep.rct, rep.obs_for_test, ec.grid,
                                                      detail::test_config(ec, seed));
                    ResultRow row;
                    row.scenario = scen;
                    row.seed = seed_idx;
                    row.rho_uy = rep.rho_uy;
                    row.gamma_lb = detail::lb_value(lb);
                    row.wall_ms = elapsed_ms();
                    rows.push_back(std::move(row));
                    break;
                }
                case Scenario::Coverage: {
                    auto rep = detail::make_replicate(ec, ec.n_obs.front(), ec.sigma_y, seed);
                    const auto lb = gamma_lower_bound(rep.rct, rep.obs_for_test, ec.grid,
                                                      detail::test_config(ec, seed));
                    ResultRow row;
                    row.scenario = scen;
                    row.seed = seed_idx;
                    row.gamma_lb = detail::lb_value(lb);
                    row.wall_ms = elapsed_ms();
                    rows.push_back(std::move(row));
                    break;
                }
            }
        } catch (const std::exception& e) {
            ResultRow row;
            row.scenario = scen;
            row.seed = seed_idx;
            if (per_nobs) row.n_obs = ec.n_obs.at(setting_idx);
            row.error = e.what();
            row.wall_ms = elapsed_ms();
            rows.push_back(std::move(row));
        }
    });

    ExperimentResult out;
    for (auto& rows : per_unit)
        for (auto& r : rows) {
            if (!r.error.empty()) ++out.failures;
            out.rows.push_back(std::move(r));
        }

    // Scenario summaries with Monte Carlo standard errors.
    nlohmann::json summary;
    summary["version"] = "1";
    summary["scenario"] = scen;
    summary["seeds"] = ec.seeds;
    summary["failures"] = out.failures;

    switch (ec.scenario) {
        case Scenario::ValidityCurve:
        case Scenario::PowerCurve: {
            nlohmann::json per_gamma = nlohmann::json::array();
            for (double g : ec.gammas) {
                double rejects = 0.0, count = 0.0;
                for (const auto& r : out.rows)
                    if (r.error.empty() && r.gamma && *r.gamma == g) {
                        rejects += *r.reject;
                        count += 1.0;
                    }
                const double rate = count > 0 ? rejects / count : 0.0;
                per_gamma.push_back({{"gamma", g},
                                     {"rejection_rate", rate},
                                     {"mc_se", count > 0 ? std::sqrt(rate * (1 - rate) / count)
                                                         : 0.0},
                                     {"replicates", count}});
            }
            summary["rejection"] = std::move(per_gamma);
            break;
        }
        case Scenario::LbVsNobs: {
            nlohmann::json per_n = nlohmann::json::array();
            for (std::size_t n : ec.n_obs) {
                std::vector<double> lbs;
                for (const auto& r : out.rows)
                    if (r.error.empty() && r.n_obs && *r.n_obs == n) lbs.push_back(*r.gamma_lb);
                per_n.push_back(
                    {{"n_obs", n},
                     {"mean_gamma_lb", lbs.empty() ? 0.0 : mean(lbs)},
                     {"mc_se", lbs.size() > 1
                                   ? sample_sd(lbs) / std::sqrt(static_cast<double>(lbs.size()))
                                   : 0.0},
                     {"replicates", lbs.size()}});
            }
            summary["lb_by_nobs"] = std::move(per_n);
            break;
        }
        case Scenario::LbVsCorrelation: {
            std::vector<double> rho, lb;
            for (const auto& r : out.rows)
                if (r.error.empty() && r.rho_uy) {
                    rho.push_back(*r.rho_uy);
                    lb.push_back(*r.gamma_lb);
                }
            if (rho.size() >= 3) {
                Rng perm_rng(RngSpec{ec.base_seed, "perm"});
                summary["spearman"] = spearman_correlation(rho, lb);
                summary["permutation_pvalue"] =
                    spearman_permutation_pvalue(rho, lb, 10000, perm_rng);
            }
            break;
        }
        case Scenario::Coverage: {
            double covered = 0.0, count = 0.0;
            for (const auto& r : out.rows)
                if (r.error.empty() && r.gamma_lb) {
                    covered += *r.gamma_lb <= ec.gamma_star.value ? 1.0 : 0.0;
                    count += 1.0;
                }
            const double rate = count > 0 ? covered / count : 0.0;
            summary["coverage"] = rate;
            summary["mc_se"] = count > 0 ? std::sqrt(rate * (1 - rate) / count) : 0.0;
            summary["gamma_star"] = ec.gamma_star.value;
            break;
        }
    }
    out.summary = std::move(summary);
    return out;
}

inline void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(12);
    out << "scenario,seed,gamma,n_obs,rho_uy,reject,gamma_lb,wall_ms,error\n";
    for (const auto& r : rows) {
        out << r.scenario << "," << r.seed << ",";
        if (r.gamma) out << *r.gamma;
        out << ",";
        if (r.n_obs) out << *r.n_obs;
        out << ",";
        if (r.rho_uy) out << *r.rho_uy;
        out << ",";
        if (r.reject) out << *r.reject;
        out << ",";
        if (r.gamma_lb) out << *r.gamma_lb;
        out << "," << r.wall_ms << ",";
        // Error text is quoted so commas in messages stay in one cell.
        if (!r.error.empty()) {
            std::string esc = r.error;
            for (auto& c : esc)
                if (c == '"') c = '\'';
            out << '"' << esc << '"';
        }
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace gammabound
