// Command-line front end: synthetic generation, semi-synthetic subsampling,
// single tests, lower-bound searches and batched experiment suites.
//
// Exit codes for `test`: 0 = accept, 3 = reject, 1 = error. All other
// subcommands: 0 = success, 1 = error. Errors print a structured JSON object
// on stderr.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "gammabound/gammabound.hpp"

namespace gb = gammabound;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonTestFlags {
    std::string rct_path, obs_path, config_path;
    double alpha = 0.05;
    double pi = 0.5;
    std::string target = "osrct";
    std::string estimator = "qb";
    std::string weights = "uniform";
    std::string support = "auto";  // auto | none
    std::size_t n_bs = 100;
    std::uint64_t seed = 1;
    bool one_sided = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--rct", rct_path, "trial CSV")->required();
        cmd->add_option("--obs", obs_path, "observational CSV")->required();
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option("--alpha", alpha, "significance level");
        cmd->add_option("--pi", pi, "trial assignment probability");
        cmd->add_option("--target", target, "rct | osrct");
        cmd->add_option("--estimator", estimator, "qb | zsb | cate_learner");
        cmd->add_option("--weights", weights, "uniform | nested");
        cmd->add_option("--support", support,
                        "osrct support restriction: auto (trial box) | none");
        cmd->add_option("--n-bs", n_bs, "bootstrap replicates");
        cmd->add_option("--seed", seed, "random seed");
        cmd->add_flag("--one-sided", one_sided, "evaluate only the upper-side statistic");
    }
};

struct PreparedTest {
    gb::Dataset rct, obs;
    gb::TestConfig cfg;
    std::optional<std::vector<double>> rct_weights;
};

PreparedTest prepare(const CommonTestFlags& flags) {
    gb::Config cfg_file;
    if (!flags.config_path.empty()) cfg_file = gb::Config::from_file(flags.config_path);

    PreparedTest p;
    p.rct = gb::read_csv(flags.rct_path, gb::DatasetKind::Rct, flags.pi);
    p.obs = gb::read_csv(flags.obs_path, gb::DatasetKind::Obs);

    p.cfg.alpha = flags.alpha;
    p.cfg.target = flags.target == "rct" ? gb::TargetPopulation::Rct
                                         : gb::TargetPopulation::ObsRestricted;
    p.cfg.estimator = gb::parse_estimator(
        cfg_file.has("bounds.estimator") ? cfg_file.get("bounds.estimator", "qb")
                                         : flags.estimator);
    p.cfg.n_bs = flags.n_bs;
    p.cfg.rng = gb::RngSpec{flags.seed, "cli"};
    p.cfg.one_sided = flags.one_sided;
    p.cfg.nuisance = gb::nuisance_from_config(cfg_file);

    if (p.cfg.target == gb::TargetPopulation::ObsRestricted && flags.support != "none") {
        const gb::SupportBounds box = gb::support_box(p.rct);
        p.obs = gb::restrict_support(p.obs, box);
    }
    if (flags.weights == "nested") {
        const gb::Dataset pooled = gb::pool_studies(p.rct, p.obs);
        const gb::SupportBounds box = gb::support_box(p.rct);
        const gb::NestedWeights nw =
            gb::estimate_nested_weights(pooled, box, p.cfg.nuisance.propensity_lambda);
        std::vector<double> w(p.rct.size());
        for (std::size_t i = 0; i < p.rct.size(); ++i) w[i] = nw.weight(p.rct.records[i].x);
        p.rct_weights = std::move(w);
    } else if (flags.weights != "uniform") {
        throw gb::InvalidArgument("unknown --weights: " + flags.weights);
    }
    return p;
}

gb::ConfounderMode parse_mode(const std::string& s) {
    if (s == "additive") return gb::ConfounderMode::Additive;
    if (s == "potential_outcome") return gb::ConfounderMode::PotentialOutcome;
    if (s == "independent") return gb::ConfounderMode::Independent;
    throw gb::InvalidArgument("unknown mode: " + s);
}

int fail(const std::exception& e) {
    std::cerr << gb::error_json(e.what()).dump() << "\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confounding-strength testing and lower bounds from paired trial and "
                 "observational data"};
    app.require_subcommand(1);

    // --- simulate -----------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "draw a synthetic trial/observational pair");
    double sim_gamma = 5.0, sim_sigma = 0.31622776601683794, sim_pi = 0.5;
    std::size_t sim_nrct = 2000, sim_nobs = 2000;
    std::string sim_mode = "additive", sim_out = ".";
    std::uint64_t sim_seed = 1;
    bool sim_keep_hidden = false;
    sim->add_option("--gamma-star", sim_gamma, "designed confounding strength");
    sim->add_option("--n-rct", sim_nrct, "trial sample size");
    sim->add_option("--n-obs", sim_nobs, "observational sample size");
    sim->add_option("--sigma-y", sim_sigma, "outcome noise SD");
    sim->add_option("--pi", sim_pi, "trial assignment probability");
    sim->add_option("--mode", sim_mode, "additive | potential_outcome | independent");
    sim->add_option("--seed", sim_seed, "random seed");
    sim->add_option("--out-dir", sim_out, "output directory");
    sim->add_flag("--keep-hidden", sim_keep_hidden, "keep hidden confounder columns in the CSVs");

    // --- subsample ----------------------------------------------------------
    auto* sub = app.add_subcommand("subsample",
                                   "rejection-sample a trial into a confounded study");
    std::string sub_input, sub_confounder, sub_kind = "continuous", sub_sign = "pos";
    std::string sub_output = "obs.csv", sub_audit = "audit.json";
    double sub_gamma = 2.0;
    std::uint64_t sub_seed = 1;
    sub->add_option("--input", sub_input, "input trial CSV")->required();
    sub->add_option("--confounder", sub_confounder, "confounder column name")->required();
    sub->add_option("--kind", sub_kind, "continuous | binary");
    sub->add_option("--sign", sub_sign, "pos | neg correlation with the outcome");
    sub->add_option("--gamma", sub_gamma, "designed confounding strength");
    sub->add_option("--seed", sub_seed, "random seed");
    sub->add_option("--output", sub_output, "output CSV (confounder stripped)");
    sub->add_option("--audit", sub_audit, "audit JSON path");

    // --- test ---------------------------------------------------------------
    auto* tst = app.add_subcommand("test", "level-alpha test of H0(Gamma)");
    CommonTestFlags tst_flags;
    double tst_gamma = 1.0;
    tst_flags.attach(tst);
    tst->add_option("--gamma", tst_gamma, "confounding strength under test")->required();

    // --- lower-bound --------------------------------------------------------
    auto* lb = app.add_subcommand("lower-bound", "grid-search lower bound on the strength");
    CommonTestFlags lb_flags;
    double lb_step = 0.05, lb_max = 20.0;
    bool lb_flag = false, lb_full_trace = false;
    lb_flags.attach(lb);
    lb->add_option("--grid-step", lb_step, "grid step");
    lb->add_option("--grid-max", lb_max, "largest strength searched");
    lb->add_flag("--flag", lb_flag, "also compute the critical value and flag decisions");
    lb->add_flag("--full-trace", lb_full_trace, "evaluate the whole grid");

    // --- experiment ---------------------------------------------------------
    auto* exp = app.add_subcommand("experiment", "batched seeded experiment suite");
    std::string exp_config, exp_out = ".";
    std::size_t exp_jobs = 0;
    long exp_seeds = -1;
    exp->add_option("--config", exp_config, "experiment config file")->required();
    exp->add_option("--out-dir", exp_out, "output directory");
    exp->add_option("--jobs", exp_jobs, "worker threads (default: cores or GAMMABOUND_JOBS)");
    exp->add_option("--seeds", exp_seeds, "override replicate count");

    // --- oracle-lb ----------------------------------------------------------
    auto* olb = app.add_subcommand("oracle-lb", "infinite-sample lower bound on a DGP oracle");
    double olb_gamma = 2.0, olb_sigma = 0.31622776601683794;
    std::string olb_mode = "potential_outcome";
    std::size_t olb_mc = 1000000;
    std::uint64_t olb_seed = 1;
    olb->add_option("--gamma-star", olb_gamma, "designed confounding strength");
    olb->add_option("--mode", olb_mode, "additive | potential_outcome | independent");
    olb->add_option("--sigma-y", olb_sigma, "outcome noise SD");
    olb->add_option("--mc-n", olb_mc, "Monte Carlo draws");
    olb->add_option("--seed", olb_seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*sim) {
            gb::SyntheticSpec spec;
            spec.gamma_star = gb::GammaValue{sim_gamma};
            spec.n_rct = sim_nrct;
            spec.n_obs = sim_nobs;
            spec.sigma_y = sim_sigma;
            spec.pi = sim_pi;
            spec.mode = parse_mode(sim_mode);
            spec.rng = gb::RngSpec{sim_seed, "simulate"};
            const gb::SyntheticData data = gb::generate(spec);

            fs::create_directories(sim_out);
            const auto path = [&](const char* name) { return (fs::path(sim_out) / name).string(); };
            gb::write_csv(sim_keep_hidden ? data.rct : gb::strip_hidden(data.rct), path("rct.csv"));
            gb::write_csv(sim_keep_hidden ? data.obs : gb::strip_hidden(data.obs), path("obs.csv"));

            std::ofstream oracle(path("oracle.csv"));
            oracle.precision(17);
            oracle << "u,y0,y1,e,e_plus\n";
            for (std::size_t i = 0; i < data.oracle.obs.size(); ++i)
                oracle << data.oracle.obs.u[i] << "," << data.oracle.obs.y0[i] << ","
                       << data.oracle.obs.y1[i] << "," << data.oracle.obs.e[i] << ","
                       << data.oracle.obs.e_plus[i] << "\n";
            if (!oracle) throw gb::IoError("write failed for oracle.csv");

            std::ofstream spec_out(path("spec.json"));
            spec_out << gb::to_json(spec).dump(2) << "\n";
            if (!spec_out) throw gb::IoError("write failed for spec.json");
            return 0;
        }

        if (*sub) {
            gb::SubsampleSpec spec;
            spec.gamma_true = gb::GammaValue{sub_gamma};
            spec.confounder = sub_confounder;
            if (sub_kind == "continuous") spec.kind = gb::ConfounderKind::Continuous;
            else if (sub_kind == "binary") spec.kind = gb::ConfounderKind::Binary;
            else throw gb::InvalidArgument("unknown --kind: " + sub_kind);
            if (sub_sign == "pos") spec.sign = gb::CorrelationSign::Positive;
            else if (sub_sign == "neg") spec.sign = gb::CorrelationSign::Negative;
            else throw gb::InvalidArgument("unknown --sign: " + sub_sign);
            spec.rng = gb::RngSpec{sub_seed, "subsample"};

            const gb::Dataset input = gb::read_csv(sub_input, gb::DatasetKind::Rct);
            const auto [obs, audit] = gb::rejection_subsample(input, spec);
            gb::write_csv(obs, sub_output);
            std::ofstream audit_out(sub_audit);
            audit_out << gb::to_json(audit).dump(2) << "\n";
            if (!audit_out) throw gb::IoError("write failed for " + sub_audit);
            return 0;
        }

        if (*tst) {
            PreparedTest p = prepare(tst_flags);
            const gb::TestResult res =
                gb::run_test(p.rct, p.obs, gb::GammaValue{tst_gamma}, p.cfg, p.rct_weights);
            std::cout << gb::to_json(res, p.cfg.target, p.cfg.estimator).dump(2) << "\n";
            return res.reject ? 3 : 0;
        }

        if (*lb) {
            PreparedTest p = prepare(lb_flags);
            const gb::GammaGrid grid(lb_step, lb_max);
            gb::LowerBoundResult res = gb::gamma_lower_bound(p.rct, p.obs, grid, p.cfg,
                                                             p.rct_weights, lb_full_trace);
            if (lb_flag) {
                res.gamma_ct = gb::critical_value(p.obs, grid, p.cfg.estimator, p.cfg.nuisance,
                                                  p.cfg.rng.fork("critical"));
                const auto [psi_sens, psi_bin] = gb::flag_decisions(res.gamma_lb, res.gamma_ct);
                res.psi_sens = psi_sens;
                res.psi_bin = psi_bin;
            }
            std::cout << gb::to_json(res, p.cfg.target, p.cfg.estimator).dump(2) << "\n";
            return 0;
        }

        if (*exp) {
            gb::Config cfg = gb::Config::from_file(exp_config);
            gb::ExperimentConfig ec = gb::ExperimentConfig::from_config(cfg);
            if (exp_jobs > 0) ec.jobs = exp_jobs;
            if (exp_seeds > 0) ec.seeds = static_cast<std::size_t>(exp_seeds);
            const gb::ExperimentResult res = gb::run_experiment(ec);

            fs::create_directories(exp_out);
            gb::write_results_csv(res.rows, (fs::path(exp_out) / "results.csv").string());
            json summary = res.summary;
            summary["config"] = cfg.values();
            std::ofstream sum_out(fs::path(exp_out) / "summary.json");
            sum_out << summary.dump(2) << "\n";
            if (!sum_out) throw gb::IoError("write failed for summary.json");

            const double fail_rate =
                res.rows.empty() ? 0.0
                                 : static_cast<double>(res.failures) /
                                       static_cast<double>(res.rows.size());
            if (fail_rate > 0.10) {
                std::cerr << gb::error_json("replicate failure rate " +
                                            std::to_string(fail_rate))
                                 .dump()
                          << "\n";
                return 1;
            }
            return 0;
        }

        if (*olb) {
            gb::SyntheticSpec spec;
            spec.gamma_star = gb::GammaValue{olb_gamma};
            spec.mode = parse_mode(olb_mode);
            spec.sigma_y = olb_sigma;
            const gb::PopulationOracle oracle = gb::make_population_oracle(spec);
            const gb::GammaValue lb_inf = gb::infinite_sample_lower_bound(
                oracle, spec.gamma_star, olb_mc, gb::RngSpec{olb_seed, "oracle-lb"});
            std::cout << json{{"version", gb::kOutputVersion},
                              {"gamma_lb_inf", lb_inf.value},
                              {"gamma_star", olb_gamma},
                              {"mode", olb_mode},
                              {"mc_n", olb_mc}}
                             .dump(2)
                      << "\n";
            return 0;
        }
    } catch (const std::exception& e) {
        return fail(e);
    }
    return 1;
}
