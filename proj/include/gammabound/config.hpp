#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "gammabound/errors.hpp"
#include "gammabound/hypothesis.hpp"
#include "gammabound/nuisance.hpp"

namespace gammabound {

/// Flat key-value configuration with dotted keys, one `key=value` per line.
/// '#' starts a comment; blank lines are skipped. CLI flags override values.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config " + path);
        Config cfg;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw IoError("config line " + std::to_string(line_no) + " is not key=value");
            cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (const std::exception&) {
            throw InvalidArgument("config key " + key + " is not numeric: " + it->second);
        }
    }

    long get_int(const std::string& key, long fallback) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (const std::exception&) {
            throw InvalidArgument("config key " + key + " is not an integer: " + it->second);
        }
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

inline QuantileKind parse_quantile_kind(const std::string& s) {
    if (s == "linear") return QuantileKind::LinearPinball;
    if (s == "binary") return QuantileKind::BinaryClosedForm;
    if (s == "knn") return QuantileKind::EmpiricalKnn;
    throw InvalidArgument("unknown quantile.kind: " + s);
}

inline BoundsEstimator parse_estimator(const std::string& s) {
    if (s == "qb") return BoundsEstimator::Qb;
    if (s == "zsb") return BoundsEstimator::Zsb;
    if (s == "cate_learner") return BoundsEstimator::CateLearner;
    throw InvalidArgument("unknown bounds.estimator: " + s);
}

inline NuisanceSpec nuisance_from_config(const Config& cfg) {
    NuisanceSpec spec;
    spec.propensity_lambda = cfg.get_double("propensity.lambda", spec.propensity_lambda);
    spec.quantile_kind = parse_quantile_kind(cfg.get("quantile.kind", "linear"));
    spec.knn_k = static_cast<std::size_t>(cfg.get_int("quantile.knn_k", 50));
    spec.folds = static_cast<std::size_t>(cfg.get_int("crossfit.folds", 5));
    return spec;
}

}  // namespace gammabound
