#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gammabound/errors.hpp"

namespace gammabound {

/// Confounding strength under the marginal sensitivity model; always >= 1.
struct GammaValue {
    double value;

    explicit GammaValue(double v) : value(v) {
        if (!(v >= 1.0)) throw InvalidArgument("GammaValue must be >= 1");
    }
};

enum class DatasetKind { Rct, Obs, Pooled };

inline const char* to_string(DatasetKind k) {
    switch (k) {
        case DatasetKind::Rct: return "rct";
        case DatasetKind::Obs: return "obs";
        case DatasetKind::Pooled: return "pooled";
    }
    return "?";
}

/// One observation unit. Hidden confounders u are only populated by the
/// benchmark generators; analyst-facing ops strip them.
struct UnitRecord {
    std::vector<double> x;         // observed covariates
    std::vector<double> u;         // hidden confounders (empty = absent)
    std::uint8_t t = 0;            // treatment {0,1}
    double y = 0.0;                // observed outcome
    std::optional<std::uint8_t> s; // study indicator (nested designs)
};

struct Dataset {
    std::vector<UnitRecord> records;
    DatasetKind kind = DatasetKind::Obs;
    std::vector<std::string> x_names;  // optional schema; defaults x0..x{d-1}
    std::vector<std::string> u_names;
    std::optional<double> pi;          // known trial assignment probability

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
    std::size_t dim() const { return records.empty() ? 0 : records.front().x.size(); }

    std::vector<double> outcomes() const {
        std::vector<double> v(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].y;
        return v;
    }
    std::vector<std::uint8_t> treatments() const {
        std::vector<std::uint8_t> v(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].t;
        return v;
    }
    std::vector<double> covariate_column(std::size_t j) const {
        std::vector<double> v(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) v[i] = records[i].x.at(j);
        return v;
    }
};

/// Point interval [lower, upper] on the effect at a given Gamma, with
/// estimator-scale standard errors for each endpoint.
struct SensitivityInterval {
    GammaValue gamma;
    double lower = 0.0;
    double upper = 0.0;
    double se_lower = 0.0;
    double se_upper = 0.0;
};

enum class TargetPopulation { Rct, ObsRestricted };

inline const char* to_string(TargetPopulation t) {
    return t == TargetPopulation::Rct ? "rct" : "os_rct";
}

struct AteEstimate {
    double value = 0.0;
    double se = 0.0;  // estimator scale (already / sqrt(n))
    TargetPopulation target = TargetPopulation::Rct;
};

// ---------------------------------------------------------------------------
// Validation and structural ops
// ---------------------------------------------------------------------------

inline const Dataset& validate_dataset(const Dataset& d) {
    if (d.records.empty()) throw EmptyDataset();
    const std::size_t dx = d.records.front().x.size();
    const std::size_t du = d.records.front().u.size();
    for (std::size_t i = 0; i < d.records.size(); ++i) {
        const auto& r = d.records[i];
        if (r.x.size() != dx)
            throw SchemaError("ragged covariate row at index " + std::to_string(i));
        if (r.u.size() != du)
            throw SchemaError("ragged hidden-confounder row at index " + std::to_string(i));
        if (r.t != 0 && r.t != 1)
            throw SchemaError("non-binary treatment at index " + std::to_string(i));
        if (r.s && *r.s != 0 && *r.s != 1)
            throw SchemaError("non-binary study indicator at index " + std::to_string(i));
        if (!std::isfinite(r.y))
            throw SchemaError("non-finite outcome at index " + std::to_string(i));
        for (double v : r.x)
            if (!std::isfinite(v))
                throw SchemaError("non-finite covariate at index " + std::to_string(i));
    }
    if (d.kind == DatasetKind::Rct && d.pi && !(*d.pi > 0.0 && *d.pi < 1.0))
        throw SchemaError("trial assignment probability must lie in (0,1)");
    return d;
}

/// Partitions a pooled dataset on the study indicator: (s=1 trial, s=0 obs).
inline std::pair<Dataset, Dataset> split_by_study(const Dataset& pooled) {
    Dataset rct, obs;
    rct.kind = DatasetKind::Rct;
    obs.kind = DatasetKind::Obs;
    rct.x_names = obs.x_names = pooled.x_names;
    rct.u_names = obs.u_names = pooled.u_names;
    rct.pi = pooled.pi;
    for (std::size_t i = 0; i < pooled.records.size(); ++i) {
        const auto& r = pooled.records[i];
        if (!r.s) throw MissingStudyIndicator("record " + std::to_string(i));
        (*r.s == 1 ? rct : obs).records.push_back(r);
    }
    return {std::move(rct), std::move(obs)};
}

inline Dataset pool_studies(const Dataset& rct, const Dataset& obs) {
    Dataset pooled;
    pooled.kind = DatasetKind::Pooled;
    pooled.x_names = rct.x_names.empty() ? obs.x_names : rct.x_names;
    pooled.pi = rct.pi;
    pooled.records.reserve(rct.size() + obs.size());
    for (auto r : rct.records) {
        r.s = 1;
        pooled.records.push_back(std::move(r));
    }
    for (auto r : obs.records) {
        r.s = 0;
        pooled.records.push_back(std::move(r));
    }
    return pooled;
}

/// Per-coordinate closed interval bounds; boundary points are kept.
struct SupportBounds {
    std::vector<std::pair<double, double>> box;  // (lo, hi) per covariate

    bool contains(const std::vector<double>& x) const {
        for (std::size_t j = 0; j < box.size() && j < x.size(); ++j)
            if (x[j] < box[j].first || x[j] > box[j].second) return false;
        return true;
    }
};

/// Empirical support box (coordinate-wise min/max) of a dataset.
inline SupportBounds support_box(const Dataset& d) {
    validate_dataset(d);
    SupportBounds b;
    b.box.assign(d.dim(), {std::numeric_limits<double>::infinity(),
                           -std::numeric_limits<double>::infinity()});
    for (const auto& r : d.records)
        for (std::size_t j = 0; j < b.box.size(); ++j) {
            b.box[j].first = std::min(b.box[j].first, r.x[j]);
            b.box[j].second = std::max(b.box[j].second, r.x[j]);
        }
    return b;
}

/// Keeps the records whose covariates fall inside the hyper-rectangle.
inline Dataset restrict_support(const Dataset& obs, const SupportBounds& bounds) {
    for (const auto& [lo, hi] : bounds.box)
        if (!std::isfinite(lo) || !std::isfinite(hi))
            throw InvalidArgument("restrict_support: bounds must be finite");
    Dataset out = obs;
    out.records.clear();
    for (const auto& r : obs.records)
        if (bounds.contains(r.x)) out.records.push_back(r);
    if (out.records.empty()) throw EmptyResult("no records inside the support bounds");
    return out;
}

/// Analyst view: hidden confounders removed.
inline Dataset strip_hidden(Dataset d) {
    for (auto& r : d.records) r.u.clear();
    d.u_names.clear();
    return d;
}

// ---------------------------------------------------------------------------
// CSV interface: header row with t, y, optional s, covariates x0..x{d-1},
// optional hidden u0..u{k-1}.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw SchemaError("unparsable numeric field '" + s + "' on line " +
                          std::to_string(line_no));
    }
}

}  // namespace detail

inline Dataset read_csv(const std::string& path, DatasetKind kind,
                        std::optional<double> pi = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty file " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const auto header = detail::split_csv_line(line);
    int col_t = -1, col_y = -1, col_s = -1;
    std::vector<std::pair<int, std::string>> x_cols, u_cols;
    for (std::size_t j = 0; j < header.size(); ++j) {
        const std::string& h = header[j];
        if (h == "t") col_t = static_cast<int>(j);
        else if (h == "y") col_y = static_cast<int>(j);
        else if (h == "s") col_s = static_cast<int>(j);
        else if (h.size() > 1 && h[0] == 'x') x_cols.emplace_back(static_cast<int>(j), h);
        else if (h.size() > 1 && h[0] == 'u') u_cols.emplace_back(static_cast<int>(j), h);
        else throw SchemaError("unrecognized column '" + h + "' in " + path);
    }
    if (col_t < 0 || col_y < 0) throw SchemaError("missing required column t or y in " + path);

    Dataset d;
    d.kind = kind;
    d.pi = pi;
    for (const auto& [_, name] : x_cols) d.x_names.push_back(name);
    for (const auto& [_, name] : u_cols) d.u_names.push_back(name);

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw SchemaError("wrong field count on line " + std::to_string(line_no));
        UnitRecord r;
        const double tv = detail::parse_double(cells[col_t], line_no);
        if (tv != 0.0 && tv != 1.0)
            throw SchemaError("non-binary t on line " + std::to_string(line_no));
        r.t = static_cast<std::uint8_t>(tv);
        r.y = detail::parse_double(cells[col_y], line_no);
        if (col_s >= 0) {
            const double sv = detail::parse_double(cells[col_s], line_no);
            if (sv != 0.0 && sv != 1.0)
                throw SchemaError("non-binary s on line " + std::to_string(line_no));
            r.s = static_cast<std::uint8_t>(sv);
        }
        for (const auto& [j, _] : x_cols) r.x.push_back(detail::parse_double(cells[j], line_no));
        for (const auto& [j, _] : u_cols) r.u.push_back(detail::parse_double(cells[j], line_no));
        d.records.push_back(std::move(r));
    }
    return validate_dataset(d);
}

inline void write_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out.precision(17);

    const bool has_s = !d.records.empty() && d.records.front().s.has_value();
    const std::size_t dx = d.dim();
    const std::size_t du = d.records.empty() ? 0 : d.records.front().u.size();

    out << "t,y";
    if (has_s) out << ",s";
    for (std::size_t j = 0; j < dx; ++j)
        out << "," << (j < d.x_names.size() ? d.x_names[j] : "x" + std::to_string(j));
    for (std::size_t j = 0; j < du; ++j)
        out << "," << (j < d.u_names.size() ? d.u_names[j] : "u" + std::to_string(j));
    out << "\n";

    for (const auto& r : d.records) {
        out << static_cast<int>(r.t) << "," << r.y;
        if (has_s) out << "," << static_cast<int>(r.s.value_or(0));
        for (double v : r.x) out << "," << v;
        for (double v : r.u) out << "," << v;
        out << "\n";
    }
    if (!out) throw IoError("write failed for " + path);
}

}  // namespace gammabound
