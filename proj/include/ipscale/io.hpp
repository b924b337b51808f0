#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ipscale/alpha_analysis.hpp"
#include "ipscale/bench.hpp"
#include "ipscale/cycle_tree.hpp"

namespace ipscale::io {

using nlohmann::json;

// ============================================================================
// Schemas and tables
// ============================================================================
//
// Table JSON:  {"variables":[{"name":"H","levels":2},...],
//               "counts":[...]}          raw counts, or
//               "values":[...]}          real cell values
// flat arrays in canonical order (last variable fastest).

inline json schema_to_json(const Schema& schema) {
    json vars = json::array();
    for (const auto& v : schema.variables()) vars.push_back({{"name", v.name}, {"levels", v.levels}});
    return vars;
}

inline Schema schema_from_json(const json& j) {
    if (!j.is_array()) throw std::invalid_argument("schema JSON: expected an array of variables");
    std::vector<Schema::Variable> vars;
    for (const auto& v : j)
        vars.push_back({v.at("name").get<std::string>(), v.at("levels").get<int>()});
    return Schema(std::move(vars));
}

/// Serialize cell values losslessly (doubles round-trip through JSON).
inline json table_to_json(const DenseTable& t) {
    return json{{"variables", schema_to_json(t.schema())}, {"values", t.values()}};
}

inline json counts_to_json(const Schema& schema, const std::vector<long long>& counts) {
    return json{{"variables", schema_to_json(schema)}, {"counts", counts}};
}

/// Reads either form.  "counts" are converted to relative frequencies;
/// "values" are taken as-is.
inline DenseTable table_from_json(const json& j) {
    Schema schema = schema_from_json(j.at("variables"));
    if (j.contains("counts")) {
        auto counts = j.at("counts").get<std::vector<long long>>();
        return from_counts(schema, counts);
    }
    if (j.contains("values")) {
        auto values = j.at("values").get<std::vector<double>>();
        return DenseTable(std::move(schema), std::move(values));
    }
    throw std::invalid_argument("table JSON: need \"counts\" or \"values\"");
}

/// CSV long form: one row per cell, variable columns hold 0-based level
/// indices, the last column holds the cell value.
inline void table_to_csv(std::ostream& os, const DenseTable& t,
                         const std::string& value_col = "count") {
    const Schema& schema = t.schema();
    for (int k = 0; k < schema.arity(); ++k) os << schema.name(k) << ',';
    os << value_col << '\n';
    os.precision(17);
    for (std::size_t i = 0; i < t.size(); ++i) {
        CellIndex c = cell_at(schema, i);
        for (int d : c.digits) os << d << ',';
        os << t[i] << '\n';
    }
}

/// Reads the long form back; level counts are inferred from the maximum
/// index per column, absent cells default to zero.
inline DenseTable table_from_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::invalid_argument("table CSV: empty input");
    std::vector<std::string> header;
    {
        std::istringstream hs(line);
        std::string field;
        while (std::getline(hs, field, ',')) header.push_back(field);
    }
    if (header.size() < 2) throw std::invalid_argument("table CSV: need variables and a value column");
    const int arity = static_cast<int>(header.size()) - 1;

    std::vector<std::vector<int>> digit_rows;
    std::vector<double> row_values;
    std::vector<int> levels(arity, 0);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<int> digits;
        for (int k = 0; k < arity; ++k) {
            if (!std::getline(ls, field, ','))
                throw std::invalid_argument("table CSV: short row");
            digits.push_back(std::stoi(field));
            if (digits.back() < 0) throw std::invalid_argument("table CSV: negative level index");
            levels[k] = std::max(levels[k], digits.back() + 1);
        }
        if (!std::getline(ls, field, ',')) throw std::invalid_argument("table CSV: missing value");
        row_values.push_back(std::stod(field));
        digit_rows.push_back(std::move(digits));
    }
    std::vector<Schema::Variable> vars;
    for (int k = 0; k < arity; ++k) vars.push_back({header[k], std::max(levels[k], 1)});
    Schema schema(std::move(vars));
    std::vector<double> values(schema.cell_count(), 0.0);
    for (std::size_t rix = 0; rix < digit_rows.size(); ++rix)
        values[cell_offset(schema, CellIndex{digit_rows[rix]})] = row_values[rix];
    return DenseTable(std::move(schema), std::move(values));
}

// ============================================================================
// Models and spanning families
// ============================================================================
//
// Model JSON: a list of generator lists of variable names, e.g.
//   [["H","J"],["J","K"],["K","L"],["H","L"]]
// Family JSON: a list of model JSONs.

inline json model_to_json(const GeneratingClass& c) {
    json out = json::array();
    for (const auto& gen : c.generators()) {
        json names = json::array();
        for (int v : gen) names.push_back(c.schema().name(v));
        out.push_back(names);
    }
    return out;
}

/// Dominated generators are dropped silently (the reduced class is the
/// canonical form).
inline GeneratingClass model_from_json(const json& j, const Schema& schema) {
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("model JSON: expected a nonempty array of generators");
    std::vector<VarSet> gens;
    for (const auto& gen : j) {
        std::vector<std::string> names = gen.get<std::vector<std::string>>();
        gens.push_back(schema.subset(names));
    }
    return GeneratingClass(schema, reduce(std::move(gens)));
}

inline json family_to_json(const SpanningFamily& fam) {
    json out = json::array();
    for (const auto& member : fam.members) out.push_back(model_to_json(member));
    return out;
}

/// Members must be connected decomposable; perfect sequences are
/// recomputed on load.
inline SpanningFamily family_from_json(const json& j, const Schema& schema) {
    if (!j.is_array() || j.empty())
        throw std::invalid_argument("family JSON: expected a nonempty array of models");
    SpanningFamily fam;
    for (const auto& mj : j) {
        GeneratingClass member = model_from_json(mj, schema);
        auto d = find_perfect_sequence(member);
        if (!d.ok())
            throw std::invalid_argument("family JSON: member is not connected decomposable");
        fam.members.push_back(std::move(member));
        fam.sequences.push_back(std::move(d.sequence));
    }
    return fam;
}

// ============================================================================
// Cycle edge bundles
// ============================================================================
//
// {"variables":[...], "edges":[{"vars":["v1","v2"],"values":[...]}, ...]}
// one entry per cycle edge, values over the edge's sub-schema.

inline json edges_to_json(const CycleEdges& ce) {
    json out;
    out["variables"] = schema_to_json(ce.schema);
    json edges = json::array();
    auto emit = [&](const DenseTable& t) {
        json names = json::array();
        for (const auto& v : t.schema().variables()) names.push_back(v.name);
        edges.push_back({{"vars", names}, {"values", t.values()}});
    };
    for (int j = 2; j <= ce.schema.arity(); ++j) emit(ce.edge[j]);
    emit(ce.long_edge);
    out["edges"] = edges;
    return out;
}

inline CycleEdges edges_from_json(const json& j) {
    Schema schema = schema_from_json(j.at("variables"));
    const int j_way = schema.arity();
    std::map<std::pair<int, int>, DenseTable> found;
    for (const auto& ej : j.at("edges")) {
        auto names = ej.at("vars").get<std::vector<std::string>>();
        if (names.size() != 2) throw std::invalid_argument("edge bundle: edges must be pairs");
        VarSet pos = schema.subset(names);
        DenseTable t(schema.sub_schema(pos), ej.at("values").get<std::vector<double>>());
        found[{pos[0], pos[1]}] = std::move(t);
    }
    CycleEdges ce;
    ce.schema = schema;
    ce.edge.assign(j_way + 1, DenseTable());
    auto take = [&](int a, int b) {
        auto it = found.find({a, b});
        if (it == found.end()) throw std::invalid_argument("edge bundle: missing a cycle edge");
        return it->second;
    };
    for (int j = 2; j <= j_way; ++j) ce.edge[j] = take(j - 2, j - 1);
    ce.long_edge = take(0, j_way - 1);
    ce.derive_singles();
    return ce;
}

// ============================================================================
// Fit reports
// ============================================================================

inline json fit_report_to_json(const FitReport& rep, const std::string& algorithm,
                               const FitConfig& cfg) {
    json out;
    out["algorithm"] = algorithm;
    out["converged"] = rep.converged;
    out["cycles"] = rep.cycles_used;
    out["wall_time_ns"] = rep.wall_time_ns;
    out["tolerance"] = cfg.tolerance;
    out["criterion"] =
        cfg.criterion == FitConfig::Criterion::MarginalLinf ? "marginal-Linf" : "clique-L1";
    out["cell_writes"] = rep.cell_writes;
    out["updates"] = rep.updates;
    if (rep.p_hat.size() > 0) out["fitted"] = table_to_json(rep.p_hat);
    json trace = json::array();
    for (const auto& row : rep.trace) {
        json tj{{"cycle", row.cycle}, {"criterion", row.criterion}, {"mass", row.mass}};
        if (!row.alphas.empty()) tj["alphas"] = row.alphas;
        if (!row.substep_mass.empty()) tj["substep_mass"] = row.substep_mass;
        if (row.kl_to_reference) {
            // infinite divergence is an explicit variant, never a float inf
            if (std::isinf(*row.kl_to_reference)) tj["kl_to_reference"] = "infinite";
            else tj["kl_to_reference"] = *row.kl_to_reference;
        }
        trace.push_back(std::move(tj));
    }
    out["trace"] = std::move(trace);
    return out;
}

inline json diagnostics_to_json(const AlphaDiagnostics& d) {
    json out;
    out["ratio_deviation"] = d.ratio_deviation;
    out["alpha_mass_preserving"] = d.mass_preserving;
    if (d.mass_preserving_approx) out["alpha_mass_preserving_approx"] = *d.mass_preserving_approx;
    else out["alpha_mass_preserving_approx"] = "degenerate";
    out["alpha_kl_optimal"] = d.kl_optimal;
    out["alpha_kl_breakeven"] = d.kl_breakeven;
    return out;
}

inline void curves_to_csv(std::ostream& os, const std::vector<AlphaCurvePoint>& pts) {
    os << "alpha,log_g,gain\n";
    os.precision(17);
    for (const auto& pt : pts) os << pt.alpha << ',' << pt.log_mass << ',' << pt.gain << '\n';
}

// ============================================================================
// File helpers
// ============================================================================

inline json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open " + path);
    json j;
    is >> j;
    return j;
}

inline void save_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::invalid_argument("cannot write " + path);
    os << text;
}

inline void save_json(const std::string& path, const json& j) { save_text(path, j.dump(2) + "\n"); }

}  // namespace ipscale::io
