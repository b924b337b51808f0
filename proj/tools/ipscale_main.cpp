// Command-line front end: fit, span, bench, analyze-alpha.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ipscale/io.hpp"

using namespace ipscale;
namespace jio = ipscale::io;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInputError = 1;
constexpr int kExitNotConverged = 2;

DenseTable load_table(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        std::ifstream is(path);
        if (!is) throw std::invalid_argument("cannot open " + path);
        return jio::table_from_csv(is);
    }
    return jio::table_from_json(jio::load_json(path));
}

void write_or_print(const std::optional<std::string>& path, const std::string& text) {
    if (path) jio::save_text(*path, text);
    else std::cout << text;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    auto range_pos = text.find("..");
    if (range_pos != std::string::npos) {
        int lo = std::stoi(text.substr(0, range_pos));
        int hi = std::stoi(text.substr(range_pos + 2));
        for (int v = lo; v <= hi; ++v) out.push_back(v);
        return out;
    }
    std::istringstream is(text);
    std::string field;
    while (std::getline(is, field, ',')) out.push_back(std::stoi(field));
    if (out.empty()) throw std::invalid_argument("empty list: " + text);
    return out;
}

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> out;
    for (int k = 0; k < n; ++k)
        out.push_back(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1));
    return out;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitArgs {
    std::string data, model, algorithm = "conventional";
    std::optional<std::string> submodels, out;
    bool auto_span = false;
    double tol = 1e-6;
    int max_cycles = 10000;
    std::string criterion = "marginal-Linf";
    std::string format = "json";
};

int run_fit(const FitArgs& args) {
    DenseTable r = normalize(load_table(args.data));
    GeneratingClass model = jio::model_from_json(jio::load_json(args.model), r.schema());

    FitConfig cfg;
    cfg.tolerance = args.tol;
    cfg.max_cycles = args.max_cycles;
    if (args.criterion == "marginal-Linf") cfg.criterion = FitConfig::Criterion::MarginalLinf;
    else if (args.criterion == "clique-L1") cfg.criterion = FitConfig::Criterion::CliqueL1;
    else throw std::invalid_argument("unknown criterion: " + args.criterion);

    jio::json report;
    bool converged = false;

    if (args.algorithm == "conventional") {
        auto rep = fit_conventional(r, model, cfg);
        report = jio::fit_report_to_json(rep, args.algorithm, cfg);
        converged = rep.converged;
    } else if (args.algorithm == "cycle-tree") {
        auto order = cycle_order_of(model);
        if (!order) throw std::invalid_argument("cycle-tree needs a cycle model covering the data");
        DenseTable rc = reorder_variables(r, *order);
        CycleSpec spec(rc.schema());
        auto rep = fit_cycle_tree(spec, rc, cfg);
        report = jio::fit_report_to_json(rep.fit, args.algorithm, cfg);
        converged = rep.fit.converged;
    } else if (args.algorithm.rfind("submodel", 0) == 0) {
        if (args.algorithm == "submodel") cfg.alpha_policy = FitConfig::AlphaPolicy::Unit;
        else if (args.algorithm == "submodel-alpha0")
            cfg.alpha_policy = FitConfig::AlphaPolicy::MassPreserving;
        else if (args.algorithm.rfind("submodel-fixed:", 0) == 0) {
            cfg.alpha_policy = FitConfig::AlphaPolicy::Fixed;
            cfg.fixed_alpha = std::stod(args.algorithm.substr(std::string("submodel-fixed:").size()));
        } else {
            throw std::invalid_argument("unknown algorithm: " + args.algorithm);
        }

        SpanningFamily fam;
        if (args.submodels) {
            fam = jio::family_from_json(jio::load_json(*args.submodels), r.schema());
            fam.parent = model;
        } else if (args.auto_span) {
            fam = greedy_spanning(model);
        } else {
            throw std::invalid_argument("submodel algorithms need --submodels or --auto-span");
        }
        auto validation = validate_spanning(model, fam);
        if (!validation.pass) {
            std::cerr << "spanning validation failed\n"
                      << validation.to_string(r.schema()) << "\n";
            return kExitInputError;
        }
        auto rep = fit_submodel_ips(r, fam, cfg);
        report = jio::fit_report_to_json(rep, args.algorithm, cfg);
        report["submodels"] = jio::family_to_json(fam);
        converged = rep.converged;
    } else {
        throw std::invalid_argument("unknown algorithm: " + args.algorithm);
    }

    if (args.format == "json") {
        write_or_print(args.out, report.dump(2) + "\n");
    } else if (args.format == "csv") {
        // fitted probabilities only, in the long cell form
        if (!report.contains("fitted")) throw std::invalid_argument("no fitted table to emit");
        std::ostringstream os;
        jio::table_to_csv(os, jio::table_from_json(report.at("fitted")), "p");
        write_or_print(args.out, os.str());
    } else {
        throw std::invalid_argument("fit supports --format json|csv");
    }
    return converged ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// span
// ---------------------------------------------------------------------------

struct SpanArgs {
    std::string model;
    std::optional<std::string> out;
};

int run_span(const SpanArgs& args) {
    jio::json mj = jio::load_json(args.model);
    // levels play no role in the set combinatorics; give every named
    // variable two levels
    std::vector<Schema::Variable> vars;
    std::vector<std::string> seen;
    for (const auto& gen : mj)
        for (const auto& nm : gen.get<std::vector<std::string>>())
            if (std::find(seen.begin(), seen.end(), nm) == seen.end()) {
                seen.push_back(nm);
                vars.push_back({nm, 2});
            }
    Schema schema(std::move(vars));
    GeneratingClass model = jio::model_from_json(mj, schema);
    SpanningFamily fam = greedy_spanning(model);
    auto validation = validate_spanning(model, fam);
    std::cerr << validation.to_string(schema) << "\n";
    write_or_print(args.out, jio::family_to_json(fam).dump(2) + "\n");
    return validation.pass ? kExitOk : kExitInputError;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
    std::string dims = "4..8", levels = "2,3,4";
    int replicates = 1000;
    std::uint64_t seed = 17;
    double tol = 1e-6;
    int max_cycles = 100000;
    std::optional<std::string> out, markdown, records;
    bool no_cross_check = false;
    std::string format = "csv";
};

int run_bench(const BenchArgs& args) {
    ExperimentPlan plan;
    plan.dims = parse_int_list(args.dims);
    plan.levels = parse_int_list(args.levels);
    plan.replicates = args.replicates;
    plan.seed = args.seed;
    plan.tolerance = args.tol;
    plan.max_cycles = args.max_cycles;
    plan.cross_check = !args.no_cross_check;

    auto records = run_experiment(plan, [](const std::string& msg) { std::cerr << msg << "\n"; });
    auto rows = summarize(records);

    if (args.format == "csv") {
        write_or_print(args.out, "# seed=" + std::to_string(plan.seed) + "\n" + summary_csv(rows));
    } else if (args.format == "markdown") {
        write_or_print(args.out, summary_markdown(rows));
    } else if (args.format == "json") {
        jio::json out = jio::json::array();
        for (const auto& row : rows)
            out.push_back({{"J", row.j_way},
                           {"I", row.levels},
                           {"n", row.n},
                           {"tau_conv_ns", row.mean_tau_conv_ns},
                           {"tau_ns", row.mean_tau_ns},
                           {"pr_tau_less", row.pr_tau_less},
                           {"nu_conv", row.mean_nu_conv},
                           {"nu", row.mean_nu},
                           {"nu_ratio", row.step_ratio},
                           {"seed", plan.seed}});
        write_or_print(args.out, out.dump(2) + "\n");
    } else {
        throw std::invalid_argument("bench supports --format csv|markdown|json");
    }
    if (args.markdown) jio::save_text(*args.markdown, summary_markdown(rows));
    if (args.records) {
        std::ostringstream os;
        os << "J,I,replicate,algorithm,steps,wall_ns,converged,linf_gap,cell_writes,updates\n";
        for (const auto& rec : records)
            os << rec.j_way << ',' << rec.levels << ',' << rec.replicate << ',' << rec.algorithm
               << ',' << rec.steps << ',' << rec.wall_ns << ',' << (rec.converged ? 1 : 0) << ','
               << rec.linf_gap << ',' << rec.cell_writes << ',' << rec.updates << '\n';
        jio::save_text(*args.records, os.str());
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze-alpha
// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    std::string data, model;
    std::optional<std::string> submodels, curves, diagnostics;
    int member = 0;
    double delta = 1e-3;
    std::uint64_t seed = 1;
    double alpha_max = 0.0;  // 0: three times the mass-restoring exponent
    int steps = 121;
    std::string format = "csv";
};

int run_analyze(const AnalyzeArgs& args) {
    DenseTable r = normalize(load_table(args.data));
    GeneratingClass model = jio::model_from_json(jio::load_json(args.model), r.schema());
    SpanningFamily fam = args.submodels
                             ? jio::family_from_json(jio::load_json(*args.submodels), r.schema())
                             : greedy_spanning(model);
    if (args.member < 0 || args.member >= static_cast<int>(fam.members.size()))
        throw std::invalid_argument("--member out of range");
    const GeneratingClass& sub = fam.members[args.member];
    const PerfectSequence& seq = fam.sequences[args.member];

    FitConfig ref_cfg;
    ref_cfg.tolerance = 1e-12;
    ref_cfg.max_cycles = 1000000;
    ref_cfg.record_trace = false;
    DenseTable mle = fit_conventional(r, model, ref_cfg).p_hat;

    // perturb the fitted table: p proportional to mle * (1 + delta * z),
    // z i.i.d. uniform on [-1, 1]
    detail::SplitMix64 rng{args.seed};
    std::vector<double> vals(mle.values());
    for (auto& v : vals) {
        double z = 2.0 * (static_cast<double>(rng.next() >> 11) / 9007199254740992.0) - 1.0;
        v *= 1.0 + args.delta * z;
    }
    DenseTable p = normalize(DenseTable(mle.schema(), std::move(vals)));

    std::vector<VarSet> deviation_sets = model.generators();
    for (const auto& s : fam.sequences)
        for (const auto& sep : s.separators) deviation_sets.push_back(sep);

    AlphaDiagnostics diag = analyze_alphas(mle, p, r, sub, seq, deviation_sets);
    double hi = args.alpha_max > 0.0 ? args.alpha_max : 3.0 * diag.mass_preserving;
    auto curves = alpha_curves(mle, p, r, sub, seq, linspace(0.0, hi, args.steps));

    if (args.format == "csv") {
        std::ostringstream cs;
        jio::curves_to_csv(cs, curves);
        write_or_print(args.curves, cs.str());
    } else if (args.format == "json") {
        jio::json cj = jio::json::array();
        for (const auto& pt : curves)
            cj.push_back({{"alpha", pt.alpha}, {"log_g", pt.log_mass}, {"gain", pt.gain}});
        write_or_print(args.curves, cj.dump(2) + "\n");
    } else {
        throw std::invalid_argument("analyze-alpha supports --format csv|json");
    }
    jio::json dj = jio::diagnostics_to_json(diag);
    if (args.diagnostics) jio::save_text(*args.diagnostics, dj.dump(2) + "\n");
    else std::cerr << dj.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Iterative proportional scaling for hierarchical log-linear models"};
    app.set_version_flag("--version", "ipscale 0.1.0");
    app.require_subcommand(1);

    FitArgs fit_args;
    auto* fit = app.add_subcommand("fit", "Fit a hierarchical model to a contingency table");
    fit->add_option("--data", fit_args.data, "table JSON or CSV")->required();
    fit->add_option("--model", fit_args.model, "model JSON")->required();
    fit->add_option("--algorithm", fit_args.algorithm,
                    "conventional | submodel | submodel-alpha0 | submodel-fixed:A | cycle-tree");
    fit->add_option("--submodels", fit_args.submodels, "spanning family JSON");
    fit->add_flag("--auto-span", fit_args.auto_span, "derive the spanning family greedily");
    fit->add_option("--tol", fit_args.tol, "convergence tolerance");
    fit->add_option("--max-cycles", fit_args.max_cycles, "cycle cap");
    fit->add_option("--criterion", fit_args.criterion, "marginal-Linf | clique-L1");
    fit->add_option("--out", fit_args.out, "report path (default: stdout)");
    fit->add_option("--format", fit_args.format, "json | csv");

    SpanArgs span_args;
    auto* span = app.add_subcommand("span", "Build a spanning family of decomposable submodels");
    span->add_option("--model", span_args.model, "model JSON")->required();
    span->add_option("--out", span_args.out, "family JSON path (default: stdout)");

    BenchArgs bench_args;
    auto* bench = app.add_subcommand("bench", "Cycle-model benchmark grid");
    bench->add_option("--dims", bench_args.dims, "cycle sizes, e.g. 4..8 or 4,6,8");
    bench->add_option("--levels", bench_args.levels, "level counts, e.g. 2,3,4");
    bench->add_option("--replicates", bench_args.replicates, "tables per grid cell");
    bench->add_option("--seed", bench_args.seed, "master seed");
    bench->add_option("--tol", bench_args.tol, "convergence tolerance");
    bench->add_option("--max-cycles", bench_args.max_cycles, "cycle cap");
    bench->add_option("--out", bench_args.out, "summary CSV path (default: stdout)");
    bench->add_option("--markdown", bench_args.markdown, "summary markdown path");
    bench->add_option("--records", bench_args.records, "raw per-run CSV path");
    bench->add_flag("--no-cross-check", bench_args.no_cross_check,
                    "skip the paired-fit agreement check");
    bench->add_option("--format", bench_args.format, "csv | markdown | json");

    AnalyzeArgs analyze_args;
    auto* analyze = app.add_subcommand("analyze-alpha",
                                       "Scaling-exponent diagnostics near the fitted table");
    analyze->add_option("--data", analyze_args.data, "table JSON or CSV")->required();
    analyze->add_option("--model", analyze_args.model, "model JSON")->required();
    analyze->add_option("--submodels", analyze_args.submodels, "spanning family JSON");
    analyze->add_option("--member", analyze_args.member, "family member index");
    analyze->add_option("--delta", analyze_args.delta, "perturbation scale");
    analyze->add_option("--seed", analyze_args.seed, "perturbation seed");
    analyze->add_option("--alpha-max", analyze_args.alpha_max, "curve grid end");
    analyze->add_option("--steps", analyze_args.steps, "curve grid points");
    analyze->add_option("--curves", analyze_args.curves, "curves CSV path (default: stdout)");
    analyze->add_option("--diagnostics", analyze_args.diagnostics, "diagnostics JSON path");
    analyze->add_option("--format", analyze_args.format, "csv | json");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInputError;
    }

    try {
        if (fit->parsed()) return run_fit(fit_args);
        if (span->parsed()) return run_span(span_args);
        if (bench->parsed()) return run_bench(bench_args);
        if (analyze->parsed()) return run_analyze(analyze_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInputError;
    }
    return kExitInputError;
}
