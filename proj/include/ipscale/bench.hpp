#pragma once

#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ipscale/cycle_tree.hpp"

namespace ipscale {

namespace detail {

// SplitMix64: counter-based, splittable by reseeding with mixed keys
struct SplitMix64 {
    std::uint64_t state;
    std::uint64_t next() {
        std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    // uniform in [0, n) by rejection; exact and platform-stable
    std::uint64_t bounded(std::uint64_t n) {
        std::uint64_t limit = ~0ull - ~0ull % n;
        std::uint64_t x;
        do { x = next(); } while (x >= limit);
        return x % n;
    }
};

inline std::uint64_t mix_key(std::uint64_t seed, std::uint64_t key) {
    SplitMix64 s{seed ^ (key * 0x9e3779b97f4a7c15ull)};
    return s.next();
}

}  // namespace detail

// ============================================================================
// Experiment protocol
// ============================================================================

struct ExperimentPlan {
    std::vector<int> dims{4, 5, 6, 7, 8};
    std::vector<int> levels{2, 3, 4};
    int replicates = 1000;
    std::uint64_t seed = 17;
    double tolerance = 1e-6;
    int max_cycles = 100000;
    bool cross_check = true;  // record the L-inf gap between the paired fits

    void validate() const {
        if (replicates < 1) throw std::invalid_argument("ExperimentPlan: replicates must be >= 1");
        if (!(tolerance > 0.0)) throw std::invalid_argument("ExperimentPlan: tolerance must be > 0");
        for (int j : dims)
            if (j < 4) throw std::invalid_argument("ExperimentPlan: dims must be >= 4");
        for (int l : levels)
            if (l < 2) throw std::invalid_argument("ExperimentPlan: levels must be >= 2");
    }
};

struct RunRecord {
    int j_way = 0;
    int levels = 0;
    int replicate = 0;
    std::string algorithm;  // "cycle-tree" or "conventional"
    int steps = 0;
    std::int64_t wall_ns = 0;
    bool converged = false;
    double linf_gap = 0.0;  // vs the paired fit (same on both records)
    std::uint64_t cell_writes = 0;
    int updates = 0;
};

/// Table of i.i.d. uniform counts on {1,...,1e6}, one stream per seed.
inline std::vector<long long> random_table(const Schema& schema, std::uint64_t seed,
                                           long long max_count = 1000000) {
    detail::SplitMix64 rng{seed};
    std::vector<long long> counts(schema.cell_count());
    for (auto& c : counts)
        c = 1 + static_cast<long long>(rng.bounded(static_cast<std::uint64_t>(max_count)));
    return counts;
}

/// Seed of one replicate, derived from the master seed and the cell
/// coordinates so replicates are reproducible in any order.
inline std::uint64_t replicate_seed(std::uint64_t master, int j_way, int levels, int replicate) {
    std::uint64_t s = detail::mix_key(master, static_cast<std::uint64_t>(j_way));
    s = detail::mix_key(s, static_cast<std::uint64_t>(levels));
    s = detail::mix_key(s, static_cast<std::uint64_t>(replicate));
    return s;
}

namespace detail {

inline std::pair<RunRecord, RunRecord> run_one(const ExperimentPlan& plan, int j_way, int levels,
                                               int replicate) {
    CycleSpec spec(j_way, levels);
    auto counts = random_table(spec.schema, replicate_seed(plan.seed, j_way, levels, replicate));
    DenseTable r = from_counts(spec.schema, counts);
    GeneratingClass model = spec.model();
    TriangulatedStructure ts = triangulate_cycle(spec);

    FitConfig cfg;
    cfg.tolerance = plan.tolerance;
    cfg.max_cycles = plan.max_cycles;
    cfg.criterion = FitConfig::Criterion::CliqueL1;
    cfg.criterion_sets = ts.cliques;  // same stopping family as the propagation engine
    cfg.record_trace = false;
    cfg.check_per_update = true;  // steps count scaling updates / directed sweeps

    RunRecord conv;
    conv.j_way = j_way;
    conv.levels = levels;
    conv.replicate = replicate;
    conv.algorithm = "conventional";
    auto conv_rep = fit_conventional(r, model, cfg);
    conv.steps = conv_rep.cycles_used;
    conv.wall_ns = conv_rep.wall_time_ns;
    conv.converged = conv_rep.converged;
    conv.cell_writes = conv_rep.cell_writes;
    conv.updates = conv_rep.updates;

    RunRecord tree = conv;
    tree.algorithm = "cycle-tree";
    auto tree_rep = fit_cycle_tree(spec, r, cfg, 0, plan.cross_check);
    tree.steps = tree_rep.fit.cycles_used;
    tree.wall_ns = tree_rep.fit.wall_time_ns;
    tree.converged = tree_rep.fit.converged;
    tree.cell_writes = tree_rep.fit.cell_writes;
    tree.updates = tree_rep.fit.updates;

    if (plan.cross_check) {
        double gap = max_abs_diff(conv_rep.p_hat, tree_rep.fit.p_hat);
        conv.linf_gap = tree.linf_gap = gap;
    }
    return {std::move(conv), std::move(tree)};
}

}  // namespace detail

/// Paired fits over the whole (dims x levels x replicates) grid.  One
/// warm-up pair per grid cell is run untimed; per-run failures to
/// converge are recorded, not fatal.
inline std::vector<RunRecord> run_experiment(
    const ExperimentPlan& plan,
    const std::function<void(const std::string&)>& progress = {}) {
    plan.validate();
    std::vector<RunRecord> records;
    records.reserve(2 * plan.dims.size() * plan.levels.size() * plan.replicates);
    for (int j_way : plan.dims)
        for (int levels : plan.levels) {
            detail::run_one(plan, j_way, levels, 0);  // warm-up, discarded
            for (int rep = 0; rep < plan.replicates; ++rep) {
                auto [conv, tree] = detail::run_one(plan, j_way, levels, rep);
                records.push_back(std::move(conv));
                records.push_back(std::move(tree));
            }
            if (progress) {
                std::ostringstream os;
                os << "grid cell J=" << j_way << " I=" << levels << " done";
                progress(os.str());
            }
        }
    return records;
}

// ============================================================================
// Summaries
// ============================================================================

struct SummaryRow {
    int j_way = 0;
    int levels = 0;
    int n = 0;                    // replicates contributing
    double mean_tau_conv_ns = 0;  // conventional wall time
    double mean_tau_ns = 0;       // propagation wall time
    double pr_tau_less = 0;       // Pr(tau < tau_conv)
    double mean_nu_conv = 0;
    double mean_nu = 0;
    double step_ratio = 0;  // mean_nu / mean_nu_conv
    int non_converged = 0;
};

inline std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records) {
    if (records.empty()) throw std::invalid_argument("summarize: no records");
    std::vector<SummaryRow> rows;
    auto find_row = [&](int j_way, int levels) -> SummaryRow& {
        for (auto& row : rows)
            if (row.j_way == j_way && row.levels == levels) return row;
        rows.push_back({});
        rows.back().j_way = j_way;
        rows.back().levels = levels;
        return rows.back();
    };
    // pair the records per replicate
    std::unordered_map<std::uint64_t, const RunRecord*> tree_by_key;
    auto key_of = [](const RunRecord& rec) {
        return (static_cast<std::uint64_t>(rec.j_way) << 48) |
               (static_cast<std::uint64_t>(rec.levels) << 40) |
               static_cast<std::uint64_t>(rec.replicate);
    };
    for (const auto& rec : records)
        if (rec.algorithm == "cycle-tree") tree_by_key[key_of(rec)] = &rec;
    for (const auto& rec : records) {
        if (rec.algorithm != "conventional") continue;
        auto it = tree_by_key.find(key_of(rec));
        if (it == tree_by_key.end()) continue;
        const RunRecord* tree = it->second;
        SummaryRow& row = find_row(rec.j_way, rec.levels);
        ++row.n;
        row.mean_tau_conv_ns += static_cast<double>(rec.wall_ns);
        row.mean_tau_ns += static_cast<double>(tree->wall_ns);
        row.pr_tau_less += tree->wall_ns < rec.wall_ns ? 1.0 : 0.0;
        row.mean_nu_conv += rec.steps;
        row.mean_nu += tree->steps;
        row.non_converged += (rec.converged ? 0 : 1) + (tree->converged ? 0 : 1);
    }
    for (auto& row : rows) {
        if (row.n == 0) continue;
        row.mean_tau_conv_ns /= row.n;
        row.mean_tau_ns /= row.n;
        row.pr_tau_less /= row.n;
        row.mean_nu_conv /= row.n;
        row.mean_nu /= row.n;
        row.step_ratio = row.mean_nu / row.mean_nu_conv;
    }
    std::erase_if(rows, [](const SummaryRow& row) { return row.n == 0; });
    return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << "J,I,n,tau_conv_ns,tau_ns,pr_tau_less,nu_conv,nu,nu_ratio,non_converged\n";
    for (const auto& row : rows) {
        os << row.j_way << ',' << row.levels << ',' << row.n << ',' << row.mean_tau_conv_ns << ','
           << row.mean_tau_ns << ',' << row.pr_tau_less << ',' << row.mean_nu_conv << ','
           << row.mean_nu << ',' << row.step_ratio << ',' << row.non_converged << '\n';
    }
    return os.str();
}

inline std::string summary_markdown(const std::vector<SummaryRow>& rows) {
    std::ostringstream os;
    os << "| J | I | tau_conv (ms) | tau (ms) | Pr(tau<tau_conv) | nu_conv | nu | nu/nu_conv |\n";
    os << "|---|---|---------------|----------|------------------|---------|----|------------|\n";
    char buf[256];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "| %d | %d | %.4f | %.4f | %.3f | %.3f | %.3f | %.3f |\n",
                      row.j_way, row.levels, row.mean_tau_conv_ns / 1e6, row.mean_tau_ns / 1e6,
                      row.pr_tau_less, row.mean_nu_conv, row.mean_nu, row.step_ratio);
        os << buf;
    }
    return os.str();
}

}  // namespace ipscale
