#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipscale/model.hpp"

namespace ipscale {

/// Requested update cannot be applied: a target marginal is positive
/// where the iterate's marginal is zero.
struct SupportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// The iterate already satisfies the submodel's marginal constraints,
/// so no mass-restoring exponent exists.
struct AlreadyFittedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ============================================================================
// Configuration and reports
// ============================================================================

struct FitConfig {
    enum class Criterion { MarginalLinf, CliqueL1 };
    enum class AlphaPolicy { Unit, Fixed, MassPreserving };

    double tolerance = 1e-6;
    int max_cycles = 10000;
    Criterion criterion = Criterion::MarginalLinf;
    AlphaPolicy alpha_policy = AlphaPolicy::Unit;
    double fixed_alpha = 1.0;

    /// Sets whose marginals drive the stopping rule; defaults to the
    /// model's generators when empty.
    std::vector<VarSet> criterion_sets;

    /// When set, each trace row records I(reference : p^(t)).
    std::optional<DenseTable> kl_reference;

    bool record_trace = true;

    /// Evaluate the stopping rule after every scaling update instead of
    /// once per cycle; cycles_used then counts updates.  This is the
    /// step accounting of the benchmark protocol.
    bool check_per_update = false;

    void validate() const {
        if (!(tolerance > 0.0)) throw std::invalid_argument("FitConfig: tolerance must be > 0");
        if (max_cycles < 1) throw std::invalid_argument("FitConfig: max_cycles must be >= 1");
        if (fixed_alpha < 0.0) throw std::invalid_argument("FitConfig: fixed alpha must be >= 0");
    }
};

struct TraceRow {
    int cycle = 0;
    double criterion = 0.0;
    double mass = 0.0;                       // total of the unnormalized iterate
    std::vector<double> alphas;              // exponent per sub-step (empty: conventional)
    std::vector<double> substep_mass;        // iterate total after each sub-step
    std::optional<double> kl_to_reference;
};

struct FitReport {
    DenseTable p_hat;
    int cycles_used = 0;
    bool converged = false;
    std::vector<TraceRow> trace;
    std::int64_t wall_time_ns = 0;
    std::uint64_t cell_writes = 0;  // cells written by scaling updates
    int updates = 0;                // scaling updates applied
};

// ============================================================================
// Internal machinery
// ============================================================================

namespace detail {

inline double kahan_sum(const std::vector<double>& xs) {
    double s = 0.0, c = 0.0;
    for (double x : xs) {
        double y = x - c;
        double t = s + y;
        c = (t - s) - y;
        s = t;
    }
    return s;
}

/// Cached marginal-index maps for one schema.
class SubsetMaps {
public:
    explicit SubsetMaps(const Schema& schema) : schema_(&schema) {}

    const std::vector<std::uint32_t>& map(const VarSet& s) {
        for (std::size_t k = 0; k < sets_.size(); ++k)
            if (sets_[k] == s) return maps_[k];
        sets_.push_back(s);
        maps_.push_back(marginal_index_map(*schema_, s));
        return maps_.back();
    }

    std::vector<double> marginal(const std::vector<double>& vals, const VarSet& s) {
        const auto& m = map(s);
        std::size_t out_size = schema_->sub_schema(s).cell_count();
        std::vector<double> out(out_size, 0.0);
        for (std::size_t i = 0; i < vals.size(); ++i) out[m[i]] += vals[i];
        return out;
    }

private:
    const Schema* schema_;
    std::vector<VarSet> sets_;
    std::vector<std::vector<std::uint32_t>> maps_;
};

/// Per-cell log multiplier of one submodel scaling step,
///   s(i) = sum_C log r(i_C)/q(i_C) - sum_S log r(i_S)/q(i_S),
/// with cells masked wherever a target factor vanishes.  Both the step
/// itself (q * e^{alpha s}) and the post-step mass are evaluated from it.
struct StepExponents {
    std::vector<double> s;       // raw log multiplier
    std::vector<bool> masked;    // target product-form value is zero here
    std::vector<double> q;       // iterate snapshot
    double q_total = 0.0;
    double norm_shift = 0.0;     // s + norm_shift: ratios of exactly normalized tables

    StepExponents(const std::vector<double>& q_vals, const DenseTable& r,
                  const GeneratingClass& sub, const PerfectSequence& ps, SubsetMaps& maps) {
        q = q_vals;
        const std::size_t n = q.size();
        s.assign(n, 0.0);
        masked.assign(n, false);
        q_total = kahan_sum(q);
        const double r_total = kahan_sum(r.values());
        norm_shift = std::log1p(q_total - 1.0) - std::log1p(r_total - 1.0);

        auto accumulate = [&](const VarSet& set, double sign, bool is_target_numerator) {
            const auto& m = maps.map(set);
            std::vector<double> qm = maps.marginal(q, set);
            std::vector<double> rm(qm.size(), 0.0);
            {
                const auto& rv = r.values();
                for (std::size_t i = 0; i < rv.size(); ++i) rm[m[i]] += rv[i];
            }
            for (std::size_t c = 0; c < qm.size(); ++c)
                if (rm[c] > 0.0 && qm[c] == 0.0)
                    throw SupportError(
                        "submodel step: zero iterate marginal against positive target");
            for (std::size_t i = 0; i < n; ++i) {
                double rf = rm[m[i]], qf = qm[m[i]];
                if (rf == 0.0) {
                    if (is_target_numerator) masked[i] = true;
                    else if (!masked[i])
                        throw std::invalid_argument(
                            "submodel step: zero separator target with nonzero numerator");
                    continue;
                }
                // log(rf/qf) through log1p keeps near-unit ratios accurate
                s[i] += sign * std::log1p((rf - qf) / qf);
            }
        };

        for (const auto& gen : sub.generators()) accumulate(gen, +1.0, true);
        for (const auto& sep : ps.separators) accumulate(sep, -1.0, false);
    }

    /// g(alpha) - 1 on the exactly normalized iterate and target,
    /// evaluated through expm1 so the shallow dip below 1 stays
    /// resolvable even when the iterate is nearly fitted.
    double mass_minus_one(double alpha) const {
        if (alpha == 0.0) return 0.0;
        std::vector<double> terms;
        terms.reserve(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (q[i] == 0.0) continue;
            terms.push_back(masked[i] ? -q[i]
                                      : q[i] * std::expm1(alpha * (s[i] + norm_shift)));
        }
        return kahan_sum(terms) / q_total;
    }

    /// Post-step mass relative to the current mass: g(alpha) of the
    /// normalized iterate.  Exactly 1 at alpha = 0.
    double mass(double alpha) const { return 1.0 + mass_minus_one(alpha); }

    /// The scaled iterate.  Raw ratios follow the update formula
    /// literally; normalized ratios divide the scaling factors by the
    /// table totals, which preserves the iterate's mass at g(alpha) = 1
    /// (the normalized trajectory is identical either way).
    std::vector<double> apply(double alpha, bool normalized_ratios = false) const {
        const double shift = normalized_ratios ? norm_shift : 0.0;
        std::vector<double> out(q.size());
        for (std::size_t i = 0; i < q.size(); ++i) {
            if (alpha == 0.0) out[i] = q[i];
            else if (masked[i]) out[i] = 0.0;
            else out[i] = q[i] == 0.0 ? 0.0 : q[i] * std::exp(alpha * (s[i] + shift));
        }
        return out;
    }

    /// L-inf gap between the normalized iterate's marginals and the
    /// targets over the submodel's generators.
    double target_gap(const DenseTable& r, const GeneratingClass& sub, SubsetMaps& maps) const {
        double gap = 0.0;
        for (const auto& gen : sub.generators()) {
            std::vector<double> qm = maps.marginal(q, gen);
            const auto& m = maps.map(gen);
            std::vector<double> rm(qm.size(), 0.0);
            const auto& rv = r.values();
            for (std::size_t i = 0; i < rv.size(); ++i) rm[m[i]] += rv[i];
            for (std::size_t c = 0; c < qm.size(); ++c)
                gap = std::max(gap, std::abs(qm[c] / q_total - rm[c]));
        }
        return gap;
    }
};

/// Unique positive root of mass(alpha) = 1: halve from 1 until the mass
/// dips below 1, double until it reaches 1 again, then bisect.
inline double solve_unit_mass(const StepExponents& ex, double residual_tol = 1e-14) {
    double lo = 1.0;
    int guard = 0;
    while (ex.mass_minus_one(lo) >= 0.0) {
        lo *= 0.5;
        if (++guard > 200)
            throw AlreadyFittedError("mass-restoring exponent: no descent at small alpha");
    }
    double hi = lo;
    guard = 0;
    while (ex.mass_minus_one(hi) < 0.0) {
        hi *= 2.0;
        if (++guard > 200)
            throw std::runtime_error("mass-restoring exponent: mass never returns to 1");
    }
    for (int it = 0; it < 400; ++it) {
        double mid = 0.5 * (lo + hi);
        double g1 = ex.mass_minus_one(mid);
        if (std::abs(g1) <= residual_tol) return mid;
        (g1 < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct CriterionState {
    FitConfig::Criterion kind;
    std::vector<VarSet> sets;
    std::vector<std::vector<double>> targets;  // r marginals (MarginalLinf)
    std::vector<std::vector<double>> prev;     // previous-cycle marginals (CliqueL1)

    CriterionState(const FitConfig& cfg, const std::vector<VarSet>& default_sets,
                   const DenseTable& r, const std::vector<double>& q0, SubsetMaps& maps) {
        kind = cfg.criterion;
        sets = cfg.criterion_sets.empty() ? default_sets : cfg.criterion_sets;
        for (const auto& s : sets) {
            if (kind == FitConfig::Criterion::MarginalLinf)
                targets.push_back(maps.marginal(r.values(), s));
            else
                prev.push_back(maps.marginal(q0, s));
        }
    }

    double evaluate(const std::vector<double>& q, double q_total, SubsetMaps& maps) {
        double value = 0.0;
        for (std::size_t k = 0; k < sets.size(); ++k) {
            std::vector<double> cur = maps.marginal(q, sets[k]);
            if (kind == FitConfig::Criterion::MarginalLinf) {
                for (std::size_t c = 0; c < cur.size(); ++c)
                    value = std::max(value, std::abs(cur[c] / q_total - targets[k][c]));
            } else {
                for (std::size_t c = 0; c < cur.size(); ++c)
                    value += std::abs(cur[c] - prev[k][c]);
                prev[k] = std::move(cur);
            }
        }
        return value;
    }
};

inline DenseTable normalized_from(const Schema& schema, std::vector<double> vals) {
    DenseTable t(schema, std::move(vals));
    return normalize(t);
}

}  // namespace detail

// ============================================================================
// Single-marginal scaling (conventional IPS building block)
// ============================================================================

/// One proportional-scaling update: q' = q * r[C] / q[C] through the
/// marginal coordinates, with 0/0 treated as 0.
inline DenseTable ips_step(const DenseTable& q, const DenseTable& r, const VarSet& c) {
    if (q.schema() != r.schema()) throw std::invalid_argument("ips_step: schema mismatch");
    auto map = detail::marginal_index_map(q.schema(), c);
    std::size_t sub_cells = q.schema().sub_schema(c).cell_count();
    std::vector<double> qm(sub_cells, 0.0), rm(sub_cells, 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) {
        qm[map[i]] += q[i];
        rm[map[i]] += r[i];
    }
    for (std::size_t cix = 0; cix < sub_cells; ++cix)
        if (rm[cix] > 0.0 && qm[cix] == 0.0)
            throw SupportError("ips_step: target marginal positive where iterate marginal is zero");
    std::vector<double> out(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        double rf = rm[map[i]];
        out[i] = rf == 0.0 ? 0.0 : q[i] * rf / qm[map[i]];
    }
    return DenseTable(q.schema(), std::move(out));
}

/// Conventional iterative proportional scaling: cycle single-generator
/// updates in the listed order, starting from the uniform table.
inline FitReport fit_conventional(const DenseTable& r, const GeneratingClass& c,
                                  const FitConfig& cfg) {
    cfg.validate();
    if (r.schema() != c.schema()) throw std::invalid_argument("fit_conventional: schema mismatch");
    if (!is_normalized(r)) throw std::invalid_argument("fit_conventional: r must be normalized");

    const auto t0 = std::chrono::steady_clock::now();
    detail::SubsetMaps maps(r.schema());
    const std::size_t n = r.schema().cell_count();
    std::vector<double> q(n, 1.0 / static_cast<double>(n));

    // per-generator target marginals
    std::vector<std::vector<double>> rm;
    for (const auto& gen : c.generators()) rm.push_back(maps.marginal(r.values(), gen));

    detail::CriterionState crit(cfg, c.generators(), r, q, maps);

    FitReport rep;
    auto record = [&](int label, double value, double mass) {
        if (!cfg.record_trace) return;
        TraceRow row;
        row.cycle = label;
        row.criterion = value;
        row.mass = mass;
        if (cfg.kl_reference)
            row.kl_to_reference =
                kl_divergence(*cfg.kl_reference, detail::normalized_from(r.schema(), q));
        rep.trace.push_back(std::move(row));
    };
    for (int cycle = 1; cycle <= cfg.max_cycles && !rep.converged; ++cycle) {
        for (int j = 0; j < c.size(); ++j) {
            const auto& map = maps.map(c.generator(j));
            std::vector<double> qm = maps.marginal(q, c.generator(j));
            for (std::size_t cix = 0; cix < qm.size(); ++cix)
                if (rm[j][cix] > 0.0 && qm[cix] == 0.0)
                    throw SupportError("fit_conventional: support mismatch");
            for (std::size_t i = 0; i < n; ++i) {
                double rf = rm[j][map[i]];
                q[i] = rf == 0.0 ? 0.0 : q[i] * rf / qm[map[i]];
            }
            rep.cell_writes += n;
            ++rep.updates;
            if (cfg.check_per_update) {
                double mass = detail::kahan_sum(q);
                double value = crit.evaluate(q, mass, maps);
                rep.cycles_used = rep.updates;
                record(rep.updates, value, mass);
                if (value <= cfg.tolerance) { rep.converged = true; break; }
            }
        }
        if (cfg.check_per_update) continue;
        double mass = detail::kahan_sum(q);
        double value = crit.evaluate(q, mass, maps);
        rep.cycles_used = cycle;
        record(cycle, value, mass);
        if (value <= cfg.tolerance) rep.converged = true;
    }
    rep.p_hat = detail::normalized_from(r.schema(), std::move(q));
    rep.wall_time_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    return rep;
}

// ============================================================================
// Decomposable-submodel scaling
// ============================================================================

/// One whole-submodel update q' = q * (r_j / q_j)^alpha, where r_j and
/// q_j are the product-form extensions of the target and iterate
/// marginals over the submodel's generators.  Computed cellwise in log
/// space; cells whose target product form vanishes drop to zero for
/// alpha > 0.
inline DenseTable submodel_step(const DenseTable& q, const DenseTable& r,
                                const GeneratingClass& sub, const PerfectSequence& ps,
                                double alpha) {
    if (q.schema() != r.schema()) throw std::invalid_argument("submodel_step: schema mismatch");
    if (alpha < 0.0) throw std::invalid_argument("submodel_step: alpha must be >= 0");
    detail::SubsetMaps maps(q.schema());
    detail::StepExponents ex(q.values(), r, sub, ps, maps);
    return DenseTable(q.schema(), ex.apply(alpha));
}

/// Total mass after an alpha-scaled submodel update of a normalized
/// iterate (the scalar whose unit root the mass-restoring policy seeks).
inline double step_mass(const DenseTable& q, const DenseTable& r, const GeneratingClass& sub,
                        const PerfectSequence& ps, double alpha) {
    if (q.schema() != r.schema()) throw std::invalid_argument("step_mass: schema mismatch");
    if (alpha < 0.0) throw std::invalid_argument("step_mass: alpha must be >= 0");
    if (!is_normalized(q)) throw std::invalid_argument("step_mass: q must be normalized");
    detail::SubsetMaps maps(q.schema());
    detail::StepExponents ex(q.values(), r, sub, ps, maps);
    return ex.mass(alpha);
}

/// The unique positive exponent at which the submodel update returns
/// the iterate's mass to 1.  Throws AlreadyFittedError when the
/// iterate's marginals already match the targets (no root exists).
inline double mass_preserving_alpha(const DenseTable& q, const DenseTable& r,
                                    const GeneratingClass& sub, const PerfectSequence& ps) {
    if (q.schema() != r.schema())
        throw std::invalid_argument("mass_preserving_alpha: schema mismatch");
    if (!is_normalized(q)) throw std::invalid_argument("mass_preserving_alpha: q must be normalized");
    detail::SubsetMaps maps(q.schema());
    detail::StepExponents ex(q.values(), r, sub, ps, maps);
    if (ex.target_gap(r, sub, maps) <= 1e-12)
        throw AlreadyFittedError("mass_preserving_alpha: marginals already match");
    return detail::solve_unit_mass(ex);
}

/// Cycle whole-submodel updates over the members of a spanning family,
/// from the uniform table.  The exponent per sub-step follows the
/// configured policy; under the mass-preserving policy, sub-steps whose
/// marginals already match within 1e-12 are skipped as the identity.
inline FitReport fit_submodel_ips(const DenseTable& r, const SpanningFamily& fam,
                                  const FitConfig& cfg) {
    cfg.validate();
    if (fam.members.empty()) throw std::invalid_argument("fit_submodel_ips: empty family");
    if (fam.sequences.size() != fam.members.size())
        throw std::invalid_argument("fit_submodel_ips: family is missing perfect sequences");
    for (const auto& member : fam.members)
        if (member.schema() != r.schema())
            throw std::invalid_argument("fit_submodel_ips: schema mismatch");
    if (!is_normalized(r)) throw std::invalid_argument("fit_submodel_ips: r must be normalized");

    const auto t0 = std::chrono::steady_clock::now();
    detail::SubsetMaps maps(r.schema());
    const std::size_t n = r.schema().cell_count();
    std::vector<double> q(n, 1.0 / static_cast<double>(n));

    // stopping rule watches every constraint the family imposes, plus
    // the parent's generators when known
    std::vector<VarSet> watch;
    auto add_watch = [&](const VarSet& s) {
        for (const auto& w : watch)
            if (w == s) return;
        watch.push_back(s);
    };
    for (const auto& member : fam.members)
        for (const auto& gen : member.generators()) add_watch(gen);
    if (fam.parent)
        for (const auto& gen : fam.parent->generators()) add_watch(gen);

    detail::CriterionState crit(cfg, watch, r, q, maps);

    FitReport rep;
    const bool renormalize = cfg.alpha_policy != FitConfig::AlphaPolicy::MassPreserving &&
                             cfg.criterion == FitConfig::Criterion::MarginalLinf;
    int substeps = 0;
    for (int cycle = 1; cycle <= cfg.max_cycles && !rep.converged; ++cycle) {
        TraceRow row;
        row.cycle = cycle;
        for (std::size_t j = 0; j < fam.members.size() && !rep.converged; ++j) {
            detail::StepExponents ex(q, r, fam.members[j], fam.sequences[j], maps);
            double alpha = 0.0;
            switch (cfg.alpha_policy) {
                case FitConfig::AlphaPolicy::Unit: alpha = 1.0; break;
                case FitConfig::AlphaPolicy::Fixed: alpha = cfg.fixed_alpha; break;
                case FitConfig::AlphaPolicy::MassPreserving:
                    if (ex.target_gap(r, fam.members[j], maps) <= 1e-12) {
                        alpha = 0.0;
                    } else {
                        try {
                            alpha = detail::solve_unit_mass(ex);
                        } catch (const AlreadyFittedError&) {
                            alpha = 0.0;  // residual gap below the resolvable dip
                        }
                    }
                    break;
            }
            if (alpha != 0.0) {
                q = ex.apply(alpha,
                             cfg.alpha_policy == FitConfig::AlphaPolicy::MassPreserving);
                rep.cell_writes += n;
                ++rep.updates;
            }
            row.alphas.push_back(alpha);
            row.substep_mass.push_back(detail::kahan_sum(q));
            ++substeps;
            if (cfg.check_per_update) {
                row.criterion = crit.evaluate(q, row.substep_mass.back(), maps);
                rep.cycles_used = substeps;
                if (row.criterion <= cfg.tolerance) rep.converged = true;
            }
        }
        double mass = row.substep_mass.back();
        if (!cfg.check_per_update) {
            row.criterion = crit.evaluate(q, mass, maps);
            rep.cycles_used = cycle;
            if (row.criterion <= cfg.tolerance) rep.converged = true;
        }
        row.mass = mass;
        if (cfg.kl_reference)
            row.kl_to_reference =
                kl_divergence(*cfg.kl_reference, detail::normalized_from(r.schema(), q));
        if (cfg.record_trace) rep.trace.push_back(std::move(row));
        if (!rep.converged && renormalize) {
            // the normalized trajectory is invariant under rescaling of q
            for (double& v : q) v /= mass;
        }
    }
    rep.p_hat = detail::normalized_from(r.schema(), std::move(q));
    rep.wall_time_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    return rep;
}

/// L-inf gap between p's and r's marginals over the given sets.
inline double marginal_linf_gap(const DenseTable& p, const DenseTable& r,
                                const std::vector<VarSet>& sets) {
    double gap = 0.0;
    for (const auto& s : sets)
        gap = std::max(gap, max_abs_diff(marginalize(p, s), marginalize(r, s)));
    return gap;
}

}  // namespace ipscale
