#pragma once

#include <optional>

#include "ipscale/engines.hpp"

namespace ipscale {

// Diagnostics of the scaling exponent near the maximum-likelihood
// table: the exact mass-restoring exponent, its quadratic closed-form
// approximation, the divergence-optimal exponent, and the break-even
// exponent beyond which a scaled update stops helping.
struct AlphaDiagnostics {
    double ratio_deviation = 0.0;                  // max |r(i_a)/p(i_a) - 1|
    double mass_preserving = 0.0;                  // exact unit-mass root
    std::optional<double> mass_preserving_approx;  // nullopt: already fitted
    double kl_optimal = 0.0;
    double kl_breakeven = 0.0;
};

/// Max deviation of the marginal ratios r(i_a)/p(i_a) from 1 over the
/// given sets.  Zero p-marginals are rejected.
inline double ratio_deviation(const DenseTable& p, const DenseTable& r,
                              const std::vector<VarSet>& sets) {
    if (p.schema() != r.schema()) throw std::invalid_argument("ratio_deviation: schema mismatch");
    double dev = 0.0;
    for (const auto& set : sets) {
        DenseTable pm = marginalize(p, set), rm = marginalize(r, set);
        for (std::size_t c = 0; c < pm.size(); ++c) {
            if (pm[c] == 0.0) throw std::invalid_argument("ratio_deviation: zero marginal");
            dev = std::max(dev, std::abs(rm[c] / pm[c] - 1.0));
        }
    }
    return dev;
}

/// Deviation over a model's generators plus the separators of every
/// member of a spanning family.
inline double ratio_deviation(const DenseTable& p, const DenseTable& r,
                              const GeneratingClass& model, const SpanningFamily& fam) {
    std::vector<VarSet> sets = model.generators();
    for (const auto& seq : fam.sequences)
        for (const auto& sep : seq.separators) sets.push_back(sep);
    return ratio_deviation(p, r, sets);
}

/// Quadratic closed-form approximation of the mass-restoring exponent,
/// valid near the fitted table.  The numerator is evaluated in its
/// telescoped nonnegative form.  Returns nullopt when the marginals
/// already match (the exponent is undefined there).
inline std::optional<double> approx_mass_preserving_alpha(const DenseTable& p,
                                                          const DenseTable& r,
                                                          const GeneratingClass& sub,
                                                          const PerfectSequence& ps) {
    if (p.schema() != r.schema())
        throw std::invalid_argument("approx_mass_preserving_alpha: schema mismatch");
    if (marginal_linf_gap(normalize(p), r, sub.generators()) <= 1e-12) return std::nullopt;

    const Schema& schema = p.schema();
    auto ratio_minus_one = [&](const VarSet& set) {
        DenseTable pm = marginalize(p, set), rm = marginalize(r, set);
        std::vector<double> out(pm.size());
        for (std::size_t c = 0; c < pm.size(); ++c) {
            if (pm[c] == 0.0)
                throw std::invalid_argument("approx_mass_preserving_alpha: zero marginal");
            out[c] = rm[c] / pm[c] - 1.0;
        }
        return out;
    };

    // telescoped numerator: the first generator's squared deviations,
    // then squared generator-vs-separator differences down the sequence
    double num = 0.0;
    {
        const VarSet& c1 = sub.generator(ps.order[0]);
        DenseTable pm = marginalize(p, c1);
        std::vector<double> rho1 = ratio_minus_one(c1);
        for (std::size_t c = 0; c < pm.size(); ++c) num += pm[c] * rho1[c] * rho1[c];
    }
    for (std::size_t k = 1; k < ps.order.size(); ++k) {
        const VarSet& ck = sub.generator(ps.order[k]);
        const VarSet& sk = ps.separators[k - 1];
        DenseTable pm = marginalize(p, ck);
        std::vector<double> rho_c = ratio_minus_one(ck);
        std::vector<double> rho_s = ratio_minus_one(sk);
        VarSet rel;
        for (std::size_t t = 0; t < ck.size(); ++t)
            if (vset::contains(sk, ck[t])) rel.push_back(static_cast<int>(t));
        auto to_sep = detail::marginal_index_map(schema.sub_schema(ck), rel);
        for (std::size_t c = 0; c < pm.size(); ++c) {
            double d = rho_c[c] - rho_s[to_sep[c]];
            num += pm[c] * d * d;
        }
    }

    // denominator: full-cell expectation of the squared combined deviation
    double den = 0.0;
    {
        std::vector<double> comb(p.size(), 0.0);
        auto add = [&](const VarSet& set, double sign) {
            auto map = detail::marginal_index_map(schema, set);
            std::vector<double> rho = ratio_minus_one(set);
            for (std::size_t i = 0; i < comb.size(); ++i) comb[i] += sign * rho[map[i]];
        };
        for (const auto& gen : sub.generators()) add(gen, +1.0);
        for (const auto& sep : ps.separators) add(sep, -1.0);
        for (std::size_t i = 0; i < comb.size(); ++i) den += p[i] * comb[i] * comb[i];
    }
    if (den == 0.0) return std::nullopt;
    return num / den;
}

/// The linear term of the divergence decrease before renormalization:
/// alpha times the reference-weighted mean log multiplier of the step.
inline double raw_kl_gain(double alpha, const DenseTable& reference, const DenseTable& p,
                          const DenseTable& r, const GeneratingClass& sub,
                          const PerfectSequence& ps) {
    if (reference.schema() != p.schema() || p.schema() != r.schema())
        throw std::invalid_argument("raw_kl_gain: schema mismatch");
    detail::SubsetMaps maps(p.schema());
    detail::StepExponents ex(p.values(), r, sub, ps, maps);
    double mean = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        if (reference[i] == 0.0) continue;
        if (ex.masked[i])
            throw SupportError("raw_kl_gain: reference positive on a zero-target cell");
        mean += reference[i] * ex.s[i];
    }
    return alpha * mean;
}

namespace detail {

/// F(alpha) - log g(alpha): the net divergence decrease of a scaled
/// update, as a closure over one exponent evaluation.
struct GainCurve {
    StepExponents ex;
    double mean_log_multiplier = 0.0;

    GainCurve(const DenseTable& reference, const DenseTable& p, const DenseTable& r,
              const GeneratingClass& sub, const PerfectSequence& ps, SubsetMaps& maps)
        : ex(p.values(), r, sub, ps, maps) {
        for (std::size_t i = 0; i < reference.size(); ++i) {
            if (reference[i] == 0.0) continue;
            if (ex.masked[i])
                throw SupportError("gain curve: reference positive on a zero-target cell");
            mean_log_multiplier += reference[i] * ex.s[i];
        }
    }

    double log_mass(double alpha) const { return std::log1p(ex.mass_minus_one(alpha)); }
    double operator()(double alpha) const {
        return alpha * mean_log_multiplier - log_mass(alpha);
    }
};

}  // namespace detail

/// Exponent maximizing the divergence decrease, by golden-section
/// search on [0, 4 * mass-restoring exponent].
inline double kl_optimal_alpha(const DenseTable& reference, const DenseTable& p,
                               const DenseTable& r, const GeneratingClass& sub,
                               const PerfectSequence& ps, double tol = 1e-10) {
    double a0 = mass_preserving_alpha(p, r, sub, ps);
    detail::SubsetMaps maps(p.schema());
    detail::GainCurve gain(reference, p, r, sub, ps, maps);

    double lo = 0.0, hi = 4.0 * a0;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - phi * (hi - lo), x2 = lo + phi * (hi - lo);
    double f1 = gain(x1), f2 = gain(x2);
    while (hi - lo > tol) {
        if (f1 < f2) {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = gain(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = gain(x1);
        }
    }
    return 0.5 * (lo + hi);
}

/// Positive exponent at which the divergence decrease returns to zero
/// (the break-even point of the scaled update).
inline double kl_breakeven_alpha(const DenseTable& reference, const DenseTable& p,
                                 const DenseTable& r, const GeneratingClass& sub,
                                 const PerfectSequence& ps, double tol = 1e-10) {
    double a0 = mass_preserving_alpha(p, r, sub, ps);
    detail::SubsetMaps maps(p.schema());
    detail::GainCurve gain(reference, p, r, sub, ps, maps);

    double lo = kl_optimal_alpha(reference, p, r, sub, ps, tol);
    if (gain(lo) <= 0.0)
        throw std::runtime_error("kl_breakeven_alpha: no positive gain at the optimum");
    double hi = std::max(2.0 * lo, a0);
    const double bound = 64.0 * a0;
    while (gain(hi) > 0.0) {
        hi *= 2.0;
        if (hi > bound)
            throw std::runtime_error("kl_breakeven_alpha: no positive root within bracket bound");
    }
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        (gain(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct AlphaCurvePoint {
    double alpha = 0.0;
    double log_mass = 0.0;  // log g(alpha)
    double gain = 0.0;      // F(alpha) - log g(alpha)
};

/// Sampled response curves of the scaled update: log g and the net
/// divergence decrease over a grid of exponents.
inline std::vector<AlphaCurvePoint> alpha_curves(const DenseTable& reference,
                                                 const DenseTable& p, const DenseTable& r,
                                                 const GeneratingClass& sub,
                                                 const PerfectSequence& ps,
                                                 const std::vector<double>& alphas) {
    detail::SubsetMaps maps(p.schema());
    detail::GainCurve gain(reference, p, r, sub, ps, maps);
    std::vector<AlphaCurvePoint> out;
    out.reserve(alphas.size());
    for (double a : alphas) {
        if (a < 0.0) throw std::invalid_argument("alpha_curves: negative exponent");
        AlphaCurvePoint pt;
        pt.alpha = a;
        pt.log_mass = gain.log_mass(a);
        pt.gain = a * gain.mean_log_multiplier - pt.log_mass;
        out.push_back(pt);
    }
    return out;
}

/// Limit of repeating the same whole-submodel unit update until the
/// normalized iterate stops moving.  A single update is not a
/// divergence projection, but its repetition converges to the
/// projection onto the log-affine family the step spans, which does
/// satisfy the submodel's marginal constraints.
inline DenseTable repeat_until_fixed(const DenseTable& p, const DenseTable& r,
                                     const GeneratingClass& sub, const PerfectSequence& ps,
                                     double tol = 1e-12, int max_iter = 100000) {
    DenseTable q = normalize(p);
    for (int it = 0; it < max_iter; ++it) {
        DenseTable next = normalize(submodel_step(q, r, sub, ps, 1.0));
        if (max_abs_diff(next, q) <= tol) return next;
        q = std::move(next);
    }
    throw std::runtime_error("repeat_until_fixed: no fixed point within the iteration cap");
}

/// Full diagnostic record for one submodel step near the fitted table.
inline AlphaDiagnostics analyze_alphas(const DenseTable& reference, const DenseTable& p,
                                       const DenseTable& r, const GeneratingClass& sub,
                                       const PerfectSequence& ps,
                                       const std::vector<VarSet>& deviation_sets) {
    AlphaDiagnostics d;
    d.ratio_deviation = ratio_deviation(p, r, deviation_sets);
    d.mass_preserving = mass_preserving_alpha(p, r, sub, ps);
    d.mass_preserving_approx = approx_mass_preserving_alpha(p, r, sub, ps);
    d.kl_optimal = kl_optimal_alpha(reference, p, r, sub, ps);
    d.kl_breakeven = kl_breakeven_alpha(reference, p, r, sub, ps);
    return d;
}

}  // namespace ipscale
