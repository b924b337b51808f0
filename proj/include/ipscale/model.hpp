#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ipscale/table.hpp"

namespace ipscale {

// ============================================================================
// Generating classes
// ============================================================================

/// Family of maximal generators of a hierarchical log-linear model over
/// one schema.  The constructor rejects non-reduced input (a generator
/// contained in another); use reduce() first when that can happen.
class GeneratingClass {
public:
    GeneratingClass(Schema schema, std::vector<VarSet> generators)
        : schema_(std::move(schema)), gens_(std::move(generators)) {
        if (gens_.empty()) throw std::invalid_argument("GeneratingClass: no generators");
        for (auto& g : gens_) {
            if (g.empty()) throw std::invalid_argument("GeneratingClass: empty generator");
            g = vset::make(g);
            for (int v : g)
                if (v < 0 || v >= schema_.arity())
                    throw std::invalid_argument("GeneratingClass: variable position out of range");
        }
        for (std::size_t a = 0; a < gens_.size(); ++a)
            for (std::size_t b = 0; b < gens_.size(); ++b)
                if (a != b && vset::is_subset(gens_[a], gens_[b]))
                    throw std::invalid_argument(
                        "GeneratingClass: not reduced (generator contained in another)");
    }

    const Schema& schema() const { return schema_; }
    int size() const { return static_cast<int>(gens_.size()); }
    const VarSet& generator(int j) const { return gens_.at(j); }
    const std::vector<VarSet>& generators() const { return gens_; }

    /// Union of all generator variables.
    VarSet support() const {
        VarSet u;
        for (const auto& g : gens_) u = vset::unite(u, g);
        return u;
    }

    bool operator==(const GeneratingClass&) const = default;

private:
    Schema schema_;
    std::vector<VarSet> gens_;
};

/// Drop generators contained in another; keeps first occurrence order.
inline std::vector<VarSet> reduce(std::vector<VarSet> gens) {
    for (auto& g : gens) g = vset::make(g);
    std::vector<VarSet> out;
    for (std::size_t a = 0; a < gens.size(); ++a) {
        bool dominated = false;
        for (std::size_t b = 0; b < gens.size() && !dominated; ++b) {
            if (a == b) continue;
            if (gens[a] == gens[b]) dominated = b < a;  // keep first duplicate
            else if (vset::is_subset(gens[a], gens[b])) dominated = true;
        }
        if (!dominated) out.push_back(gens[a]);
    }
    return out;
}

/// True iff every generator of `child` is contained in some generator
/// of `parent`.
inline bool is_submodel(const GeneratingClass& child, const GeneratingClass& parent) {
    if (child.schema() != parent.schema())
        throw std::invalid_argument("is_submodel: schema mismatch");
    for (const auto& g : child.generators()) {
        bool covered = false;
        for (const auto& p : parent.generators())
            if (vset::is_subset(g, p)) { covered = true; break; }
        if (!covered) return false;
    }
    return true;
}

// ============================================================================
// Perfect sequences (running intersection property)
// ============================================================================

/// A generator ordering witnessing the running intersection property,
/// plus the separator multiset S_j = C_j /\ (C_1 u ... u C_{j-1}).
struct PerfectSequence {
    std::vector<int> order;        // permutation of generator indices
    std::vector<VarSet> separators;  // one per position >= 1, all nonempty
};

enum class DecompStatus { Decomposable, NotDecomposable, Disconnected };

struct DecompResult {
    DecompStatus status = DecompStatus::NotDecomposable;
    PerfectSequence sequence;  // valid only when status == Decomposable
    bool ok() const { return status == DecompStatus::Decomposable; }
};

/// Search for a perfect sequence by repeated elimination: remove a
/// generator whose intersection with the union of the remaining ones is
/// contained in a single remaining generator, recurse, and reverse the
/// elimination order.  Classes that admit only orderings with an empty
/// separator are reported Disconnected.
inline DecompResult find_perfect_sequence(const GeneratingClass& c) {
    const int m = c.size();
    std::vector<int> alive(m);
    for (int j = 0; j < m; ++j) alive[j] = j;
    std::vector<int> eliminated;
    eliminated.reserve(m);

    while (alive.size() > 1) {
        int pick = -1;
        // scan from the end so natural input orders are preserved
        for (int a = static_cast<int>(alive.size()) - 1; a >= 0 && pick < 0; --a) {
            VarSet rest_union;
            for (std::size_t b = 0; b < alive.size(); ++b)
                if (static_cast<int>(b) != a) rest_union = vset::unite(rest_union, c.generator(alive[b]));
            VarSet inter = vset::intersect(c.generator(alive[a]), rest_union);
            for (std::size_t b = 0; b < alive.size(); ++b) {
                if (static_cast<int>(b) == a) continue;
                if (vset::is_subset(inter, c.generator(alive[b]))) { pick = a; break; }
            }
        }
        if (pick < 0) return {DecompStatus::NotDecomposable, {}};
        eliminated.push_back(alive[pick]);
        alive.erase(alive.begin() + pick);
    }

    PerfectSequence seq;
    seq.order.push_back(alive[0]);
    for (auto it = eliminated.rbegin(); it != eliminated.rend(); ++it) seq.order.push_back(*it);

    VarSet seen = c.generator(seq.order[0]);
    for (std::size_t j = 1; j < seq.order.size(); ++j) {
        VarSet s = vset::intersect(c.generator(seq.order[j]), seen);
        if (s.empty()) return {DecompStatus::Disconnected, {}};
        seq.separators.push_back(std::move(s));
        seen = vset::unite(seen, c.generator(seq.order[j]));
    }
    return {DecompStatus::Decomposable, std::move(seq)};
}

// ============================================================================
// Spanning families of decomposable submodels
// ============================================================================

/// Connected decomposable submodels jointly covering every generator of
/// a parent model (coverage by subset containment).
struct SpanningFamily {
    std::vector<GeneratingClass> members;
    std::vector<PerfectSequence> sequences;  // aligned with members
    std::optional<GeneratingClass> parent;
};

struct MemberVerdict {
    bool submodel = false;
    bool decomposable = false;
    bool connected = false;
    bool ok() const { return submodel && decomposable && connected; }
};

struct SpanningReport {
    std::vector<MemberVerdict> members;
    std::vector<VarSet> uncovered;        // parent generators with no containing member generator
    std::vector<VarSet> uncovered_exact;  // parent generators not literally a member generator
    bool pass = false;

    std::string to_string(const Schema& schema) const {
        std::ostringstream os;
        os << (pass ? "PASS" : "FAIL") << ": " << members.size() << " member(s)";
        for (std::size_t k = 0; k < members.size(); ++k) {
            const auto& v = members[k];
            os << "\n  member " << k << ": submodel=" << (v.submodel ? "yes" : "no")
               << " decomposable=" << (v.decomposable ? "yes" : "no")
               << " connected=" << (v.connected ? "yes" : "no");
        }
        auto print_sets = [&](const char* label, const std::vector<VarSet>& sets) {
            os << "\n  " << label << ":";
            for (const auto& g : sets) {
                os << " {";
                for (std::size_t t = 0; t < g.size(); ++t)
                    os << (t ? "," : "") << schema.name(g[t]);
                os << "}";
            }
        };
        if (!uncovered.empty()) print_sets("uncovered generators", uncovered);
        std::vector<VarSet> containment_only;
        for (const auto& g : uncovered_exact)
            if (std::find(uncovered.begin(), uncovered.end(), g) == uncovered.end())
                containment_only.push_back(g);
        if (!containment_only.empty())
            print_sets("covered by containment only (no exact member)", containment_only);
        return os.str();
    }
};

/// Check a family against its parent: member validity, containment
/// coverage, and (informationally) exact-membership coverage.
inline SpanningReport validate_spanning(const GeneratingClass& parent, const SpanningFamily& fam) {
    SpanningReport rep;
    bool members_ok = true;
    for (const auto& member : fam.members) {
        MemberVerdict v;
        v.submodel = member.schema() == parent.schema() && is_submodel(member, parent);
        auto d = find_perfect_sequence(member);
        v.decomposable = d.status != DecompStatus::NotDecomposable;
        v.connected = d.status == DecompStatus::Decomposable;
        members_ok = members_ok && v.ok();
        rep.members.push_back(v);
    }
    for (const auto& g : parent.generators()) {
        bool covered = false, exact = false;
        for (const auto& member : fam.members)
            for (const auto& mg : member.generators()) {
                covered = covered || vset::is_subset(g, mg);
                exact = exact || mg == g;
            }
        if (!covered) rep.uncovered.push_back(g);
        if (!exact) rep.uncovered_exact.push_back(g);
    }
    rep.pass = members_ok && rep.uncovered.empty() && !fam.members.empty();
    return rep;
}

/// Greedy construction of a spanning family.  For each starting
/// generator: order the rest by maximal overlap with the previously
/// chosen one (ties by input index), then accept generators as long as
/// the accepted set stays connected decomposable.  A covering subfamily
/// of the resulting candidates is selected by greedy set cover.
inline SpanningFamily greedy_spanning(const GeneratingClass& c) {
    const int m = c.size();
    std::vector<std::vector<int>> candidates;  // generator index lists
    for (int start = 0; start < m; ++start) {
        std::vector<int> order{start};
        std::vector<bool> used(m, false);
        used[start] = true;
        for (int step = 1; step < m; ++step) {
            int best = -1;
            std::size_t best_overlap = 0;
            for (int j = 0; j < m; ++j) {
                if (used[j]) continue;
                std::size_t ov = vset::intersect(c.generator(order.back()), c.generator(j)).size();
                if (best < 0 || ov > best_overlap) { best = j; best_overlap = ov; }
            }
            order.push_back(best);
            used[best] = true;
        }
        std::vector<int> accepted{order[0]};
        for (std::size_t k = 1; k < order.size(); ++k) {
            std::vector<VarSet> trial;
            for (int j : accepted) trial.push_back(c.generator(j));
            trial.push_back(c.generator(order[k]));
            if (find_perfect_sequence(GeneratingClass(c.schema(), trial)).ok())
                accepted.push_back(order[k]);
        }
        std::sort(accepted.begin(), accepted.end());
        candidates.push_back(std::move(accepted));
    }

    // greedy set cover over parent generators; score = newly covered,
    // ties to the larger candidate, then the smaller starting index
    std::vector<bool> covered(m, false);
    std::vector<int> chosen;
    int n_covered = 0;
    while (n_covered < m) {
        int best = -1, best_new = -1;
        for (int cand = 0; cand < m; ++cand) {
            int fresh = 0;
            for (int j : candidates[cand])
                if (!covered[j]) ++fresh;
            if (fresh > best_new ||
                (fresh == best_new && best >= 0 &&
                 candidates[cand].size() > candidates[best].size()))
                { best = cand; best_new = fresh; }
        }
        chosen.push_back(best);
        for (int j : candidates[best])
            if (!covered[j]) { covered[j] = true; ++n_covered; }
    }

    SpanningFamily fam;
    fam.parent = c;
    for (int cand : chosen) {
        std::vector<VarSet> gens;
        for (int j : candidates[cand]) gens.push_back(c.generator(j));
        GeneratingClass member(c.schema(), std::move(gens));
        auto d = find_perfect_sequence(member);
        if (!d.ok()) throw std::logic_error("greedy_spanning: candidate not decomposable");
        fam.members.push_back(std::move(member));
        fam.sequences.push_back(std::move(d.sequence));
    }
    return fam;
}

// ============================================================================
// Maximum-entropy extension (product form)
// ============================================================================

/// Product-form extension of a consistent set of marginals over the
/// generators of a decomposable class: prod_C r(i_C) / prod_S r(i_S),
/// zero wherever a numerator factor is zero.  Inputs may be
/// unnormalized; marginals[j] must live on sub_schema(generator(j)).
inline DenseTable max_entropy_extension(const GeneratingClass& c,
                                        const std::vector<DenseTable>& marginals,
                                        const PerfectSequence& ps,
                                        double consistency_tol = 1e-10) {
    if (static_cast<int>(marginals.size()) != c.size())
        throw std::invalid_argument("max_entropy_extension: one marginal per generator required");
    for (int j = 0; j < c.size(); ++j)
        if (marginals[j].schema() != c.schema().sub_schema(c.generator(j)))
            throw std::invalid_argument("max_entropy_extension: marginal schema mismatch");

    // pairwise consistency on overlaps (empty overlap compares totals)
    const double scale = std::max(1.0, marginals[0].total());
    for (int a = 0; a < c.size(); ++a)
        for (int b = a + 1; b < c.size(); ++b) {
            VarSet overlap = vset::intersect(c.generator(a), c.generator(b));
            VarSet rel_a, rel_b;
            for (std::size_t t = 0; t < c.generator(a).size(); ++t)
                if (vset::contains(overlap, c.generator(a)[t])) rel_a.push_back(static_cast<int>(t));
            for (std::size_t t = 0; t < c.generator(b).size(); ++t)
                if (vset::contains(overlap, c.generator(b)[t])) rel_b.push_back(static_cast<int>(t));
            double gap = max_abs_diff(marginalize(marginals[a], rel_a),
                                      marginalize(marginals[b], rel_b));
            if (gap > consistency_tol * scale)
                throw std::invalid_argument("max_entropy_extension: inconsistent marginals");
        }

    VarSet all = c.support();
    Schema joint = c.schema().sub_schema(all);

    // positions of each generator / separator inside the joint sub-schema
    auto relativize = [&](const VarSet& s) {
        VarSet rel;
        for (std::size_t t = 0; t < all.size(); ++t)
            if (vset::contains(s, all[t])) rel.push_back(static_cast<int>(t));
        return rel;
    };

    std::vector<double> vals(joint.cell_count(), 1.0);
    std::vector<bool> zero(joint.cell_count(), false);

    for (int j = 0; j < c.size(); ++j) {
        auto map = detail::marginal_index_map(joint, relativize(c.generator(j)));
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double f = marginals[j][map[i]];
            if (f == 0.0) zero[i] = true;
            else vals[i] *= f;
        }
    }
    for (std::size_t k = 0; k < ps.separators.size(); ++k) {
        // the separator marginal comes from the witness generator's table
        int witness = -1;
        for (std::size_t w = 0; w < k + 1; ++w)
            if (vset::is_subset(ps.separators[k], c.generator(ps.order[w]))) {
                witness = ps.order[w];
                break;
            }
        if (witness < 0) throw std::invalid_argument("max_entropy_extension: bad perfect sequence");
        VarSet rel_in_gen;
        const VarSet& gen = c.generator(witness);
        for (std::size_t t = 0; t < gen.size(); ++t)
            if (vset::contains(ps.separators[k], gen[t])) rel_in_gen.push_back(static_cast<int>(t));
        DenseTable sep = marginalize(marginals[witness], rel_in_gen);
        auto map = detail::marginal_index_map(joint, relativize(ps.separators[k]));
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double f = sep[map[i]];
            if (f == 0.0) {
                if (!zero[i])
                    throw std::invalid_argument(
                        "max_entropy_extension: zero separator factor with nonzero numerator");
            } else {
                vals[i] /= f;
            }
        }
    }
    for (std::size_t i = 0; i < vals.size(); ++i)
        if (zero[i]) vals[i] = 0.0;
    return DenseTable(std::move(joint), std::move(vals));
}

/// Extension of the marginals of a full table q onto the generators of
/// a decomposable class (the q_j / r_j of the scaling updates).
inline DenseTable max_entropy_extension_of(const DenseTable& q, const GeneratingClass& c,
                                           const PerfectSequence& ps) {
    std::vector<DenseTable> marg;
    marg.reserve(c.size());
    VarSet all = c.support();
    DenseTable base = marginalize(q, all);
    Schema joint = base.schema();
    for (int j = 0; j < c.size(); ++j) {
        VarSet rel;
        for (std::size_t t = 0; t < all.size(); ++t)
            if (vset::contains(c.generator(j), all[t])) rel.push_back(static_cast<int>(t));
        marg.push_back(marginalize(base, rel));
    }
    return max_entropy_extension(c, marg, ps);
}

}  // namespace ipscale
