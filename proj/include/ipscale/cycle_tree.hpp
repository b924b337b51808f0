#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ipscale/engines.hpp"

namespace ipscale {

// ============================================================================
// Cycle models and their triangulation
// ============================================================================

/// A J-way cycle model: variables in schema order form the cycle, with
/// generators {1,2},{2,3},...,{J-1,J},{J,1} (1-based vertex names).
struct CycleSpec {
    Schema schema;

    explicit CycleSpec(Schema s) : schema(std::move(s)) {
        if (schema.arity() < 4) throw std::invalid_argument("CycleSpec: need at least 4 variables");
        for (int k = 0; k < schema.arity(); ++k)
            if (schema.levels(k) < 2)
                throw std::invalid_argument("CycleSpec: every variable needs >= 2 levels");
    }

    CycleSpec(int j_way, int levels)
        : CycleSpec([&] {
              std::vector<Schema::Variable> vs;
              for (int k = 1; k <= j_way; ++k)
                  vs.push_back({"v" + std::to_string(k), levels});
              return Schema(std::move(vs));
          }()) {}

    int j_way() const { return schema.arity(); }

    GeneratingClass model() const {
        std::vector<VarSet> gens;
        for (int k = 0; k + 1 < j_way(); ++k) gens.push_back({k, k + 1});
        gens.push_back({0, j_way() - 1});
        return GeneratingClass(schema, std::move(gens));
    }
};

/// Chain junction tree of the cycle triangulated by fanning edges out
/// of vertex 1: cliques {1,j-1,j} for j = 3..J, separators {1,j} for
/// j = 3..J-1.  The two directed versions sink at the last clique and
/// at the split clique j_prime.
struct TriangulatedStructure {
    Schema schema;
    std::vector<VarSet> cliques;     // cliques[j-3] = positions {0, j-2, j-1}
    std::vector<VarSet> separators;  // separators[j-3] = positions {0, j-1}
    int j_prime = 0;                 // 1-based split vertex (3 <= j_prime <= J-1)
};

/// Triangulate a J-way cycle.  The default split point is
/// floor(J/2) + 1; an override may pick any interior clique.
inline TriangulatedStructure triangulate_cycle(const CycleSpec& spec, int j_prime_override = 0) {
    const int j_way = spec.j_way();
    TriangulatedStructure ts;
    ts.schema = spec.schema;
    for (int j = 3; j <= j_way; ++j) ts.cliques.push_back({0, j - 2, j - 1});
    for (int j = 3; j <= j_way - 1; ++j) ts.separators.push_back({0, j - 1});
    ts.j_prime = j_prime_override == 0 ? j_way / 2 + 1 : j_prime_override;
    if (ts.j_prime < 3 || ts.j_prime > j_way - 1)
        throw std::invalid_argument("triangulate_cycle: split vertex out of range");
    return ts;
}

// ============================================================================
// Edge marginals and clique potentials
// ============================================================================

/// The fixed target marginals of a cycle fit: one table per cycle edge.
/// edge[k] for k = 2..J is the {k-1,k} marginal; long_edge is {1,J}.
struct CycleEdges {
    Schema schema;
    std::vector<DenseTable> edge;  // index by paper's j = 2..J (slots 0,1 unused)
    DenseTable long_edge;

    const DenseTable& single(int vertex) const { return singles_.at(vertex); }

    void derive_singles(double consistency_tol = 1e-10) {
        const int j_way = schema.arity();
        singles_.assign(j_way + 1, DenseTable());
        auto from = [&](const DenseTable& pair, int rel) { return marginalize(pair, {rel}); };
        // vertex v sits in edges {v-1,v}, {v,v+1} and possibly the long edge
        for (int v = 1; v <= j_way; ++v) {
            DenseTable got;
            if (v == 1) got = from(edge[2], 0);
            else got = from(edge[v], 1);
            // cross-check against the other incident edge
            DenseTable other;
            if (v == j_way) other = from(long_edge, 1);
            else if (v == 1) other = from(long_edge, 0);
            else other = from(edge[v + 1], 0);
            if (max_abs_diff(got, other) > consistency_tol)
                throw std::invalid_argument("cycle edges: inconsistent shared marginals");
            singles_[v] = std::move(got);
        }
    }

private:
    std::vector<DenseTable> singles_;
};

inline CycleEdges cycle_edges_from_table(const DenseTable& r, const CycleSpec& spec) {
    if (r.schema() != spec.schema)
        throw std::invalid_argument("cycle_edges_from_table: schema mismatch");
    CycleEdges ce;
    ce.schema = spec.schema;
    ce.edge.assign(spec.j_way() + 1, DenseTable());
    for (int j = 2; j <= spec.j_way(); ++j) ce.edge[j] = marginalize(r, {j - 2, j - 1});
    ce.long_edge = marginalize(r, {0, spec.j_way() - 1});
    ce.derive_singles();
    return ce;
}

/// Clique potentials and chain messages of the propagation scheme.
/// Potentials are kept unnormalized; the two chain-end messages are the
/// fixed data marginals and are never written.
struct PotentialSet {
    TriangulatedStructure ts;
    CycleEdges targets;
    std::vector<DenseTable> clique;  // clique[j-3] over {1,j-1,j}
    std::vector<DenseTable> msg;     // msg[j] over {1,j}, valid j = 2..J-1
    std::uint64_t cell_writes = 0;
    int updates = 0;

    int j_way() const { return ts.schema.arity(); }
    const DenseTable& pot(int j) const { return clique.at(j - 3); }
    DenseTable& pot(int j) { return clique.at(j - 3); }
};

/// Uniform clique potentials (the implied joint is the uniform
/// distribution); messages start at the fixed chain-end marginals.
inline PotentialSet init_potentials(const TriangulatedStructure& ts, CycleEdges targets) {
    if (targets.schema != ts.schema) throw std::invalid_argument("init_potentials: schema mismatch");
    PotentialSet ps;
    ps.ts = ts;
    ps.targets = std::move(targets);
    const int j_way = ts.schema.arity();
    for (int j = 3; j <= j_way; ++j)
        ps.clique.push_back(DenseTable::uniform(ts.schema.sub_schema(ts.cliques[j - 3])));
    ps.msg.assign(j_way, DenseTable());
    ps.msg[2] = ps.targets.edge[2];  // {1,2} marginal, fixed for all steps
    for (int j = 3; j <= j_way - 1; ++j)
        ps.msg[j] = DenseTable::uniform(ts.schema.sub_schema({0, j - 1}));
    return ps;
}

namespace detail {

/// One clique update: pot *= (msg_in * edge / single) / (own-marginal
/// correction), all factors indexed through the clique's three
/// variables.  rel_* give each factor's variable slots in the clique.
inline void scale_clique(DenseTable& pot, const DenseTable& msg_in, const VarSet& rel_msg,
                         const DenseTable& edge, const VarSet& rel_edge,
                         const DenseTable& single, const VarSet& rel_single,
                         std::uint64_t* cell_writes, int* updates) {
    const Schema& cs = pot.schema();
    auto m_msg = marginal_index_map(cs, rel_msg);
    auto m_edge = marginal_index_map(cs, rel_edge);
    auto m_single = marginal_index_map(cs, rel_single);

    DenseTable q_msg = marginalize(pot, rel_msg);
    DenseTable q_edge = marginalize(pot, rel_edge);
    DenseTable q_single = marginalize(pot, rel_single);

    std::vector<double> out(pot.size());
    for (std::size_t i = 0; i < pot.size(); ++i) {
        double tnum = msg_in[m_msg[i]] * edge[m_edge[i]];
        if (tnum == 0.0) { out[i] = 0.0; continue; }
        double tden = single[m_single[i]];
        if (tden == 0.0)
            throw std::invalid_argument("cycle propagation: zero singleton under positive edge");
        double qden = q_msg[m_msg[i]] * q_edge[m_edge[i]];
        if (qden == 0.0)
            throw SupportError("cycle propagation: zero potential marginal against positive target");
        out[i] = pot[i] * (tnum / tden) * (q_single[m_single[i]] / qden);
    }
    pot = DenseTable(cs, std::move(out));
    *cell_writes += pot.size();
    ++*updates;
}

}  // namespace detail

/// Forward sweep to the last clique: imposes every cycle edge except
/// {1,J} (the first submodel of the pair), passing fresh {1,j}
/// marginals up the chain.
inline void propagate_forward(PotentialSet& ps) {
    const int j_way = ps.j_way();
    for (int j = 3; j <= j_way; ++j) {
        detail::scale_clique(ps.pot(j), ps.msg[j - 1], {0, 1},  // {1,j-1}
                             ps.targets.edge[j], {1, 2},        // {j-1,j}
                             ps.targets.single(j - 1), {1},     // {j-1}
                             &ps.cell_writes, &ps.updates);
        if (j < j_way) {
            ps.msg[j] = marginalize(ps.pot(j), {0, 2});  // sum out j-1
            ps.cell_writes += ps.msg[j].size();
        }
    }
}

/// Two sweeps meeting at the split clique: imposes every cycle edge
/// except {j_prime-1, j_prime} (the second submodel), the backward leg
/// starting from the fixed {1,J} marginal.
inline void propagate_bidirectional(PotentialSet& ps) {
    const int j_way = ps.j_way();
    const int jp = ps.ts.j_prime;
    for (int j = 3; j <= jp - 1; ++j) {
        detail::scale_clique(ps.pot(j), ps.msg[j - 1], {0, 1}, ps.targets.edge[j], {1, 2},
                             ps.targets.single(j - 1), {1}, &ps.cell_writes, &ps.updates);
        ps.msg[j] = marginalize(ps.pot(j), {0, 2});
        ps.cell_writes += ps.msg[j].size();
    }
    for (int j = j_way; j >= jp + 1; --j) {
        const DenseTable& incoming = j == j_way ? ps.targets.long_edge : ps.msg[j];
        detail::scale_clique(ps.pot(j), incoming, {0, 2},       // {1,j}
                             ps.targets.edge[j], {1, 2},        // {j-1,j}
                             ps.targets.single(j), {2},         // {j}
                             &ps.cell_writes, &ps.updates);
        ps.msg[j - 1] = marginalize(ps.pot(j), {0, 1});  // sum out j
        ps.cell_writes += ps.msg[j - 1].size();
    }
    detail::scale_clique(ps.pot(jp), ps.msg[jp - 1], {0, 1},    // {1,j'-1}
                         ps.msg[jp], {0, 2},                    // {1,j'}
                         ps.targets.single(1), {0},             // {1}
                         &ps.cell_writes, &ps.updates);
}

/// Materialize the joint distribution the potentials imply: the
/// product of clique potentials over the chain's separator marginals,
/// each separator marginal read from its lower clique, then normalized.
inline DenseTable implied_joint(const PotentialSet& ps) {
    const Schema& schema = ps.ts.schema;
    const int j_way = schema.arity();
    std::vector<double> vals(schema.cell_count(), 1.0);
    std::vector<bool> zero(vals.size(), false);

    for (int j = 3; j <= j_way; ++j) {
        auto map = detail::marginal_index_map(schema, ps.ts.cliques[j - 3]);
        const DenseTable& pot = ps.pot(j);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double f = pot[map[i]];
            if (f == 0.0) zero[i] = true;
            else vals[i] *= f;
        }
    }
    for (int j = 3; j <= j_way - 1; ++j) {
        DenseTable sep = marginalize(ps.pot(j), {0, 2});
        auto map = detail::marginal_index_map(schema, ps.ts.separators[j - 3]);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double f = sep[map[i]];
            if (f == 0.0) {
                if (!zero[i])
                    throw std::logic_error("implied_joint: zero separator with nonzero numerator");
            } else {
                vals[i] /= f;
            }
        }
    }
    for (std::size_t i = 0; i < vals.size(); ++i)
        if (zero[i]) vals[i] = 0.0;
    return normalize(DenseTable(schema, std::move(vals)));
}

struct CycleFitReport {
    FitReport fit;            // p_hat is the implied joint when materialized
    PotentialSet potentials;  // final clique potentials and messages
};

/// Alternate the two directed propagation sweeps until the summed L1
/// change of the clique potentials over one full step drops to the
/// tolerance (one step = one forward + one bidirectional pass).
inline CycleFitReport fit_cycle_tree(const CycleSpec& spec, const CycleEdges& edges,
                                     const FitConfig& cfg, int j_prime_override = 0,
                                     bool materialize = true) {
    cfg.validate();
    TriangulatedStructure ts = triangulate_cycle(spec, j_prime_override);
    PotentialSet ps = init_potentials(ts, edges);

    CycleFitReport rep;
    const auto t0 = std::chrono::steady_clock::now();
    auto settle = [&rep, &ps, &cfg](int step, const std::vector<DenseTable>& snapshot) {
        double change = 0.0;
        double mass = 0.0;
        for (std::size_t k = 0; k < ps.clique.size(); ++k) {
            change += l1_diff(ps.clique[k], snapshot[k]);
            mass += ps.clique[k].total();
        }
        rep.fit.cycles_used = step;
        if (cfg.record_trace) {
            TraceRow row;
            row.cycle = step;
            row.criterion = change;
            row.mass = mass;
            rep.fit.trace.push_back(std::move(row));
        }
        if (change <= cfg.tolerance) rep.fit.converged = true;
    };
    if (cfg.check_per_update) {
        // benchmark accounting: every directed sweep is one step
        for (int sweep = 1; sweep <= cfg.max_cycles && !rep.fit.converged; ++sweep) {
            std::vector<DenseTable> snapshot = ps.clique;
            if (sweep % 2 == 1) propagate_forward(ps);
            else propagate_bidirectional(ps);
            settle(sweep, snapshot);
        }
    } else {
        for (int step = 1; step <= cfg.max_cycles && !rep.fit.converged; ++step) {
            std::vector<DenseTable> snapshot = ps.clique;
            propagate_forward(ps);
            propagate_bidirectional(ps);
            settle(step, snapshot);
        }
    }
    rep.fit.wall_time_ns =
        std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0)
            .count();
    rep.fit.cell_writes = ps.cell_writes;
    rep.fit.updates = ps.updates;
    if (materialize) rep.fit.p_hat = implied_joint(ps);
    rep.potentials = std::move(ps);
    return rep;
}

inline CycleFitReport fit_cycle_tree(const CycleSpec& spec, const DenseTable& r,
                                     const FitConfig& cfg, int j_prime_override = 0,
                                     bool materialize = true) {
    return fit_cycle_tree(spec, cycle_edges_from_table(r, spec), cfg, j_prime_override,
                          materialize);
}

/// If the model is a J-way cycle covering its schema, the variable
/// positions in cycle order (starting at position 0, deterministic
/// direction); otherwise nullopt.
inline std::optional<std::vector<int>> cycle_order_of(const GeneratingClass& model) {
    const int arity = model.schema().arity();
    if (arity < 4 || model.size() != arity) return std::nullopt;
    std::vector<std::vector<int>> adj(arity);
    for (const auto& gen : model.generators()) {
        if (gen.size() != 2) return std::nullopt;
        adj[gen[0]].push_back(gen[1]);
        adj[gen[1]].push_back(gen[0]);
    }
    for (const auto& nb : adj)
        if (nb.size() != 2) return std::nullopt;
    std::vector<int> order{0, std::min(adj[0][0], adj[0][1])};
    while (static_cast<int>(order.size()) < arity) {
        int cur = order.back(), prev = order[order.size() - 2];
        int nxt = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
        if (nxt == 0) return std::nullopt;  // short cycle, not covering
        order.push_back(nxt);
    }
    int last = order.back();
    if (adj[last][0] != 0 && adj[last][1] != 0) return std::nullopt;
    return order;
}

/// Table with variables rearranged into the given position order.
inline DenseTable reorder_variables(const DenseTable& t, const std::vector<int>& order) {
    std::vector<Schema::Variable> vars;
    for (int p : order) vars.push_back(t.schema().variables().at(p));
    Schema ns(std::move(vars));
    std::vector<double> vals(ns.cell_count());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CellIndex old = cell_at(t.schema(), i);
        CellIndex neu;
        neu.digits.resize(order.size());
        for (std::size_t k = 0; k < order.size(); ++k) neu.digits[k] = old.digits[order[k]];
        vals[cell_offset(ns, neu)] = t[i];
    }
    return DenseTable(std::move(ns), std::move(vals));
}

}  // namespace ipscale
