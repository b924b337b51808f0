#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace ipscale {

/// Sorted, duplicate-free set of variable positions in a Schema.
using VarSet = std::vector<int>;

namespace vset {

inline VarSet make(std::vector<int> positions) {
    std::sort(positions.begin(), positions.end());
    positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
    return positions;
}

inline bool is_subset(const VarSet& a, const VarSet& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

inline VarSet unite(const VarSet& a, const VarSet& b) {
    VarSet out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline VarSet intersect(const VarSet& a, const VarSet& b) {
    VarSet out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

inline bool contains(const VarSet& a, int v) {
    return std::binary_search(a.begin(), a.end(), v);
}

}  // namespace vset

/// Ordered list of named variables with their level counts.  A schema
/// defines the cell lattice of a table: a cell is a tuple of 0-based
/// level indices, one per variable, stored flat in mixed-radix order
/// with the last variable varying fastest.
class Schema {
public:
    struct Variable {
        std::string name;
        int levels = 0;
        bool operator==(const Variable&) const = default;
    };

    Schema() = default;

    explicit Schema(std::vector<Variable> vars) : vars_(std::move(vars)) {
        std::unordered_set<std::string> seen;
        unsigned long long cells = 1;
        for (const auto& v : vars_) {
            if (v.name.empty()) throw std::invalid_argument("Schema: empty variable name");
            if (!seen.insert(v.name).second)
                throw std::invalid_argument("Schema: duplicate variable name '" + v.name + "'");
            if (v.levels < 1) throw std::invalid_argument("Schema: level count must be >= 1");
            cells *= static_cast<unsigned long long>(v.levels);
            if (cells > (1ull << 31))
                throw std::invalid_argument("Schema: cell count exceeds supported range");
        }
        cell_count_ = static_cast<std::size_t>(cells);
    }

    int arity() const { return static_cast<int>(vars_.size()); }
    const std::vector<Variable>& variables() const { return vars_; }
    const std::string& name(int k) const { return vars_.at(k).name; }
    int levels(int k) const { return vars_.at(k).levels; }
    std::size_t cell_count() const { return cell_count_; }

    /// Strides of the flat layout (last variable fastest).
    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> s(vars_.size(), 1);
        for (int k = arity() - 2; k >= 0; --k)
            s[k] = s[k + 1] * static_cast<std::size_t>(vars_[k + 1].levels);
        return s;
    }

    int index_of(const std::string& nm) const {
        for (int k = 0; k < arity(); ++k)
            if (vars_[k].name == nm) return k;
        throw std::invalid_argument("Schema: unknown variable name '" + nm + "'");
    }

    /// Positions of the given variable names, as a VarSet.
    VarSet subset(const std::vector<std::string>& names) const {
        std::vector<int> pos;
        pos.reserve(names.size());
        for (const auto& nm : names) pos.push_back(index_of(nm));
        VarSet out = vset::make(std::move(pos));
        return out;
    }

    /// Schema restricted to the given positions (original relative order).
    Schema sub_schema(const VarSet& keep) const {
        std::vector<Variable> vs;
        vs.reserve(keep.size());
        for (int k : keep) vs.push_back(vars_.at(k));
        return Schema(std::move(vs));
    }

    bool operator==(const Schema&) const = default;

private:
    std::vector<Variable> vars_;
    std::size_t cell_count_ = 1;
};

/// A cell of the lattice: one 0-based level index per schema variable.
struct CellIndex {
    std::vector<int> digits;
};

inline void validate_cell(const Schema& s, const CellIndex& c) {
    if (static_cast<int>(c.digits.size()) != s.arity())
        throw std::invalid_argument("CellIndex: arity mismatch");
    for (int k = 0; k < s.arity(); ++k)
        if (c.digits[k] < 0 || c.digits[k] >= s.levels(k))
            throw std::invalid_argument("CellIndex: level index out of range");
}

inline std::size_t cell_offset(const Schema& s, const CellIndex& c) {
    validate_cell(s, c);
    std::size_t off = 0;
    auto st = s.strides();
    for (int k = 0; k < s.arity(); ++k) off += st[k] * static_cast<std::size_t>(c.digits[k]);
    return off;
}

inline CellIndex cell_at(const Schema& s, std::size_t offset) {
    CellIndex c;
    c.digits.resize(s.arity());
    auto st = s.strides();
    for (int k = 0; k < s.arity(); ++k) {
        c.digits[k] = static_cast<int>(offset / st[k]);
        offset %= st[k];
    }
    return c;
}

}  // namespace ipscale
