#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ipscale/schema.hpp"

namespace ipscale {

/// Dense nonnegative real array over the cells of a Schema.  Holds
/// counts, relative frequencies or fitting iterates; immutable in all
/// library operations (every operation returns a fresh table).
class DenseTable {
public:
    DenseTable() = default;

    DenseTable(Schema schema, std::vector<double> values)
        : schema_(std::move(schema)), values_(std::move(values)) {
        if (values_.size() != schema_.cell_count())
            throw std::invalid_argument("DenseTable: value length does not match schema");
        for (double v : values_) {
            if (!std::isfinite(v) || v < 0.0)
                throw std::invalid_argument("DenseTable: values must be finite and >= 0");
        }
    }

    static DenseTable constant(const Schema& schema, double value) {
        return DenseTable(schema, std::vector<double>(schema.cell_count(), value));
    }

    /// Uniform probability table, 1/|cells| everywhere.
    static DenseTable uniform(const Schema& schema) {
        return constant(schema, 1.0 / static_cast<double>(schema.cell_count()));
    }

    const Schema& schema() const { return schema_; }
    std::size_t size() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    double at_cell(const CellIndex& c) const { return values_[cell_offset(schema_, c)]; }

    double total() const {
        double t = 0.0;
        for (double v : values_) t += v;
        return t;
    }

    bool operator==(const DenseTable&) const = default;

private:
    Schema schema_;
    std::vector<double> values_;
};

namespace detail {

/// For each flat cell of `schema`, the flat index of its marginal cell
/// in sub_schema(keep).  Built with a mixed-radix odometer, no divisions.
inline std::vector<std::uint32_t> marginal_index_map(const Schema& schema, const VarSet& keep) {
    const std::size_t n = schema.cell_count();
    std::vector<std::uint32_t> map(n);
    const int d = schema.arity();
    Schema sub = schema.sub_schema(keep);
    auto sub_strides = sub.strides();

    // stride of each full-schema variable inside the marginal (0 if dropped)
    std::vector<std::size_t> contrib(d, 0);
    for (std::size_t r = 0; r < keep.size(); ++r) contrib[keep[r]] = sub_strides[r];

    std::vector<int> digit(d, 0);
    std::size_t out = 0;
    for (std::size_t i = 0; i < n; ++i) {
        map[i] = static_cast<std::uint32_t>(out);
        for (int k = d - 1; k >= 0; --k) {
            if (++digit[k] < schema.levels(k)) {
                out += contrib[k];
                break;
            }
            digit[k] = 0;
            out -= contrib[k] * static_cast<std::size_t>(schema.levels(k) - 1);
        }
    }
    return map;
}

}  // namespace detail

/// Relative-frequency table r(i) = n(i)/n from raw counts.
inline DenseTable from_counts(const Schema& schema, std::span<const long long> counts) {
    if (counts.size() != schema.cell_count())
        throw std::invalid_argument("from_counts: count length does not match schema");
    long long n = 0;
    for (long long c : counts) {
        if (c < 0) throw std::invalid_argument("from_counts: negative count");
        n += c;
    }
    if (n == 0) throw std::invalid_argument("from_counts: all-zero counts");
    std::vector<double> vals(counts.size());
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < counts.size(); ++i)
        vals[i] = static_cast<double>(counts[i]) * inv;
    return DenseTable(schema, std::move(vals));
}

/// Marginal of t on the variables in `keep` (original relative order,
/// empty set allowed: yields the scalar table holding the total).
inline DenseTable marginalize(const DenseTable& t, const VarSet& keep) {
    for (int k : keep)
        if (k < 0 || k >= t.schema().arity())
            throw std::invalid_argument("marginalize: variable position out of range");
    Schema sub = t.schema().sub_schema(keep);
    std::vector<double> out(sub.cell_count(), 0.0);
    auto map = detail::marginal_index_map(t.schema(), keep);
    for (std::size_t i = 0; i < t.size(); ++i) out[map[i]] += t[i];
    return DenseTable(std::move(sub), std::move(out));
}

inline DenseTable marginalize_names(const DenseTable& t, const std::vector<std::string>& names) {
    return marginalize(t, t.schema().subset(names));
}

/// Rescale to total mass 1.
inline DenseTable normalize(const DenseTable& t) {
    const double tot = t.total();
    if (tot <= 0.0) throw std::invalid_argument("normalize: zero total");
    std::vector<double> vals(t.values());
    for (double& v : vals) v /= tot;
    return DenseTable(t.schema(), std::move(vals));
}

inline bool is_normalized(const DenseTable& t, double tol = 1e-8) {
    return std::abs(t.total() - 1.0) <= tol;
}

/// Kullback-Leibler divergence I(p:q) in nats, with 0 log 0 = 0 and
/// +infinity whenever p(i) > 0 while q(i) = 0.
inline double kl_divergence(const DenseTable& p, const DenseTable& q) {
    if (p.schema() != q.schema()) throw std::invalid_argument("kl_divergence: schema mismatch");
    if (!is_normalized(p) || !is_normalized(q))
        throw std::invalid_argument("kl_divergence: inputs must be normalized");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return kl;
}

inline double max_abs_diff(const DenseTable& a, const DenseTable& b) {
    if (a.schema() != b.schema()) throw std::invalid_argument("max_abs_diff: schema mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l1_diff(const DenseTable& a, const DenseTable& b) {
    if (a.schema() != b.schema()) throw std::invalid_argument("l1_diff: schema mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m += std::abs(a[i] - b[i]);
    return m;
}

}  // namespace ipscale
