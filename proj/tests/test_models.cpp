#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "test_util.hpp"

using namespace ipscale;
using testutil::make_schema;

namespace {

// exhaustive all-orderings oracle for the running intersection property
DecompStatus rip_oracle(const GeneratingClass& c) {
    const int m = c.size();
    std::vector<int> perm(m);
    for (int j = 0; j < m; ++j) perm[j] = j;
    bool any_rip = false, any_connected = false;
    do {
        bool rip = true, connected = true;
        VarSet seen = c.generator(perm[0]);
        for (int j = 1; j < m && rip; ++j) {
            VarSet s = vset::intersect(c.generator(perm[j]), seen);
            if (s.empty()) connected = false;
            bool witnessed = false;
            for (int k = 0; k < j && !witnessed; ++k)
                witnessed = vset::is_subset(s, c.generator(perm[k]));
            rip = rip && witnessed;
            seen = vset::unite(seen, c.generator(perm[j]));
        }
        any_rip = any_rip || rip;
        any_connected = any_connected || (rip && connected);
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (any_connected) return DecompStatus::Decomposable;
    if (any_rip) return DecompStatus::Disconnected;
    return DecompStatus::NotDecomposable;
}

// separator multisets of every connected perfect sequence of c
std::set<std::multiset<VarSet>> all_separator_multisets(const GeneratingClass& c) {
    const int m = c.size();
    std::vector<int> perm(m);
    for (int j = 0; j < m; ++j) perm[j] = j;
    std::set<std::multiset<VarSet>> out;
    do {
        bool ok = true;
        std::multiset<VarSet> seps;
        VarSet seen = c.generator(perm[0]);
        for (int j = 1; j < m && ok; ++j) {
            VarSet s = vset::intersect(c.generator(perm[j]), seen);
            bool witnessed = !s.empty();
            if (witnessed) {
                witnessed = false;
                for (int k = 0; k < j && !witnessed; ++k)
                    witnessed = vset::is_subset(s, c.generator(perm[k]));
            }
            ok = witnessed;
            seps.insert(s);
            seen = vset::unite(seen, c.generator(perm[j]));
        }
        if (ok) out.insert(seps);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return out;
}

GeneratingClass four_cycle() {
    Schema s = make_schema({{"H", 2}, {"J", 2}, {"K", 2}, {"L", 2}});
    return GeneratingClass(s, {{0, 1}, {1, 2}, {2, 3}, {0, 3}});
}

}  // namespace

TEST_CASE("is_submodel") {
    GeneratingClass cyc = four_cycle();
    GeneratingClass chain(cyc.schema(), {{0, 1}, {1, 2}, {2, 3}});
    CHECK(is_submodel(chain, cyc));
    CHECK(is_submodel(cyc, cyc));
    GeneratingClass diag(cyc.schema(), {{0, 2}});
    CHECK_FALSE(is_submodel(diag, cyc));
}

TEST_CASE("reduce drops dominated generators") {
    auto out = reduce({{0, 1}, {1}, {1, 2}, {0, 1}});
    REQUIRE(out.size() == 2);
    CHECK(out[0] == VarSet{0, 1});
    CHECK(out[1] == VarSet{1, 2});
    Schema s = make_schema({{"A", 2}, {"B", 2}});
    CHECK_THROWS_AS(GeneratingClass(s, {{0, 1}, {1}}), std::invalid_argument);
}

TEST_CASE("find_perfect_sequence on the 4-cycle fails") {
    auto d = find_perfect_sequence(four_cycle());
    CHECK(d.status == DecompStatus::NotDecomposable);
}

TEST_CASE("single generator is trivially decomposable") {
    Schema s = make_schema({{"H", 2}, {"J", 2}, {"K", 2}});
    GeneratingClass c(s, {{0, 1, 2}});
    auto d = find_perfect_sequence(c);
    REQUIRE(d.ok());
    CHECK(d.sequence.order == std::vector<int>{0});
    CHECK(d.sequence.separators.empty());
}

TEST_CASE("chain 12-23-34 yields the natural sequence") {
    Schema s = make_schema({{"v1", 2}, {"v2", 2}, {"v3", 2}, {"v4", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}, {2, 3}});
    auto d = find_perfect_sequence(c);
    REQUIRE(d.ok());
    CHECK(d.sequence.order == std::vector<int>{0, 1, 2});
    REQUIRE(d.sequence.separators.size() == 2);
    CHECK(d.sequence.separators[0] == VarSet{1});
    CHECK(d.sequence.separators[1] == VarSet{2});
}

TEST_CASE("disconnected families are rejected") {
    Schema s = make_schema({{"A", 2}, {"B", 2}, {"C", 2}, {"D", 2}});
    GeneratingClass c(s, {{0, 1}, {2, 3}});
    CHECK(find_perfect_sequence(c).status == DecompStatus::Disconnected);
}

TEST_CASE("find_perfect_sequence agrees with the exhaustive oracle") {
    auto g = testutil::rng(2024);
    Schema s = make_schema({{"a", 2}, {"b", 2}, {"c", 2}, {"d", 2}, {"e", 2}, {"f", 2}});
    std::uniform_int_distribution<int> nmemb(1, 5), sz(1, 3), var(0, 5);
    int checked = 0;
    for (int trial = 0; trial < 400; ++trial) {
        std::vector<VarSet> gens;
        int m = nmemb(g);
        for (int j = 0; j < m; ++j) {
            VarSet gen;
            int k = sz(g);
            for (int t = 0; t < k; ++t) gen.push_back(var(g));
            gens.push_back(vset::make(gen));
        }
        gens = reduce(std::move(gens));
        if (gens.empty()) continue;
        GeneratingClass c(s, gens);
        auto mine = find_perfect_sequence(c);
        auto want = rip_oracle(c);
        INFO("trial " << trial);
        CHECK(mine.status == want);
        if (mine.ok()) {
            // returned sequence must itself witness connected RIP
            VarSet seen = c.generator(mine.sequence.order[0]);
            for (std::size_t j = 1; j < mine.sequence.order.size(); ++j) {
                VarSet sep = vset::intersect(c.generator(mine.sequence.order[j]), seen);
                CHECK(sep == mine.sequence.separators[j - 1]);
                CHECK_FALSE(sep.empty());
                bool witnessed = false;
                for (std::size_t k = 0; k < j && !witnessed; ++k)
                    witnessed = vset::is_subset(sep, c.generator(mine.sequence.order[k]));
                CHECK(witnessed);
                seen = vset::unite(seen, c.generator(mine.sequence.order[j]));
            }
        }
        ++checked;
    }
    CHECK(checked > 300);
}

TEST_CASE("separator multiset does not depend on the ordering") {
    auto g = testutil::rng(555);
    Schema s = make_schema({{"a", 2}, {"b", 2}, {"c", 2}, {"d", 2}, {"e", 2}});
    std::uniform_int_distribution<int> nmemb(2, 4), sz(1, 3), var(0, 4);
    int seen_decomposable = 0;
    for (int trial = 0; trial < 300 && seen_decomposable < 60; ++trial) {
        std::vector<VarSet> gens;
        int m = nmemb(g);
        for (int j = 0; j < m; ++j) {
            VarSet gen;
            int k = sz(g);
            for (int t = 0; t < k; ++t) gen.push_back(var(g));
            gens.push_back(vset::make(gen));
        }
        gens = reduce(std::move(gens));
        if (gens.size() < 2) continue;
        GeneratingClass c(s, gens);
        auto mine = find_perfect_sequence(c);
        if (!mine.ok()) continue;
        auto multisets = all_separator_multisets(c);
        REQUIRE(multisets.size() == 1);
        std::multiset<VarSet> got(mine.sequence.separators.begin(),
                                  mine.sequence.separators.end());
        CHECK(got == *multisets.begin());
        ++seen_decomposable;
    }
    CHECK(seen_decomposable >= 30);
}

TEST_CASE("greedy_spanning on the 4-cycle") {
    GeneratingClass cyc = four_cycle();
    SpanningFamily fam = greedy_spanning(cyc);
    REQUIRE(fam.members.size() == 2);
    CHECK(fam.members[0].size() == 3);
    CHECK(fam.members[1].size() == 3);
    // the start-at-{H,J} candidate is the chain HJ-JK-KL
    std::vector<VarSet> want{{0, 1}, {1, 2}, {2, 3}};
    CHECK(fam.members[0].generators() == want);
    CHECK(validate_spanning(cyc, fam).pass);
}

TEST_CASE("greedy_spanning keeps a decomposable model whole") {
    Schema s = make_schema({{"v1", 2}, {"v2", 2}, {"v3", 2}, {"v4", 2}});
    GeneratingClass chain(s, {{0, 1}, {1, 2}, {2, 3}});
    SpanningFamily fam = greedy_spanning(chain);
    REQUIRE(fam.members.size() == 1);
    CHECK(fam.members[0].generators() == chain.generators());
    CHECK(validate_spanning(chain, fam).pass);
}

TEST_CASE("greedy_spanning on the 5-cycle covers with two members") {
    Schema s = testutil::cycle_schema(5, 2);
    GeneratingClass cyc = testutil::cycle_model(s);
    SpanningFamily fam = greedy_spanning(cyc);
    REQUIRE(fam.members.size() == 2);
    // a 5-cycle minus one edge is a 4-generator chain
    CHECK(fam.members[0].size() == 4);
    CHECK(fam.members[1].size() == 4);
    CHECK(validate_spanning(cyc, fam).pass);
}

TEST_CASE("greedy_spanning covers the 8-cycle with decomposable members") {
    Schema s = testutil::cycle_schema(8, 2);
    GeneratingClass cyc = testutil::cycle_model(s);
    SpanningFamily fam = greedy_spanning(cyc);
    auto rep = validate_spanning(cyc, fam);
    CHECK(rep.pass);
    CHECK(rep.uncovered.empty());
    for (const auto& member : fam.members) CHECK(find_perfect_sequence(member).ok());
}

TEST_CASE("greedy_spanning output always validates") {
    auto g = testutil::rng(77);
    Schema s = make_schema({{"a", 2}, {"b", 2}, {"c", 2}, {"d", 2}, {"e", 2}});
    std::uniform_int_distribution<int> nmemb(1, 5), sz(1, 3), var(0, 4);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<VarSet> gens;
        int m = nmemb(g);
        for (int j = 0; j < m; ++j) {
            VarSet gen;
            int k = sz(g);
            for (int t = 0; t < k; ++t) gen.push_back(var(g));
            gens.push_back(vset::make(gen));
        }
        gens = reduce(std::move(gens));
        if (gens.empty()) continue;
        GeneratingClass c(s, gens);
        SpanningFamily fam = greedy_spanning(c);
        INFO("trial " << trial);
        CHECK(validate_spanning(c, fam).pass);
        ++checked;
    }
    CHECK(checked > 150);
}

TEST_CASE("validate_spanning verdicts") {
    Schema s = testutil::cycle_schema(5, 2);
    GeneratingClass cyc = testutil::cycle_model(s);

    SECTION("the two four-generator submodels of the 5-cycle pass") {
        SpanningFamily fam = testutil::cycle_family(cyc);
        auto rep = validate_spanning(cyc, fam);
        CHECK(rep.pass);
        CHECK(rep.uncovered.empty());
    }

    SECTION("missing coverage is reported") {
        GeneratingClass cyc4 = four_cycle();
        SpanningFamily fam;
        fam.members.push_back(GeneratingClass(cyc4.schema(), {{0, 1}, {1, 2}, {2, 3}}));
        fam.sequences.push_back(find_perfect_sequence(fam.members[0]).sequence);
        auto rep = validate_spanning(cyc4, fam);
        CHECK_FALSE(rep.pass);
        REQUIRE(rep.uncovered.size() == 1);
        CHECK(rep.uncovered[0] == VarSet{0, 3});
    }

    SECTION("empty family fails") {
        SpanningFamily fam;
        auto rep = validate_spanning(cyc, fam);
        CHECK_FALSE(rep.pass);
    }
}

TEST_CASE("max_entropy_extension of uniform marginals is uniform") {
    Schema s = make_schema({{"A", 2}, {"B", 2}, {"C", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}});
    auto d = find_perfect_sequence(c);
    REQUIRE(d.ok());
    std::vector<DenseTable> marg{DenseTable::uniform(s.sub_schema({0, 1})),
                                 DenseTable::uniform(s.sub_schema({1, 2}))};
    DenseTable joint = max_entropy_extension(c, marg, d.sequence);
    for (std::size_t i = 0; i < joint.size(); ++i)
        CHECK(joint[i] == Catch::Approx(1.0 / 8.0).margin(1e-15));
}

TEST_CASE("max_entropy_extension of consistent normalized marginals is normalized") {
    auto g = testutil::rng(31);
    Schema s = make_schema({{"A", 2}, {"B", 3}, {"C", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}});
    auto d = find_perfect_sequence(c);
    for (int trial = 0; trial < 10; ++trial) {
        DenseTable t = testutil::random_positive_table(s, g);
        std::vector<DenseTable> marg{marginalize(t, {0, 1}), marginalize(t, {1, 2})};
        DenseTable joint = max_entropy_extension(c, marg, d.sequence);
        CHECK(std::abs(joint.total() - 1.0) <= 1e-12);
        // marginals of the extension reproduce the inputs
        CHECK(max_abs_diff(marginalize(joint, {0, 1}), marg[0]) <= 1e-12);
        CHECK(max_abs_diff(marginalize(joint, {1, 2}), marg[1]) <= 1e-12);
    }
}

TEST_CASE("max_entropy_extension matches the long-run scaling oracle") {
    auto g = testutil::rng(87);
    Schema s = make_schema({{"A", 2}, {"B", 2}, {"C", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}});
    auto d = find_perfect_sequence(c);
    for (int trial = 0; trial < 5; ++trial) {
        DenseTable t = testutil::random_positive_table(s, g);
        std::vector<DenseTable> marg{marginalize(t, {0, 1}), marginalize(t, {1, 2})};
        DenseTable joint = max_entropy_extension(c, marg, d.sequence);
        DenseTable oracle = testutil::reference_mle(t, c);
        CHECK(max_abs_diff(joint, oracle) <= 1e-8);
    }
}

TEST_CASE("max_entropy_extension error paths") {
    Schema s = make_schema({{"A", 2}, {"B", 2}, {"C", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}});
    auto d = find_perfect_sequence(c);

    SECTION("inconsistent marginals") {
        DenseTable m1(s.sub_schema({0, 1}), {0.5, 0.1, 0.2, 0.2});
        DenseTable m2(s.sub_schema({1, 2}), {0.25, 0.25, 0.25, 0.25});
        CHECK_THROWS_AS(max_entropy_extension(c, {m1, m2}, d.sequence), std::invalid_argument);
    }

    SECTION("zero numerator cells become zero") {
        DenseTable m1(s.sub_schema({0, 1}), {0.0, 0.5, 0.3, 0.2});
        DenseTable m2(s.sub_schema({1, 2}), {0.15, 0.15, 0.35, 0.35});
        DenseTable joint = max_entropy_extension(c, {m1, m2}, d.sequence);
        CHECK(joint[0] == 0.0);
        CHECK(joint[1] == 0.0);
        CHECK(std::abs(joint.total() - 1.0) <= 1e-12);
    }
}

TEST_CASE("extension of a full table's marginals") {
    auto g = testutil::rng(13);
    Schema s = make_schema({{"A", 2}, {"B", 2}, {"C", 2}, {"D", 2}});
    GeneratingClass c(s, {{0, 1}, {1, 2}, {2, 3}});
    auto d = find_perfect_sequence(c);
    DenseTable t = testutil::random_positive_table(s, g);
    DenseTable ext = max_entropy_extension_of(t, c, d.sequence);
    for (const auto& gen : c.generators())
        CHECK(max_abs_diff(marginalize(ext, gen), marginalize(t, gen)) <= 1e-12);
}
