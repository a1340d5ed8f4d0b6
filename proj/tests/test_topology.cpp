#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "facetopo/errors.hpp"
#include "facetopo/rng.hpp"
#include "facetopo/topology.hpp"

using namespace facetopo;
using namespace facetopo::topo;

namespace {

WeightedCompleteGraph random_graph(int n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> w(static_cast<std::size_t>(WeightedCompleteGraph::pair_count(n)));
    for (auto& x : w) x = rng.uniform(lo, hi);
    return build_graph(n, std::move(w));
}

// The 9-node tree drawn in the traversal figure, 0-based:
// root 0 with children [1,3,5]; 1->[2]; 3->[4]; 5->[6]; 6->[7,8].
SpanningTree figure_tree() {
    SpanningTree t;
    t.n = 9;
    t.root = 0;
    t.parent = {-1, 0, 1, 0, 3, 0, 5, 6, 6};
    t.children = {{1, 3, 5}, {2}, {}, {4}, {}, {6}, {7, 8}, {}, {}};
    t.total_weight = 8.0;
    return t;
}

std::set<std::pair<int, int>> edge_set(const SpanningTree& t) {
    std::set<std::pair<int, int>> e;
    for (int v = 0; v < t.n; ++v) {
        if (v == t.root) continue;
        int p = t.parent[static_cast<std::size_t>(v)];
        e.insert({std::min(v, p), std::max(v, p)});
    }
    return e;
}

}  // namespace

TEST_CASE("build_graph basics") {
    auto g = build_graph(2, {0.5});
    CHECK(g.vertex_count() == 2);
    CHECK(g.weight(0, 1) == 0.5);
    CHECK(g.weight(1, 0) == 0.5);

    CHECK(WeightedCompleteGraph::pair_count(50) == 1225);
    auto g50 = build_graph(50, std::vector<double>(1225, 0.0));
    CHECK(g50.vertex_count() == 50);

    CHECK_THROWS_AS(build_graph(4, std::vector<double>(5, 0.0)), dimension_error);
    CHECK_THROWS_AS(build_graph(3, {1.0, std::nan(""), 2.0}), validation_error);
    CHECK_THROWS_AS(build_graph(3, {1.0, INFINITY, 2.0}), validation_error);
}

TEST_CASE("canonical edge index covers all pairs") {
    int n = 7;
    auto g = build_graph(n, std::vector<double>(21, 0.0));
    std::set<int> seen;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) seen.insert(g.edge_index(i, j));
    CHECK(seen.size() == 21);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 20);
    CHECK(g.edge_index(2, 5) == g.edge_index(5, 2));
}

TEST_CASE("prim on K3, by hand") {
    // trees of K3: {01,02}=3, {01,12}=4, {02,12}=5 -> minimum is 3
    auto g = build_graph(3, {1.0, 2.0, 3.0});
    auto t = prim_mst(g, 0);
    CHECK(t.total_weight == 3.0);
    CHECK(edge_set(t) == std::set<std::pair<int, int>>{{0, 1}, {0, 2}});
    auto bf = brute_force_mst(g);
    CHECK(bf.total_weight == 3.0);
    CHECK(edge_set(bf) == edge_set(t));
}

TEST_CASE("prim on K2") {
    auto g = build_graph(2, {-0.7});
    auto t = prim_mst(g, 0);
    CHECK(t.total_weight == -0.7);
    CHECK(t.parent[1] == 0);
    CHECK(t.children[0] == std::vector<int>{1});
}

TEST_CASE("prim start precondition") {
    auto g = build_graph(3, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(prim_mst(g, 3), validation_error);
    CHECK_THROWS_AS(prim_mst(g, -1), validation_error);
}

TEST_CASE("prim matches brute force on random graphs") {
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) {
        int n = 3 + rng.uniform_int(4);  // 3..6
        auto g = random_graph(n, rng);
        auto prim = prim_mst(g, rng.uniform_int(n));
        auto brute = brute_force_mst(g);
        CHECK(prim.total_weight == brute.total_weight);
        CHECK(edge_set(prim) == edge_set(brute));
        validate_tree(prim);
        validate_tree(brute);
    }
}

TEST_CASE("brute force ties: all-equal weights on K4") {
    auto g = build_graph(4, std::vector<double>(6, 0.25));
    auto t = brute_force_mst(g);
    CHECK(t.total_weight == doctest::Approx(0.75).epsilon(1e-15));
    validate_tree(t);
}

TEST_CASE("brute force capacity bound") {
    auto g = build_graph(9, std::vector<double>(36, 0.0));
    CHECK_THROWS_AS(brute_force_mst(g), capacity_error);
}

TEST_CASE("weight shift leaves MST edges unchanged") {
    Rng rng(7);
    for (int i = 0; i < 40; ++i) {
        int n = 3 + rng.uniform_int(6);
        auto w = random_graph(n, rng).weights();
        double c = rng.uniform(-5.0, 5.0);
        auto shifted = w;
        for (auto& x : shifted) x += c;
        auto t0 = prim_mst(build_graph(n, w), 0);
        auto t1 = prim_mst(build_graph(n, shifted), 0);
        CHECK(edge_set(t0) == edge_set(t1));
        CHECK(t1.total_weight == doctest::Approx(t0.total_weight + (n - 1) * c).epsilon(1e-12));
    }
}

TEST_CASE("euler tour of the figure tree") {
    auto seq = euler_tour(figure_tree());
    std::vector<int> expected{0, 1, 2, 1, 0, 3, 4, 3, 0, 5, 6, 7, 6, 8, 6, 5, 0};
    CHECK(seq.vertices == expected);
    CHECK(format_sequence_display(seq) == "1-2-3-2-1-4-5-4-1-6-7-8-7-9-7-6-1");
}

TEST_CASE("euler tour of K2 tree and a star") {
    auto g = build_graph(2, {1.0});
    auto seq = euler_tour(prim_mst(g, 0));
    CHECK(seq.vertices == std::vector<int>{0, 1, 0});

    SpanningTree star;
    star.n = 4;
    star.root = 0;
    star.parent = {-1, 0, 0, 0};
    star.children = {{1, 2, 3}, {}, {}, {}};
    auto s2 = euler_tour(star);
    CHECK(s2.vertices == std::vector<int>{0, 1, 0, 2, 0, 3, 0});
}

TEST_CASE("euler tour invariants on random trees") {
    Rng rng(99);
    for (int i = 0; i < 120; ++i) {
        int n = 2 + rng.uniform_int(49);  // 2..50
        auto g = random_graph(n, rng);
        int root = rng.uniform_int(n);
        auto t = prim_mst(g, root);
        auto seq = euler_tour(t);
        REQUIRE(static_cast<int>(seq.vertices.size()) == 2 * n - 1);
        CHECK(seq.vertices.front() == root);
        CHECK(seq.vertices.back() == root);
        std::vector<int> mult(static_cast<std::size_t>(n), 0);
        for (std::size_t j = 0; j + 1 < seq.vertices.size(); ++j) {
            int a = seq.vertices[j], b = seq.vertices[j + 1];
            bool adjacent = t.parent[static_cast<std::size_t>(a)] == b ||
                            t.parent[static_cast<std::size_t>(b)] == a;
            CHECK(adjacent);
        }
        for (int v : seq.vertices) ++mult[static_cast<std::size_t>(v)];
        for (int v = 0; v < n; ++v) {
            int expected = t.degree(v) + (v == root ? 1 : 0);
            CHECK(mult[static_cast<std::size_t>(v)] == expected);
        }
    }
}

TEST_CASE("selection matrix basics") {
    TraversalSequence seq;
    seq.n = 2;
    seq.vertices = {0, 1, 0};
    auto u = selection_matrix(seq);
    CHECK(u.rows() == 2);
    CHECK(u.cols() == 3);
    CHECK(u.at(0, 0) == 1);
    CHECK(u.at(1, 1) == 1);
    CHECK(u.at(0, 2) == 1);
    CHECK(u.at(1, 0) == 0);
    CHECK(u.nonzero_count() == 3);
}

TEST_CASE("selection matrix of figure sequence") {
    auto u = selection_matrix(euler_tour(figure_tree()));
    CHECK(u.rows() == 9);
    CHECK(u.cols() == 17);
    int row0 = 0;
    for (int c = 0; c < u.cols(); ++c) row0 += u.at(0, c);
    CHECK(row0 == 4);  // root has degree 3, appears deg+1 times
    for (int c = 0; c < u.cols(); ++c) {
        int col_sum = 0;
        for (int r = 0; r < u.rows(); ++r) col_sum += u.at(r, c);
        CHECK(col_sum == 1);
    }
    CHECK(u.nonzero_count() == 17);
}

TEST_CASE("lambda * U picks traversal coordinates") {
    Rng rng(5);
    int n = 8;
    auto t = prim_mst(random_graph(n, rng), 2);
    auto seq = euler_tour(t);
    auto u = selection_matrix(seq);

    std::vector<double> lambda(static_cast<std::size_t>(2 * n));
    for (auto& x : lambda) x = rng.uniform(-2.0, 2.0);
    auto zeta = u.apply(lambda, 2);
    REQUIRE(static_cast<int>(zeta.size()) == 2 * (2 * n - 1));
    for (int j = 0; j < u.cols(); ++j) {
        int v = seq.vertices[static_cast<std::size_t>(j)];
        CHECK(zeta[static_cast<std::size_t>(j)] == lambda[static_cast<std::size_t>(v)]);
        CHECK(zeta[static_cast<std::size_t>(u.cols() + j)] == lambda[static_cast<std::size_t>(n + v)]);
    }
}

TEST_CASE("dot export") {
    auto g = build_graph(2, {1.0});
    auto t = prim_mst(g, 0);
    auto dot = tree_to_dot(t);
    CHECK(dot.find("graph face_tree {") == 0);
    std::size_t count = 0, pos = 0;
    while ((pos = dot.find(" -- ", pos)) != std::string::npos) {
        ++count;
        pos += 4;
    }
    CHECK(count == 1);

    auto fig = figure_tree();
    auto fig_dot = tree_to_dot(fig);
    count = 0;
    pos = 0;
    while ((pos = fig_dot.find(" -- ", pos)) != std::string::npos) {
        ++count;
        pos += 4;
    }
    CHECK(count == 8);

    std::vector<std::pair<double, double>> coords(9, {0.25, 0.5});
    auto with_pos = tree_to_dot(fig, &coords);
    CHECK(with_pos.find("pos=\"0.25,0.5!\"") != std::string::npos);
    std::vector<std::pair<double, double>> bad(3);
    CHECK_THROWS_AS(tree_to_dot(fig, &bad), dimension_error);
}

TEST_CASE("tree json round trip") {
    Rng rng(11);
    auto t = prim_mst(random_graph(12, rng), 4);
    auto text = tree_to_json(t);
    auto back = tree_from_json(text);
    CHECK(tree_to_json(back) == text);  // byte-identical canonical form
    CHECK(tree_to_dot(back) == tree_to_dot(t));

    auto fig = figure_tree();
    auto fig2 = tree_from_json(tree_to_json(fig));
    CHECK(fig2.children[0] == std::vector<int>{1, 3, 5});
    CHECK(fig2.root == 0);

    auto truncated = text.substr(0, text.size() / 2);
    CHECK_THROWS_AS(tree_from_json(truncated), parse_error);
    CHECK_THROWS_AS(tree_from_json("{\"n\": 2}"), parse_error);
}

TEST_CASE("tree hash is stable and content sensitive") {
    Rng rng(13);
    auto t = prim_mst(random_graph(6, rng), 0);
    CHECK(tree_hash(t) == tree_hash(t));
    auto other = t;
    other.total_weight += 1.0;
    CHECK(tree_hash(other) != tree_hash(t));
}

TEST_CASE("validate_tree rejects malformed trees") {
    auto t = figure_tree();
    t.parent[2] = 0;  // children say parent is 1
    CHECK_THROWS_AS(validate_tree(t), validation_error);

    auto cyc = figure_tree();
    cyc.parent[1] = 2;
    cyc.children[2] = {1};
    cyc.children[0] = {3, 5};
    CHECK_THROWS_AS(validate_tree(cyc), validation_error);
}

TEST_CASE("tree summary helpers") {
    auto fig = figure_tree();
    CHECK(fig.depth() == 3);      // 0 -> 5 -> 6 -> 7
    CHECK(fig.max_degree() == 3); // vertices 0 and 6
    CHECK(fig.degree(0) == 3);
    CHECK(fig.degree(6) == 3);
    CHECK(fig.degree(2) == 1);
}
