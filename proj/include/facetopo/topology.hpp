#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace facetopo::topo {

// Complete graph K_n with one real weight per unordered vertex pair.
// Weights are stored flat in canonical order: index of (i, j) with i < j is
// i*n - i*(i+1)/2 + (j - i - 1).
class WeightedCompleteGraph {
public:
    WeightedCompleteGraph(int n, std::vector<double> weights);

    int vertex_count() const { return n_; }
    static long pair_count(int n) { return static_cast<long>(n) * (n - 1) / 2; }

    int edge_index(int i, int j) const;
    double weight(int i, int j) const;
    const std::vector<double>& weights() const { return weights_; }

private:
    int n_;
    std::vector<double> weights_;
};

WeightedCompleteGraph build_graph(int n, std::vector<double> weights);

struct SpanningTree {
    int n = 0;
    int root = 0;
    std::vector<int> parent;                 // parent[root] == -1
    std::vector<std::vector<int>> children;  // visit order for traversal
    double total_weight = 0.0;

    int degree(int v) const;
    int depth() const;       // edges on the longest root-to-leaf path
    int max_degree() const;
};

// Throws validation_error if the tree violates any structural invariant.
void validate_tree(const SpanningTree& t);

SpanningTree prim_mst(const WeightedCompleteGraph& g, int start);

// Exhaustive oracle over all n^(n-2) labeled trees (Pruefer enumeration).
// Only meant for tests; n <= 8.
SpanningTree brute_force_mst(const WeightedCompleteGraph& g);

struct TraversalSequence {
    int n = 0;
    std::vector<int> vertices;  // length 2n-1
};

TraversalSequence euler_tour(const SpanningTree& t);

// "1-2-3-2-1" style rendering; vertex labels are 1-based here and only here.
std::string format_sequence_display(const TraversalSequence& seq);

// One-hot matrix U with n rows and 2n-1 columns; column j selects vertices[j].
class SelectionMatrix {
public:
    SelectionMatrix(int n, std::vector<int> hot_rows);

    int rows() const { return n_; }
    int cols() const { return static_cast<int>(hot_.size()); }
    int at(int r, int c) const { return hot_[static_cast<std::size_t>(c)] == r ? 1 : 0; }
    int hot_row(int c) const { return hot_[static_cast<std::size_t>(c)]; }
    long nonzero_count() const;

    // Dense product M * U where M is rows x n, row-major. Computed with the
    // full inner-product loop so tests can cross-check the gather shortcut.
    std::vector<double> apply(std::span<const double> m, int m_rows) const;

private:
    int n_;
    std::vector<int> hot_;
};

SelectionMatrix selection_matrix(const TraversalSequence& seq);

// DOT export; when coords are given each node carries a pos="x,y!" attribute.
std::string tree_to_dot(const SpanningTree& t,
                        const std::vector<std::pair<double, double>>* coords = nullptr);

std::string tree_to_json(const SpanningTree& t);
SpanningTree tree_from_json(const std::string& text);
std::uint64_t tree_hash(const SpanningTree& t);

}  // namespace facetopo::topo
