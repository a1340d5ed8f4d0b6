#include "facetopo/topology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "facetopo/errors.hpp"
#include "json.hpp"

namespace facetopo::topo {

WeightedCompleteGraph::WeightedCompleteGraph(int n, std::vector<double> weights)
    : n_(n), weights_(std::move(weights)) {
    if (n < 2) throw validation_error("graph needs at least 2 vertices, got " + std::to_string(n));
    long expected = pair_count(n);
    if (static_cast<long>(weights_.size()) != expected) {
        throw dimension_error("graph with n=" + std::to_string(n) + " needs " +
                              std::to_string(expected) + " weights, got " +
                              std::to_string(weights_.size()));
    }
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (!std::isfinite(weights_[k])) {
            throw validation_error("edge weight " + std::to_string(k) + " is not finite");
        }
    }
}

int WeightedCompleteGraph::edge_index(int i, int j) const {
    if (i > j) std::swap(i, j);
    return i * n_ - i * (i + 1) / 2 + (j - i - 1);
}

double WeightedCompleteGraph::weight(int i, int j) const {
    return weights_[static_cast<std::size_t>(edge_index(i, j))];
}

WeightedCompleteGraph build_graph(int n, std::vector<double> weights) {
    return WeightedCompleteGraph(n, std::move(weights));
}

int SpanningTree::degree(int v) const {
    int d = static_cast<int>(children[static_cast<std::size_t>(v)].size());
    if (v != root) ++d;
    return d;
}

int SpanningTree::depth() const {
    std::vector<int> dist(static_cast<std::size_t>(n), 0);
    int best = 0;
    // children always point away from the root, so one pass in BFS order works
    std::vector<int> queue{root};
    for (std::size_t q = 0; q < queue.size(); ++q) {
        int v = queue[q];
        for (int c : children[static_cast<std::size_t>(v)]) {
            dist[static_cast<std::size_t>(c)] = dist[static_cast<std::size_t>(v)] + 1;
            best = std::max(best, dist[static_cast<std::size_t>(c)]);
            queue.push_back(c);
        }
    }
    return best;
}

int SpanningTree::max_degree() const {
    int best = 0;
    for (int v = 0; v < n; ++v) best = std::max(best, degree(v));
    return best;
}

void validate_tree(const SpanningTree& t) {
    if (t.n < 2) throw validation_error("tree needs at least 2 vertices");
    if (t.root < 0 || t.root >= t.n) throw validation_error("tree root out of range");
    if (static_cast<int>(t.parent.size()) != t.n || static_cast<int>(t.children.size()) != t.n)
        throw validation_error("tree arrays must have length n");
    if (t.parent[static_cast<std::size_t>(t.root)] != -1)
        throw validation_error("parent[root] must be -1");
    int edges = 0;
    for (int v = 0; v < t.n; ++v) {
        int p = t.parent[static_cast<std::size_t>(v)];
        if (v == t.root) continue;
        ++edges;
        if (p < 0 || p >= t.n || p == v)
            throw validation_error("vertex " + std::to_string(v) + " has invalid parent");
        const auto& sib = t.children[static_cast<std::size_t>(p)];
        if (std::find(sib.begin(), sib.end(), v) == sib.end())
            throw validation_error("vertex " + std::to_string(v) + " missing from children of its parent");
    }
    if (edges != t.n - 1) throw validation_error("tree must have exactly n-1 edges");
    // connectivity: walking children from the root must reach every vertex once
    std::vector<char> seen(static_cast<std::size_t>(t.n), 0);
    std::vector<int> queue{t.root};
    seen[static_cast<std::size_t>(t.root)] = 1;
    for (std::size_t q = 0; q < queue.size(); ++q) {
        for (int c : t.children[static_cast<std::size_t>(queue[q])]) {
            if (seen[static_cast<std::size_t>(c)])
                throw validation_error("vertex " + std::to_string(c) + " reached twice");
            if (t.parent[static_cast<std::size_t>(c)] != queue[q])
                throw validation_error("children list disagrees with parent array");
            seen[static_cast<std::size_t>(c)] = 1;
            queue.push_back(c);
        }
    }
    if (static_cast<int>(queue.size()) != t.n) throw validation_error("tree is not connected");
}

namespace {

// Sum edge weights in canonical edge order so that prim_mst and
// brute_force_mst produce bit-identical totals for the same edge set.
double canonical_total(const WeightedCompleteGraph& g, const SpanningTree& t) {
    std::vector<int> idx;
    idx.reserve(static_cast<std::size_t>(t.n) - 1);
    for (int v = 0; v < t.n; ++v) {
        if (v == t.root) continue;
        idx.push_back(g.edge_index(v, t.parent[static_cast<std::size_t>(v)]));
    }
    std::sort(idx.begin(), idx.end());
    double total = 0.0;
    for (int k : idx) total += g.weights()[static_cast<std::size_t>(k)];
    return total;
}

double canonical_total_edges(const WeightedCompleteGraph& g,
                             const std::vector<std::pair<int, int>>& edges) {
    std::vector<int> idx;
    idx.reserve(edges.size());
    for (auto [a, b] : edges) idx.push_back(g.edge_index(a, b));
    std::sort(idx.begin(), idx.end());
    double total = 0.0;
    for (int k : idx) total += g.weights()[static_cast<std::size_t>(k)];
    return total;
}

}  // namespace

SpanningTree prim_mst(const WeightedCompleteGraph& g, int start) {
    int n = g.vertex_count();
    if (start < 0 || start >= n)
        throw validation_error("prim_mst: start vertex " + std::to_string(start) + " out of range");

    SpanningTree t;
    t.n = n;
    t.root = start;
    t.parent.assign(static_cast<std::size_t>(n), -1);
    t.children.assign(static_cast<std::size_t>(n), {});

    std::vector<char> in_tree(static_cast<std::size_t>(n), 0);
    in_tree[static_cast<std::size_t>(start)] = 1;

    for (int step = 1; step < n; ++step) {
        double best_w = std::numeric_limits<double>::infinity();
        int best_idx = std::numeric_limits<int>::max();
        int best_u = -1, best_v = -1;
        for (int u = 0; u < n; ++u) {
            if (!in_tree[static_cast<std::size_t>(u)]) continue;
            for (int v = 0; v < n; ++v) {
                if (in_tree[static_cast<std::size_t>(v)]) continue;
                double w = g.weight(u, v);
                int idx = g.edge_index(u, v);
                // ties broken by lowest canonical edge index for determinism
                if (w < best_w || (w == best_w && idx < best_idx)) {
                    best_w = w;
                    best_idx = idx;
                    best_u = u;
                    best_v = v;
                }
            }
        }
        in_tree[static_cast<std::size_t>(best_v)] = 1;
        t.parent[static_cast<std::size_t>(best_v)] = best_u;
        t.children[static_cast<std::size_t>(best_u)].push_back(best_v);
    }
    t.total_weight = canonical_total(g, t);
    return t;
}

namespace {

std::vector<std::pair<int, int>> prufer_decode(const std::vector<int>& seq, int n) {
    std::vector<int> degree(static_cast<std::size_t>(n), 1);
    for (int s : seq) ++degree[static_cast<std::size_t>(s)];
    std::vector<std::pair<int, int>> edges;
    edges.reserve(static_cast<std::size_t>(n) - 1);
    for (int s : seq) {
        for (int v = 0; v < n; ++v) {
            if (degree[static_cast<std::size_t>(v)] == 1) {
                edges.emplace_back(v, s);
                --degree[static_cast<std::size_t>(v)];
                --degree[static_cast<std::size_t>(s)];
                break;
            }
        }
    }
    int a = -1, b = -1;
    for (int v = 0; v < n; ++v) {
        if (degree[static_cast<std::size_t>(v)] == 1) (a < 0 ? a : b) = v;
    }
    edges.emplace_back(a, b);
    return edges;
}

SpanningTree root_edge_set(const WeightedCompleteGraph& g,
                           const std::vector<std::pair<int, int>>& edges, int root) {
    int n = g.vertex_count();
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n));
    for (auto [a, b] : edges) {
        adj[static_cast<std::size_t>(a)].push_back(b);
        adj[static_cast<std::size_t>(b)].push_back(a);
    }
    for (auto& nb : adj) std::sort(nb.begin(), nb.end());

    SpanningTree t;
    t.n = n;
    t.root = root;
    t.parent.assign(static_cast<std::size_t>(n), -1);
    t.children.assign(static_cast<std::size_t>(n), {});
    std::vector<int> queue{root};
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    seen[static_cast<std::size_t>(root)] = 1;
    for (std::size_t q = 0; q < queue.size(); ++q) {
        int v = queue[q];
        for (int w : adj[static_cast<std::size_t>(v)]) {
            if (seen[static_cast<std::size_t>(w)]) continue;
            seen[static_cast<std::size_t>(w)] = 1;
            t.parent[static_cast<std::size_t>(w)] = v;
            t.children[static_cast<std::size_t>(v)].push_back(w);
            queue.push_back(w);
        }
    }
    t.total_weight = canonical_total_edges(g, edges);
    return t;
}

}  // namespace

SpanningTree brute_force_mst(const WeightedCompleteGraph& g) {
    int n = g.vertex_count();
    if (n > 8)
        throw capacity_error("brute_force_mst enumerates n^(n-2) trees; n=" + std::to_string(n) +
                             " exceeds the n<=8 bound");

    if (n == 2) return root_edge_set(g, {{0, 1}}, 0);

    std::vector<int> seq(static_cast<std::size_t>(n - 2), 0);
    std::vector<std::pair<int, int>> best_edges;
    double best_total = std::numeric_limits<double>::infinity();
    while (true) {
        auto edges = prufer_decode(seq, n);
        double total = canonical_total_edges(g, edges);
        if (total < best_total) {
            best_total = total;
            best_edges = std::move(edges);
        }
        // next sequence in lexicographic order, base n
        int pos = n - 3;
        while (pos >= 0 && seq[static_cast<std::size_t>(pos)] == n - 1) {
            seq[static_cast<std::size_t>(pos)] = 0;
            --pos;
        }
        if (pos < 0) break;
        ++seq[static_cast<std::size_t>(pos)];
    }
    return root_edge_set(g, best_edges, 0);
}

TraversalSequence euler_tour(const SpanningTree& t) {
    validate_tree(t);
    TraversalSequence seq;
    seq.n = t.n;
    seq.vertices.reserve(static_cast<std::size_t>(2 * t.n - 1));

    // preorder walk recording every arrival, including backtracking arrivals
    auto walk = [&](auto&& self, int v) -> void {
        seq.vertices.push_back(v);
        for (int c : t.children[static_cast<std::size_t>(v)]) {
            self(self, c);
            seq.vertices.push_back(v);
        }
    };
    walk(walk, t.root);
    return seq;
}

std::string format_sequence_display(const TraversalSequence& seq) {
    std::string out;
    for (std::size_t i = 0; i < seq.vertices.size(); ++i) {
        if (i) out += '-';
        out += std::to_string(seq.vertices[i] + 1);
    }
    return out;
}

SelectionMatrix::SelectionMatrix(int n, std::vector<int> hot_rows)
    : n_(n), hot_(std::move(hot_rows)) {
    for (int r : hot_) {
        if (r < 0 || r >= n) throw validation_error("selection matrix row index out of range");
    }
}

long SelectionMatrix::nonzero_count() const {
    return static_cast<long>(hot_.size());
}

std::vector<double> SelectionMatrix::apply(std::span<const double> m, int m_rows) const {
    if (static_cast<int>(m.size()) != m_rows * n_)
        throw dimension_error("selection apply: matrix must be rows x n");
    std::vector<double> out(static_cast<std::size_t>(m_rows) * static_cast<std::size_t>(cols()), 0.0);
    for (int r = 0; r < m_rows; ++r) {
        for (int c = 0; c < cols(); ++c) {
            double acc = 0.0;
            for (int k = 0; k < n_; ++k) {
                acc += m[static_cast<std::size_t>(r * n_ + k)] * at(k, c);
            }
            out[static_cast<std::size_t>(r * cols() + c)] = acc;
        }
    }
    return out;
}

SelectionMatrix selection_matrix(const TraversalSequence& seq) {
    if (static_cast<int>(seq.vertices.size()) != 2 * seq.n - 1)
        throw validation_error("traversal sequence must have length 2n-1");
    return SelectionMatrix(seq.n, seq.vertices);
}

std::string tree_to_dot(const SpanningTree& t,
                        const std::vector<std::pair<double, double>>* coords) {
    validate_tree(t);
    if (coords && static_cast<int>(coords->size()) != t.n)
        throw dimension_error("tree_to_dot: coords length must equal n");
    std::ostringstream os;
    os << "graph face_tree {\n";
    if (coords) {
        char buf[80];
        for (int v = 0; v < t.n; ++v) {
            std::snprintf(buf, sizeof(buf), "  %d [pos=\"%.6g,%.6g!\"];\n", v,
                          (*coords)[static_cast<std::size_t>(v)].first,
                          (*coords)[static_cast<std::size_t>(v)].second);
            os << buf;
        }
    }
    for (int v = 0; v < t.n; ++v) {
        if (v == t.root) continue;
        os << "  " << t.parent[static_cast<std::size_t>(v)] << " -- " << v << ";\n";
    }
    os << "}\n";
    return os.str();
}

std::string tree_to_json(const SpanningTree& t) {
    validate_tree(t);
    nlohmann::ordered_json j;
    j["n"] = t.n;
    j["root"] = t.root;
    j["parent"] = t.parent;
    j["children"] = t.children;
    j["total_weight"] = t.total_weight;
    return j.dump();
}

SpanningTree tree_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error("tree JSON parse error at byte " + std::to_string(e.byte) + ": " +
                          e.what());
    }
    SpanningTree t;
    try {
        t.n = j.at("n").get<int>();
        t.root = j.at("root").get<int>();
        t.parent = j.at("parent").get<std::vector<int>>();
        t.children = j.at("children").get<std::vector<std::vector<int>>>();
        t.total_weight = j.at("total_weight").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("tree JSON schema error: ") + e.what());
    }
    validate_tree(t);
    return t;
}

std::uint64_t tree_hash(const SpanningTree& t) {
    std::string text = tree_to_json(t);
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace facetopo::topo
