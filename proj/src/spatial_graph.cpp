#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "methylgraph/error.hpp"
#include "methylgraph/spatial_graph.hpp"

namespace methylgraph {

namespace {

void validate_nodes(const std::vector<PatchNode>& nodes) {
    if (nodes.empty()) throw InputError("build_graph: a graph needs at least one node");
    const std::size_t dim = nodes.front().features.size();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const PatchNode& n = nodes[i];
        if (!std::isfinite(n.x) || !std::isfinite(n.y) || n.x < 0.0 || n.y < 0.0) {
            throw InputError("build_graph: node " + std::to_string(i) + " has invalid coordinates");
        }
        if (n.features.size() != dim) {
            throw InputError("build_graph: node " + std::to_string(i) + " has " + std::to_string(n.features.size()) +
                             " features, expected " + std::to_string(dim));
        }
        for (double f : n.features) {
            if (!std::isfinite(f)) throw InputError("build_graph: node " + std::to_string(i) + " has a non-finite feature");
        }
    }

    std::map<std::pair<double, double>, std::vector<std::size_t>> seen;
    for (std::size_t i = 0; i < nodes.size(); ++i) seen[{nodes[i].x, nodes[i].y}].push_back(i);
    std::string offenders;
    for (const auto& [xy, ids] : seen) {
        if (ids.size() < 2) continue;
        offenders += " (" + std::to_string(xy.first) + ", " + std::to_string(xy.second) + "): nodes";
        for (std::size_t id : ids) offenders += " " + std::to_string(id);
        offenders += ";";
    }
    if (!offenders.empty()) throw InputError("build_graph: duplicate coordinates" + offenders);
}

double distance(const PatchNode& a, const PatchNode& b) { return std::hypot(a.x - b.x, a.y - b.y); }

bool all_collinear(std::span<const Point> pts) {
    for (std::size_t k = 2; k < pts.size(); ++k) {
        if (orient2d(pts[0], pts[1], pts[k]) != 0) return false;
    }
    return true;
}

}  // namespace

WsiGraph build_graph(std::vector<PatchNode> nodes, double max_edge_px, std::string slide_id) {
    if (!(max_edge_px > 0.0)) throw InputError("build_graph: max_edge_px must be positive");
    validate_nodes(nodes);

    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    if (nodes.size() == 2) {
        candidates.emplace_back(0, 1);
    } else if (nodes.size() >= 3) {
        std::vector<Point> pts;
        pts.reserve(nodes.size());
        for (const PatchNode& n : nodes) pts.push_back({n.x, n.y});
        if (all_collinear(pts)) {
            // The Delaunay graph of collinear points is the path through them in line order.
            std::vector<std::size_t> order(pts.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
                return pts[i].x != pts[j].x ? pts[i].x < pts[j].x : pts[i].y < pts[j].y;
            });
            for (std::size_t k = 1; k < order.size(); ++k) {
                candidates.emplace_back(std::min(order[k - 1], order[k]), std::max(order[k - 1], order[k]));
            }
            std::sort(candidates.begin(), candidates.end());
        } else {
            candidates = delaunay(pts).edges();
        }
    }

    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (const auto& e : candidates) {
        if (distance(nodes[e.first], nodes[e.second]) < max_edge_px) kept.push_back(e);
    }

    WsiGraph g;
    g.slide_id = std::move(slide_id);
    g.feature_dim = nodes.front().features.size();
    g.nodes = std::move(nodes);
    g.edges = std::move(kept);
    return g;
}

WsiGraph assemble_graph(std::vector<PatchNode> nodes, std::vector<std::pair<std::size_t, std::size_t>> edges,
                        std::string slide_id) {
    validate_nodes(nodes);
    for (auto& e : edges) {
        if (e.first == e.second) throw InputError("graph: self-loop on node " + std::to_string(e.first));
        if (e.first >= nodes.size() || e.second >= nodes.size()) {
            throw InputError("graph: edge (" + std::to_string(e.first) + ", " + std::to_string(e.second) +
                             ") references a missing node");
        }
        if (e.first > e.second) std::swap(e.first, e.second);
    }
    std::sort(edges.begin(), edges.end());
    if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) throw InputError("graph: duplicate edge");
    WsiGraph g;
    g.slide_id = std::move(slide_id);
    g.feature_dim = nodes.front().features.size();
    g.nodes = std::move(nodes);
    g.edges = std::move(edges);
    return g;
}

std::vector<std::vector<std::size_t>> neighbor_lists(const WsiGraph& graph) {
    std::vector<std::vector<std::size_t>> adj(graph.node_count());
    for (const auto& [a, b] : graph.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    for (auto& l : adj) std::sort(l.begin(), l.end());
    return adj;
}

Csr to_csr(std::size_t node_count, std::span<const std::pair<std::size_t, std::size_t>> edges) {
    Csr csr;
    csr.offsets.assign(node_count + 1, 0);
    for (const auto& [a, b] : edges) {
        ++csr.offsets[a + 1];
        ++csr.offsets[b + 1];
    }
    for (std::size_t i = 0; i < node_count; ++i) csr.offsets[i + 1] += csr.offsets[i];
    csr.indices.resize(csr.offsets.back());
    std::vector<std::size_t> fill(csr.offsets.begin(), csr.offsets.end() - 1);
    for (const auto& [a, b] : edges) {
        csr.indices[fill[a]++] = b;
        csr.indices[fill[b]++] = a;
    }
    for (std::size_t i = 0; i < node_count; ++i) {
        std::sort(csr.indices.begin() + static_cast<std::ptrdiff_t>(csr.offsets[i]),
                  csr.indices.begin() + static_cast<std::ptrdiff_t>(csr.offsets[i + 1]));
    }
    return csr;
}

}  // namespace methylgraph
