#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace methylgraph {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Sign of the oriented area of (a, b, c): +1 counter-clockwise, -1 clockwise, 0 collinear.
/// Exact for all finite double inputs.
int orient2d(Point a, Point b, Point c);

/// +1 if d lies strictly inside the circle through counter-clockwise (a, b, c), -1 strictly
/// outside, 0 on the circle. Exact for all finite double inputs.
int incircle(Point a, Point b, Point c, Point d);

/// Counter-clockwise index triple with the smallest index first.
using Triangle = std::array<std::size_t, 3>;

struct Triangulation {
    std::vector<Triangle> triangles;  // sorted ascending

    /// Unordered edges (i < j), sorted ascending.
    std::vector<std::pair<std::size_t, std::size_t>> edges() const;
};

/// Delaunay triangulation of distinct points.
///
/// Incremental Bowyer–Watson with a vertex at infinity bounding the hull, followed by a flip
/// pass over cocircular quadrilaterals: an edge (a, c) with opposite vertices b, d on a common
/// circle is replaced by (b, d) whenever min(b, d) < min(a, c). The result is deterministic for a
/// given input order.
///
/// Throws InputError for fewer than 3 points or duplicates, NumericError if all points are
/// collinear.
Triangulation delaunay(std::span<const Point> points);

struct PatchNode {
    std::string patch_id;
    double x = 0.0;
    double y = 0.0;
    std::vector<double> features;
};

/// Undirected spatial graph over the patches of one slide.
struct WsiGraph {
    std::string slide_id;
    std::vector<PatchNode> nodes;
    std::vector<std::pair<std::size_t, std::size_t>> edges;  // i < j, sorted ascending
    std::size_t feature_dim = 0;

    std::size_t node_count() const noexcept { return nodes.size(); }
};

inline constexpr double kDefaultMaxEdgePx = 4000.0;

/// Delaunay edges shorter than `max_edge_px` (strict). One or two nodes skip the
/// triangulation; fully collinear inputs connect consecutive points along the line.
WsiGraph build_graph(std::vector<PatchNode> nodes, double max_edge_px = kDefaultMaxEdgePx,
                     std::string slide_id = {});

/// Same as build_graph but over an already validated edge list (e.g. read from disk).
/// Throws InputError on out-of-range, self-loop or duplicate edges.
WsiGraph assemble_graph(std::vector<PatchNode> nodes, std::vector<std::pair<std::size_t, std::size_t>> edges,
                        std::string slide_id = {});

/// Sorted adjacency list N(i) per node.
std::vector<std::vector<std::size_t>> neighbor_lists(const WsiGraph& graph);

/// Compressed adjacency: neighbours of i are indices[offsets[i] .. offsets[i+1]), ascending.
struct Csr {
    std::vector<std::size_t> offsets;
    std::vector<std::size_t> indices;

    std::size_t node_count() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t degree(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

Csr to_csr(std::size_t node_count, std::span<const std::pair<std::size_t, std::size_t>> edges);

}  // namespace methylgraph
