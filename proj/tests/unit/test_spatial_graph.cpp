#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "methylgraph/error.hpp"
#include "methylgraph/spatial_graph.hpp"
#include "oracles.hpp"

using namespace methylgraph;

namespace {

std::vector<Point> random_points(std::size_t n, std::uint64_t seed, double extent = 10000.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, extent);
    std::vector<Point> pts(n);
    for (auto& p : pts) p = {u(rng), u(rng)};
    return pts;
}

std::vector<oracle::P> to_oracle(const std::vector<Point>& pts) {
    std::vector<oracle::P> out;
    for (const auto& p : pts) out.push_back({p.x, p.y});
    return out;
}

bool empty_circumcircles(const Triangulation& tri, const std::vector<Point>& pts) {
    auto op = to_oracle(pts);
    for (const auto& t : tri.triangles) {
        for (std::size_t m = 0; m < pts.size(); ++m) {
            if (m == t[0] || m == t[1] || m == t[2]) continue;
            if (oracle::in_circle(op[t[0]], op[t[1]], op[t[2]], op[m]) > 0) return false;
        }
    }
    return true;
}

double hull_area(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end(), [](Point a, Point b) { return a.x != b.x ? a.x < b.x : a.y < b.y; });
    auto cross = [](Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); };
    std::vector<Point> h(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
        while (k >= t && cross(h[k - 2], h[k - 1], pts[i - 1]) <= 0) --k;
        h[k++] = pts[i - 1];
    }
    h.resize(k - 1);
    double a = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const Point& p = h[i];
        const Point& q = h[(i + 1) % h.size()];
        a += p.x * q.y - q.x * p.y;
    }
    return a / 2;
}

double triangle_area_sum(const Triangulation& tri, const std::vector<Point>& pts) {
    double a = 0;
    for (const auto& t : tri.triangles) {
        const Point p = pts[t[0]], q = pts[t[1]], r = pts[t[2]];
        a += ((q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x)) / 2;
    }
    return a;
}

PatchNode node(double x, double y, std::vector<double> f = {0.0}) { return {"", x, y, std::move(f)}; }

}  // namespace

TEST_CASE("predicates agree with exact oracle on near-degenerate inputs") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 2000; ++trial) {
        Point a{u(rng), u(rng)}, b{u(rng), u(rng)};
        double t = u(rng);
        Point c{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};  // nearly collinear after rounding
        CHECK(orient2d(a, b, c) == oracle::orient_exact({a.x, a.y}, {b.x, b.y}, {c.x, c.y}));
    }
    // Cocircular lattice points.
    CHECK(incircle({0, 0}, {1024, 0}, {1024, 1024}, {0, 1024}) == 0);
    CHECK(incircle({0, 0}, {1, 0}, {0, 1}, {0.25, 0.25}) == 1);
    CHECK(incircle({0, 0}, {1, 0}, {0, 1}, {2, 2}) == -1);
}

TEST_CASE("delaunay: three points form one triangle") {
    std::vector<Point> pts{{0, 0}, {4, 0}, {1, 3}};
    auto tri = delaunay(pts);
    REQUIRE(tri.triangles.size() == 1);
    CHECK(tri.triangles[0] == Triangle{0, 1, 2});
    CHECK(tri.edges().size() == 3);
}

TEST_CASE("delaunay: cocircular square uses the tie-break diagonal") {
    std::vector<Point> square{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    auto op = to_oracle(square);
    // Both diagonals admit an empty circumcircle.
    CHECK(oracle::is_delaunay_edge(op, 0, 2));
    CHECK(oracle::is_delaunay_edge(op, 1, 3));

    auto tri = delaunay(square);
    REQUIRE(tri.triangles.size() == 2);
    auto edges = tri.edges();
    CHECK(std::count(edges.begin(), edges.end(), std::pair<std::size_t, std::size_t>{0, 2}) == 1);
    CHECK(std::count(edges.begin(), edges.end(), std::pair<std::size_t, std::size_t>{1, 3}) == 0);

    // Relabel so that index 0 sits on the other diagonal.
    std::vector<Point> relabeled{{1, 0}, {0, 0}, {0, 1}, {1, 1}};
    auto e2 = delaunay(relabeled).edges();
    CHECK(std::count(e2.begin(), e2.end(), std::pair<std::size_t, std::size_t>{0, 2}) == 1);
    CHECK(delaunay(square).triangles == tri.triangles);
}

TEST_CASE("delaunay: random point sets match the brute-force oracle") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t n = 4 + seed % 40;
        auto pts = random_points(n, seed);
        auto tri = delaunay(pts);
        CHECK(empty_circumcircles(tri, pts));
        auto ours = tri.edges();
        auto ref = oracle::delaunay_edges(to_oracle(pts));
        CHECK(std::set<std::pair<std::size_t, std::size_t>>(ours.begin(), ours.end()) == ref);
        CHECK(triangle_area_sum(tri, pts) == doctest::Approx(hull_area(pts)).epsilon(1e-9));
        for (const auto& t : tri.triangles) {
            CHECK(orient2d(pts[t[0]], pts[t[1]], pts[t[2]]) > 0);
            CHECK(t[0] < t[1]);
            CHECK(t[0] < t[2]);
        }
    }
}

TEST_CASE("delaunay: lattice with collinear hull and many cocircular cells") {
    std::vector<Point> pts;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 6; ++j) pts.push_back({512.0 + 1024.0 * i, 512.0 + 1024.0 * j});
    auto tri = delaunay(pts);
    CHECK(tri.triangles.size() == 2 * 6 * 5);
    CHECK(empty_circumcircles(tri, pts));
    auto op = to_oracle(pts);
    for (auto [i, j] : tri.edges()) CHECK(oracle::is_delaunay_edge(op, i, j));
    CHECK(triangle_area_sum(tri, pts) == doctest::Approx(6.0 * 5.0 * 1024.0 * 1024.0));
}

TEST_CASE("delaunay: edge set is translation invariant for perturbed points") {
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        auto pts = random_points(40, seed);
        auto moved = pts;
        for (auto& p : moved) {
            p.x += 3000.0;
            p.y += 1500.0;
        }
        CHECK(delaunay(pts).edges() == delaunay(moved).edges());
    }
}

TEST_CASE("delaunay: error paths") {
    std::vector<Point> two{{0, 0}, {1, 1}};
    CHECK_THROWS_AS(delaunay(two), InputError);
    std::vector<Point> line{{0, 0}, {1, 1}, {2, 2}, {5, 5}};
    CHECK_THROWS_AS(delaunay(line), NumericError);
    std::vector<Point> dup{{0, 0}, {1, 0}, {0, 1}, {1, 0}};
    CHECK_THROWS_AS(delaunay(dup), InputError);
}

TEST_CASE("build_graph: distance cutoff and trivial sizes") {
    auto far = build_graph({node(0, 0), node(5000, 0)});
    CHECK(far.node_count() == 2);
    CHECK(far.edges.empty());

    auto near = build_graph({node(0, 0), node(3999, 0)});
    CHECK(near.edges.size() == 1);

    auto exact = build_graph({node(0, 0), node(4000, 0)});
    CHECK(exact.edges.empty());  // strict comparison

    auto single = build_graph({node(10, 10)});
    CHECK(single.node_count() == 1);
    CHECK(single.edges.empty());

    auto line = build_graph({node(0, 0), node(2000, 0), node(1000, 0), node(9000, 0)});
    using E = std::pair<std::size_t, std::size_t>;
    CHECK(line.edges == std::vector<E>{{0, 2}, {1, 2}});
}

TEST_CASE("build_graph: grid with 1024 px spacing") {
    std::vector<PatchNode> nodes;
    std::vector<oracle::P> op;
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) {
            nodes.push_back(node(512.0 + 1024.0 * i, 512.0 + 1024.0 * j));
            op.push_back({512.0 + 1024.0 * i, 512.0 + 1024.0 * j});
        }
    auto g = build_graph(nodes);
    CHECK(g.edges.size() == 19 * 20 * 2 + 19 * 19);
    for (auto [i, j] : g.edges) {
        CHECK(std::hypot(op[i].x - op[j].x, op[i].y - op[j].y) < 4000.0);
        CHECK(oracle::is_delaunay_edge(op, i, j));
    }
    CHECK(build_graph(nodes).edges == g.edges);
}

TEST_CASE("build_graph: cutoff removes long hull edges") {
    std::vector<PatchNode> nodes{node(0, 0), node(1000, 0), node(500, 800), node(20000, 0)};
    auto g = build_graph(nodes);
    for (auto [i, j] : g.edges) {
        CHECK(i != 3);
        CHECK(j != 3);
    }
    CHECK(g.edges.size() == 3);
}

TEST_CASE("build_graph: duplicate coordinates are rejected with offenders listed") {
    try {
        build_graph({node(0, 0), node(5, 5), node(0, 0)});
        FAIL("expected InputError");
    } catch (const InputError& e) {
        std::string msg = e.what();
        CHECK(msg.find("nodes 0 2") != std::string::npos);
    }
    CHECK_THROWS_AS(build_graph({node(-1, 0)}), InputError);
    CHECK_THROWS_AS(build_graph({node(0, 0, {1.0}), node(1, 0, {1.0, 2.0})}), InputError);
}

TEST_CASE("neighbor_lists") {
    auto empty = build_graph({node(0, 0), node(9000, 0)});
    for (const auto& l : neighbor_lists(empty)) CHECK(l.empty());

    auto path = assemble_graph({node(0, 0), node(1, 0), node(2, 0)}, {{1, 0}, {2, 1}});
    auto adj = neighbor_lists(path);
    CHECK(adj[1] == std::vector<std::size_t>{0, 2});

    std::vector<PatchNode> nodes;
    auto pts = random_points(50, 77);
    for (auto p : pts) nodes.push_back(node(p.x, p.y));
    auto g = build_graph(nodes);
    auto nl = neighbor_lists(g);
    for (std::size_t i = 0; i < nl.size(); ++i) {
        CHECK(std::is_sorted(nl[i].begin(), nl[i].end()));
        for (std::size_t j = 0; j < nl.size(); ++j) {
            bool ij = std::binary_search(nl[i].begin(), nl[i].end(), j);
            bool ji = std::binary_search(nl[j].begin(), nl[j].end(), i);
            CHECK(ij == ji);
        }
    }
    auto csr = to_csr(g.node_count(), g.edges);
    for (std::size_t i = 0; i < nl.size(); ++i) {
        std::vector<std::size_t> row(csr.indices.begin() + csr.offsets[i], csr.indices.begin() + csr.offsets[i + 1]);
        CHECK(row == nl[i]);
    }
}

TEST_CASE("assemble_graph rejects malformed edges") {
    std::vector<PatchNode> nodes{node(0, 0), node(1, 0)};
    CHECK_THROWS_AS(assemble_graph(nodes, {{0, 0}}), InputError);
    CHECK_THROWS_AS(assemble_graph(nodes, {{0, 2}}), InputError);
    CHECK_THROWS_AS(assemble_graph(nodes, {{0, 1}, {1, 0}}), InputError);
}
