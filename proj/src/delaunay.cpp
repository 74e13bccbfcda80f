#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>

#include "methylgraph/error.hpp"
#include "methylgraph/spatial_graph.hpp"

namespace methylgraph {

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

struct Face {
    std::array<std::size_t, 3> v;    // counter-clockwise; may contain the infinite vertex
    std::array<std::size_t, 3> nbr;  // nbr[k] lies across the edge opposite v[k]
    bool alive = true;
};

class Mesh {
public:
    explicit Mesh(std::span<const Point> pts) : pts_(pts), inf_(pts.size()) {}

    void build(const std::vector<std::size_t>& order) {
        // First triangle: order[0], order[1] and the first point not collinear with them.
        const std::size_t a = order[0], b = order[1];
        std::size_t pivot = kNone;
        for (std::size_t k = 2; k < order.size(); ++k) {
            if (orient2d(pts_[a], pts_[b], pts_[order[k]]) != 0) {
                pivot = k;
                break;
            }
        }
        if (pivot == kNone) throw NumericError("delaunay: all points are collinear");
        std::size_t c = order[pivot];
        std::size_t p0 = a, p1 = b;
        if (orient2d(pts_[a], pts_[b], pts_[c]) < 0) std::swap(p0, p1);
        seed_triangle(p0, p1, c);
        for (std::size_t k = 2; k < order.size(); ++k) {
            if (k == pivot) continue;
            insert(order[k]);
        }
    }

    std::vector<Triangle> real_triangles() const {
        std::vector<Triangle> out;
        for (const Face& f : faces_) {
            if (f.alive && !is_ghost(f)) out.push_back(f.v);
        }
        return out;
    }

private:
    bool is_ghost(const Face& f) const { return f.v[0] == inf_ || f.v[1] == inf_ || f.v[2] == inf_; }

    bool strictly_between(Point a, Point b, Point q) const {
        if (a.x != b.x) return (q.x > std::min(a.x, b.x)) && (q.x < std::max(a.x, b.x));
        return (q.y > std::min(a.y, b.y)) && (q.y < std::max(a.y, b.y));
    }

    bool in_conflict(const Face& f, std::size_t qi) const {
        const Point q = pts_[qi];
        for (std::size_t k = 0; k < 3; ++k) {
            if (f.v[k] == inf_) {
                const Point a = pts_[f.v[(k + 1) % 3]];
                const Point b = pts_[f.v[(k + 2) % 3]];
                const int o = orient2d(a, b, q);
                return o > 0 || (o == 0 && strictly_between(a, b, q));
            }
        }
        return incircle(pts_[f.v[0]], pts_[f.v[1]], pts_[f.v[2]], q) > 0;
    }

    std::size_t new_face(std::array<std::size_t, 3> v) {
        Face f{v, {kNone, kNone, kNone}, true};
        if (!free_.empty()) {
            const std::size_t id = free_.back();
            free_.pop_back();
            faces_[id] = f;
            return id;
        }
        faces_.push_back(f);
        return faces_.size() - 1;
    }

    void seed_triangle(std::size_t a, std::size_t b, std::size_t c) {
        const std::size_t t = new_face({a, b, c});
        // Ghost across edge (b, c) opposite a is (c, b, inf), etc.
        const std::size_t ga = new_face({c, b, inf_});
        const std::size_t gb = new_face({a, c, inf_});
        const std::size_t gc = new_face({b, a, inf_});
        faces_[t].nbr = {ga, gb, gc};
        faces_[ga].nbr = {gc, gb, t};
        faces_[gb].nbr = {ga, gc, t};
        faces_[gc].nbr = {gb, ga, t};
        last_ = t;
    }

    std::size_t locate(std::size_t qi) const {
        const Point q = pts_[qi];
        std::size_t t = last_;
        const std::size_t limit = 4 * faces_.size() + 16;
        for (std::size_t steps = 0; steps < limit; ++steps) {
            const Face& f = faces_[t];
            if (is_ghost(f)) return t;  // walked off the hull through a visible edge
            std::size_t next = kNone;
            for (std::size_t k = 0; k < 3; ++k) {
                if (orient2d(pts_[f.v[(k + 1) % 3]], pts_[f.v[(k + 2) % 3]], q) < 0) {
                    next = f.nbr[k];
                    break;
                }
            }
            if (next == kNone) return t;
            t = next;
        }
        for (std::size_t id = 0; id < faces_.size(); ++id) {
            if (faces_[id].alive && in_conflict(faces_[id], qi)) return id;
        }
        throw NumericError("delaunay: point location failed");
    }

    void insert(std::size_t qi) {
        const std::size_t start = locate(qi);
        if (!in_conflict(faces_[start], qi)) {
            throw NumericError("delaunay: located face is not in conflict with the inserted point");
        }

        struct BoundaryEdge {
            std::size_t u, v, outside, dead;
        };
        std::vector<std::size_t> cavity{start};
        std::vector<BoundaryEdge> boundary;
        ++stamp_;
        mark_.resize(faces_.size(), 0);
        mark_[start] = stamp_;
        for (std::size_t head = 0; head < cavity.size(); ++head) {
            const std::size_t t = cavity[head];
            for (std::size_t k = 0; k < 3; ++k) {
                const std::size_t n = faces_[t].nbr[k];
                if (mark_[n] == stamp_) continue;
                if (in_conflict(faces_[n], qi)) {
                    mark_[n] = stamp_;
                    cavity.push_back(n);
                } else {
                    boundary.push_back({faces_[t].v[(k + 1) % 3], faces_[t].v[(k + 2) % 3], n, t});
                }
            }
        }

        for (std::size_t t : cavity) faces_[t].alive = false;
        std::unordered_map<std::size_t, std::size_t> by_first, by_second;
        std::vector<std::size_t> created;
        created.reserve(boundary.size());
        for (const BoundaryEdge& e : boundary) {
            const std::size_t t = new_face({e.u, e.v, qi});
            if (t >= mark_.size()) mark_.resize(t + 1, 0);
            faces_[t].nbr[2] = e.outside;
            Face& out = faces_[e.outside];
            for (std::size_t k = 0; k < 3; ++k) {
                if (out.nbr[k] == e.dead) {
                    out.nbr[k] = t;
                    break;
                }
            }
            by_first[e.u] = t;
            by_second[e.v] = t;
            created.push_back(t);
        }
        for (std::size_t t : created) {
            Face& f = faces_[t];
            f.nbr[0] = by_first.at(f.v[1]);   // shares edge (v, q)
            f.nbr[1] = by_second.at(f.v[0]);  // shares edge (q, u)
            if (!is_ghost(f)) last_ = t;
        }
        // Dead slots are recycled from the next insertion on.
        free_.insert(free_.end(), cavity.begin(), cavity.end());
        if (mark_.size() < faces_.size()) mark_.resize(faces_.size(), 0);
    }

    std::span<const Point> pts_;
    std::size_t inf_;
    std::vector<Face> faces_;
    std::vector<std::size_t> free_;
    std::vector<std::size_t> mark_;
    std::size_t stamp_ = 0;
    std::size_t last_ = 0;
};

Triangle normalize(Triangle t, std::span<const Point> pts) {
    if (orient2d(pts[t[0]], pts[t[1]], pts[t[2]]) < 0) std::swap(t[1], t[2]);
    const auto lo = std::min_element(t.begin(), t.end()) - t.begin();
    std::rotate(t.begin(), t.begin() + lo, t.end());
    return t;
}

using Edge = std::pair<std::size_t, std::size_t>;

Edge make_edge(std::size_t a, std::size_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

std::size_t opposite(const Triangle& t, const Edge& e) {
    for (std::size_t v : t) {
        if (v != e.first && v != e.second) return v;
    }
    return kNone;
}

/// Re-diagonalize cocircular quadrilaterals so that the chosen diagonal has the smallest
/// possible minimum endpoint. Each flip strictly lowers the multiset of edge minima, so the
/// loop terminates.
void cocircular_flips(std::vector<Triangle>& tris, std::span<const Point> pts) {
    std::map<Edge, std::vector<std::size_t>> owners;
    std::vector<bool> alive(tris.size(), true);
    auto register_tri = [&](std::size_t id) {
        const Triangle& t = tris[id];
        for (std::size_t k = 0; k < 3; ++k) owners[make_edge(t[k], t[(k + 1) % 3])].push_back(id);
    };
    auto unregister_tri = [&](std::size_t id) {
        const Triangle& t = tris[id];
        for (std::size_t k = 0; k < 3; ++k) {
            auto& v = owners[make_edge(t[k], t[(k + 1) % 3])];
            v.erase(std::remove(v.begin(), v.end(), id), v.end());
        }
    };
    for (std::size_t id = 0; id < tris.size(); ++id) register_tri(id);

    std::deque<Edge> work;
    for (const auto& [e, ids] : owners) {
        if (ids.size() == 2) work.push_back(e);
    }
    while (!work.empty()) {
        const Edge e = work.front();
        work.pop_front();
        auto it = owners.find(e);
        if (it == owners.end() || it->second.size() != 2) continue;
        const std::size_t t1 = it->second[0], t2 = it->second[1];
        const std::size_t k1 = opposite(tris[t1], e), k2 = opposite(tris[t2], e);
        if (std::min(k1, k2) >= std::min(e.first, e.second)) continue;
        const Triangle& a = tris[t1];
        if (incircle(pts[a[0]], pts[a[1]], pts[a[2]], pts[k2]) != 0) continue;

        unregister_tri(t1);
        unregister_tri(t2);
        owners.erase(e);
        tris[t1] = normalize({k1, k2, e.first}, pts);
        tris[t2] = normalize({k1, k2, e.second}, pts);
        register_tri(t1);
        register_tri(t2);
        for (const Edge& outer : {make_edge(k1, e.first), make_edge(k2, e.first), make_edge(k1, e.second),
                                  make_edge(k2, e.second)}) {
            work.push_back(outer);
        }
    }
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> Triangulation::edges() const {
    std::vector<Edge> out;
    out.reserve(triangles.size() * 3);
    for (const Triangle& t : triangles) {
        for (std::size_t k = 0; k < 3; ++k) out.push_back(make_edge(t[k], t[(k + 1) % 3]));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Triangulation delaunay(std::span<const Point> points) {
    if (points.size() < 3) {
        throw InputError("delaunay: need at least 3 points, got " + std::to_string(points.size()));
    }
    for (const Point& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw InputError("delaunay: non-finite coordinate");
    }
    std::vector<std::size_t> order(points.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
        if (points[i].x != points[j].x) return points[i].x < points[j].x;
        if (points[i].y != points[j].y) return points[i].y < points[j].y;
        return i < j;
    });
    for (std::size_t k = 1; k < order.size(); ++k) {
        if (points[order[k]] == points[order[k - 1]]) {
            throw InputError("delaunay: duplicate points " + std::to_string(order[k - 1]) + " and " +
                             std::to_string(order[k]));
        }
    }

    Mesh mesh(points);
    mesh.build(order);
    Triangulation tri;
    tri.triangles = mesh.real_triangles();
    for (Triangle& t : tri.triangles) t = normalize(t, points);
    cocircular_flips(tri.triangles, points);
    std::sort(tri.triangles.begin(), tri.triangles.end());
    return tri;
}

}  // namespace methylgraph
