// sgmapper - incremental 3D convex hull (quickhull) used by hidden-point
// removal. Produces outward face planes plus the set of input points that
// end up as hull vertices.

#pragma once

#include <sgmapper/geometry.hpp>

#include <Eigen/Geometry>

#include <array>
#include <cstddef>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

namespace sgmapper {

struct HullFace {
  Vec3 normal;    // unit, pointing outward
  double offset;  // plane is normal . x = offset
};

struct ConvexHull {
  std::vector<HullFace> faces;
  std::vector<std::size_t> vertex_indices;  // input points on the hull
  bool degenerate = false;                  // rank < 3 input; no faces built

  /// Distance from an interior point to the nearest face plane
  /// (lower bound on the distance to the hull surface).
  double plane_distance(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    for (const HullFace& f : faces) best = std::min(best, f.offset - f.normal.dot(q));
    return best;
  }
};

namespace detail {

class QuickHull {
 public:
  explicit QuickHull(std::span<const Vec3> pts) : pts_(pts) {}

  ConvexHull run() {
    ConvexHull out;
    const std::size_t n = pts_.size();
    if (n < 4) {
      out.degenerate = true;
      return out;
    }
    Vec3 lo = pts_[0], hi = pts_[0];
    for (const Vec3& p : pts_) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    eps_ = 1e-10 * std::max((hi - lo).norm(), 1e-300);

    if (!build_initial_simplex()) {
      out.degenerate = true;
      return out;
    }
    assign_conflicts();
    process();

    std::vector<char> used(n, 0);
    for (const Face& f : faces_) {
      if (!f.alive) continue;
      out.faces.push_back(HullFace{f.normal, f.offset});
      for (int v : f.v) used[static_cast<std::size_t>(v)] = 1;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (used[i]) out.vertex_indices.push_back(i);
    return out;
  }

 private:
  struct Face {
    std::array<int, 3> v{-1, -1, -1};    // CCW from outside
    std::array<int, 3> nbr{-1, -1, -1};  // nbr[i] shares edge (v[i], v[(i+1)%3])
    Vec3 normal{0, 0, 0};
    double offset = 0.0;
    bool alive = true;
    std::vector<int> conflicts;
  };

  double dist(const Face& f, const Vec3& p) const { return f.normal.dot(p) - f.offset; }

  bool compute_plane(Face& f) {
    const Vec3& a = pts_[f.v[0]];
    const Vec3 n = (pts_[f.v[1]] - a).cross(pts_[f.v[2]] - a);
    const double len = n.norm();
    if (len < 1e-300) return false;
    f.normal = n / len;
    f.offset = f.normal.dot(a);
    return true;
  }

  bool build_initial_simplex() {
    const std::size_t n = pts_.size();
    // Two extreme points along the most spread axis.
    int i0 = 0, i1 = 0;
    double best = -1.0;
    for (int axis = 0; axis < 3; ++axis) {
      int lo = 0, hi = 0;
      for (int i = 1; i < static_cast<int>(n); ++i) {
        if (pts_[i][axis] < pts_[lo][axis]) lo = i;
        if (pts_[i][axis] > pts_[hi][axis]) hi = i;
      }
      const double spread = pts_[hi][axis] - pts_[lo][axis];
      if (spread > best) {
        best = spread;
        i0 = lo;
        i1 = hi;
      }
    }
    if (best <= eps_) return false;

    // Farthest from the line (i0, i1).
    const Vec3 dir = (pts_[i1] - pts_[i0]).normalized();
    int i2 = -1;
    best = eps_;
    for (int i = 0; i < static_cast<int>(n); ++i) {
      const Vec3 rel = pts_[i] - pts_[i0];
      const double d = (rel - rel.dot(dir) * dir).norm();
      if (d > best) {
        best = d;
        i2 = i;
      }
    }
    if (i2 < 0) return false;

    // Farthest from the plane (i0, i1, i2).
    const Vec3 pn = (pts_[i1] - pts_[i0]).cross(pts_[i2] - pts_[i0]).normalized();
    const double po = pn.dot(pts_[i0]);
    int i3 = -1;
    best = eps_;
    for (int i = 0; i < static_cast<int>(n); ++i) {
      const double d = std::abs(pn.dot(pts_[i]) - po);
      if (d > best) {
        best = d;
        i3 = i;
      }
    }
    if (i3 < 0) return false;

    const Vec3 inner = 0.25 * (pts_[i0] + pts_[i1] + pts_[i2] + pts_[i3]);
    const std::array<std::array<int, 3>, 4> tris = {{{i0, i1, i2}, {i0, i1, i3}, {i0, i2, i3}, {i1, i2, i3}}};
    for (auto tri : tris) {
      Face f;
      f.v = tri;
      if (!compute_plane(f)) return false;
      if (dist(f, inner) > 0.0) {  // flip to make the normal outward
        std::swap(f.v[1], f.v[2]);
        compute_plane(f);
      }
      faces_.push_back(std::move(f));
    }
    link_all_neighbors();
    return true;
  }

  void link_all_neighbors() {
    std::unordered_map<std::uint64_t, std::pair<int, int>> edges;  // directed edge -> (face, slot)
    auto key = [](int a, int b) {
      return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
             static_cast<std::uint32_t>(b);
    };
    for (int fi = 0; fi < static_cast<int>(faces_.size()); ++fi) {
      if (!faces_[fi].alive) continue;
      for (int e = 0; e < 3; ++e)
        edges[key(faces_[fi].v[e], faces_[fi].v[(e + 1) % 3])] = {fi, e};
    }
    for (auto& [k, fe] : edges) {
      const int a = static_cast<int>(k >> 32);
      const int b = static_cast<int>(k & 0xffffffffu);
      faces_[fe.first].nbr[fe.second] = edges.at(key(b, a)).first;
    }
  }

  void assign_conflicts() {
    for (int i = 0; i < static_cast<int>(pts_.size()); ++i) {
      for (Face& f : faces_) {
        if (dist(f, pts_[i]) > eps_) {
          f.conflicts.push_back(i);
          break;
        }
      }
    }
    for (int fi = 0; fi < static_cast<int>(faces_.size()); ++fi)
      if (!faces_[fi].conflicts.empty()) pending_.push_back(fi);
  }

  void process() {
    while (!pending_.empty()) {
      const int fi = pending_.back();
      pending_.pop_back();
      if (!faces_[fi].alive || faces_[fi].conflicts.empty()) continue;

      // Farthest conflict point becomes the next apex.
      int apex = faces_[fi].conflicts[0];
      double best = dist(faces_[fi], pts_[apex]);
      for (int c : faces_[fi].conflicts) {
        const double d = dist(faces_[fi], pts_[c]);
        if (d > best) {
          best = d;
          apex = c;
        }
      }
      const Vec3& p = pts_[apex];

      // Visible set (DFS over adjacency) and its boundary, the horizon.
      std::vector<int> visible;
      std::vector<char> seen(faces_.size(), 0);
      std::vector<std::pair<int, int>> horizon;  // (visible face, edge slot)
      std::vector<int> stack{fi};
      seen[fi] = 1;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        visible.push_back(cur);
        for (int e = 0; e < 3; ++e) {
          const int nb = faces_[cur].nbr[e];
          if (dist(faces_[nb], p) > eps_) {
            if (!seen[nb]) {
              seen[nb] = 1;
              stack.push_back(nb);
            }
          } else {
            horizon.emplace_back(cur, e);
          }
        }
      }

      // New fan of faces from the horizon edges to the apex. Planes are
      // validated for the whole fan before any adjacency changes, so a
      // degenerate apex leaves the hull untouched.
      std::vector<Face> fan;
      fan.reserve(horizon.size());
      bool ok = true;
      for (auto [vf, e] : horizon) {
        Face nf;
        nf.v = {faces_[vf].v[e], faces_[vf].v[(e + 1) % 3], apex};
        nf.nbr = {-1, -1, -1};
        if (!compute_plane(nf)) {
          ok = false;
          break;
        }
        fan.push_back(std::move(nf));
      }
      if (!ok) {
        // Apex numerically coplanar with the horizon; drop it and retry.
        auto& cf = faces_[fi].conflicts;
        cf.erase(std::find(cf.begin(), cf.end(), apex));
        if (!cf.empty()) pending_.push_back(fi);
        continue;
      }

      std::vector<int> fresh;
      fresh.reserve(fan.size());
      std::unordered_map<std::uint64_t, std::pair<int, int>> open_edges;
      auto key = [](int a, int b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
      };
      for (std::size_t h = 0; h < horizon.size(); ++h) {
        const auto [vf, e] = horizon[h];
        const int outside = faces_[vf].nbr[e];
        const int nfi = static_cast<int>(faces_.size());
        faces_.push_back(std::move(fan[h]));
        fresh.push_back(nfi);
        // Stitch across the horizon edge.
        faces_[nfi].nbr[0] = outside;
        for (int oe = 0; oe < 3; ++oe)
          if (faces_[outside].nbr[oe] == vf) faces_[outside].nbr[oe] = nfi;
        open_edges[key(faces_[nfi].v[1], apex)] = {nfi, 1};
        open_edges[key(apex, faces_[nfi].v[0])] = {nfi, 2};
      }
      // Stitch new faces to each other around the apex.
      for (int nfi : fresh)
        for (int e = 1; e < 3; ++e)
          if (faces_[nfi].nbr[e] < 0) {
            const int a = faces_[nfi].v[e];
            const int b = faces_[nfi].v[(e + 1) % 3];
            faces_[nfi].nbr[e] = open_edges.at(key(b, a)).first;
          }

      // Retire visible faces and re-home their conflict points.
      std::vector<int> orphans;
      for (int vf : visible) {
        faces_[vf].alive = false;
        orphans.insert(orphans.end(), faces_[vf].conflicts.begin(), faces_[vf].conflicts.end());
        faces_[vf].conflicts.clear();
      }
      for (int c : orphans) {
        if (c == apex) continue;
        for (int nfi : fresh) {
          if (dist(faces_[nfi], pts_[c]) > eps_) {
            faces_[nfi].conflicts.push_back(c);
            break;
          }
        }
      }
      for (int nfi : fresh)
        if (!faces_[nfi].conflicts.empty()) pending_.push_back(nfi);
    }
  }

  std::span<const Vec3> pts_;
  std::vector<Face> faces_;
  std::vector<int> pending_;
  double eps_ = 0.0;
};

}  // namespace detail

inline ConvexHull convex_hull(std::span<const Vec3> points) {
  return detail::QuickHull(points).run();
}

}  // namespace sgmapper
