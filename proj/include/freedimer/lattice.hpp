#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

#include "freedimer/core.hpp"

namespace freedimer {

// ---------------------------------------------------------------------------
// Domain: finite set of half-plane lattice vertices whose row-0 part is the
// free boundary (monomers allowed there only).

struct Domain {
  std::vector<Pt> vertices;              // sorted by (y, x)
  std::unordered_map<Pt, int, PtHash> index;
  std::vector<std::pair<int, int>> edges;  // nearest-neighbour pairs, u < v
  std::vector<std::vector<int>> adj;
  std::vector<int> free_boundary;        // indices of row-0 vertices, x ascending
  Pt corner_left{}, corner_right{};      // monomer-corners: extremities of row 0
  std::vector<Pt> dimer_corners;

  bool contains(Pt p) const { return index.count(p) > 0; }
  int at(Pt p) const {
    auto it = index.find(p);
    if (it == index.end()) throw ValidationError("vertex not in domain: " + pt_str(p));
    return it->second;
  }
};

namespace detail {

// Augmenting-path bipartite matching; returns matched count.
inline int max_matching(const std::vector<std::vector<int>>& adj,
                        const std::vector<bool>& left) {
  int n = int(adj.size());
  std::vector<int> match(n, -1);
  std::vector<int> seen(n, -1);
  int pass = 0;
  std::function<bool(int)> tryk = [&](int u) -> bool {
    for (int v : adj[u]) {
      if (seen[v] == pass) continue;
      seen[v] = pass;
      if (match[v] < 0 || tryk(match[v])) {
        match[v] = u;
        match[u] = v;
        return true;
      }
    }
    return false;
  };
  int matched = 0;
  for (int u = 0; u < n; ++u) {
    if (left[u] && match[u] < 0) {
      ++pass;
      if (tryk(u)) ++matched;
    }
  }
  return matched;
}

}  // namespace detail

// Builds the shared structure (edges, adjacency, corners) from a vertex set.
inline Domain make_domain(std::vector<Pt> vertices) {
  Domain d;
  std::sort(vertices.begin(), vertices.end());
  vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
  d.vertices = std::move(vertices);
  for (int i = 0; i < int(d.vertices.size()); ++i) d.index[d.vertices[i]] = i;
  d.adj.resize(d.vertices.size());
  for (int i = 0; i < int(d.vertices.size()); ++i) {
    Pt p = d.vertices[i];
    for (Pt q : {Pt{p.x + 1, p.y}, Pt{p.x, p.y + 1}}) {
      auto it = d.index.find(q);
      if (it != d.index.end()) {
        d.edges.push_back({i, it->second});
        d.adj[i].push_back(it->second);
        d.adj[it->second].push_back(i);
      }
    }
    if (p.y == 0) d.free_boundary.push_back(i);
  }
  if (!d.free_boundary.empty()) {
    d.corner_left = d.vertices[d.free_boundary.front()];
    d.corner_right = d.vertices[d.free_boundary.back()];
  }
  // Dimer-corners: vertices (other than the two monomer-corners) of degree 2
  // or 4 that touch the outer face, i.e. have an incident unit square that is
  // not a bounded face of the domain.
  auto face_bounded = [&](int x, int y) {
    return d.contains({x, y}) && d.contains({x + 1, y}) &&
           d.contains({x, y + 1}) && d.contains({x + 1, y + 1});
  };
  for (int i = 0; i < int(d.vertices.size()); ++i) {
    Pt p = d.vertices[i];
    if (p == d.corner_left || p == d.corner_right) continue;
    int deg = int(d.adj[i].size());
    if (deg != 2 && deg != 4) continue;
    bool outer = false;
    for (int dx = -1; dx <= 0; ++dx)
      for (int dy = -1; dy <= 0; ++dy)
        if (!face_bounded(p.x + dx, p.y + dy)) outer = true;
    if (outer) d.dimer_corners.push_back(p);
  }
  return d;
}

// Invariant report; empty means valid.
inline std::vector<std::string> validate_domain(const Domain& d) {
  std::vector<std::string> bad;
  if (d.vertices.empty()) {
    bad.push_back("empty vertex set");
    return bad;
  }
  for (Pt p : d.vertices)
    if (p.y < 0) bad.push_back("vertex below the real line: " + pt_str(p));
  if (d.free_boundary.empty()) bad.push_back("no free boundary: row 0 is empty");
  for (size_t i = 0; i + 1 < d.free_boundary.size(); ++i) {
    Pt a = d.vertices[d.free_boundary[i]], b = d.vertices[d.free_boundary[i + 1]];
    if (b.x != a.x + 1)
      bad.push_back("free boundary not connected between " + pt_str(a) + " and " + pt_str(b));
  }
  int blacks = 0;
  std::vector<bool> left(d.vertices.size());
  for (size_t i = 0; i < d.vertices.size(); ++i) {
    left[i] = is_black(d.vertices[i]);
    blacks += left[i];
  }
  int whites = int(d.vertices.size()) - blacks;
  if (blacks != whites)
    bad.push_back("colour classes unbalanced: " + std::to_string(blacks) + " black vs " +
                  std::to_string(whites) + " white");
  else if (detail::max_matching(d.adj, left) != blacks)
    bad.push_back("no perfect matching exists");
  bool bc = false, wc = false;
  for (Pt p : d.dimer_corners) (is_black(p) ? bc : wc) = true;
  if (!bc) bad.push_back("no black dimer-corner");
  if (!wc) bad.push_back("no white dimer-corner");
  return bad;
}

inline void require_valid(const Domain& d) {
  auto bad = validate_domain(d);
  if (!bad.empty()) {
    std::string msg = "invalid domain:";
    for (auto& s : bad) msg += "\n  - " + s;
    throw ValidationError(msg);
  }
}

// Odd-by-odd rectangle with the right-hand half of the top row removed (the
// removed block has odd length so the colour classes balance).
inline Domain build_rectangle_domain(int width, int height) {
  if (width < 3 || height < 3 || width % 2 == 0 || height % 2 == 0)
    throw ValidationError("rectangle sides must be odd and >= 3");
  int r = (width / 2) % 2 == 1 ? width / 2 : width / 2 + 1;
  std::vector<Pt> v;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (!(y == height - 1 && x >= width - r)) v.push_back({x, y});
  Domain d = make_domain(std::move(v));
  require_valid(d);
  return d;
}

inline Domain build_explicit_domain(const std::vector<Pt>& pts, bool strict = true) {
  Domain d = make_domain(pts);
  if (strict) require_valid(d);
  return d;
}

// ---------------------------------------------------------------------------
// Augmentation: bottom row of triangles plus n_side triangles per side.

enum class CornerMode { explicit_zp, finite_n };

// z' = z/2 + sqrt(1 + z^2/4); satisfies z'^2 = z z' + 1.
inline double corner_weight(double z) {
  if (z <= 0) throw ValidationError("z must be positive");
  return z / 2 + std::sqrt(1 + z * z / 4);
}

// Z_{N+1} = z Z_N + Z_{N-1}, Z_0 = 1, Z_1 = z; Z_{N+1}/Z_N -> z'.
inline double segment_partition_function(int n_edges, double z) {
  if (n_edges < 0) throw ValidationError("n_edges must be >= 0");
  if (z <= 0) throw ValidationError("z must be positive");
  double a = 1, b = z;  // Z_0, Z_1
  if (n_edges == 0) return a;
  for (int i = 1; i < n_edges; ++i) {
    double c = z * b + a;
    a = b;
    b = c;
  }
  return b;
}

struct WeightedEdge {
  int u, v;   // indices into AugmentedDomain::vertices, u < v
  double w;
};

struct AugmentedDomain {
  Domain base;
  double z = 1;
  int n_side = 0;
  CornerMode mode = CornerMode::explicit_zp;

  std::vector<Pt> vertices;  // sorted by (y, x); row -1 first
  std::unordered_map<Pt, int, PtHash> index;
  std::vector<WeightedEdge> edges;
  std::vector<std::vector<std::pair<int, double>>> adj;  // (neighbour, weight)

  int k = 0;        // triangle count over the base boundary
  int apex_lo = 0, apex_hi = 0;  // x-range of row -1
  int top_lo = 0, top_hi = 0;    // x-range of row 0 (with side extensions)

  bool contains(Pt p) const { return index.count(p) > 0; }
  int at(Pt p) const {
    auto it = index.find(p);
    if (it == index.end()) throw ValidationError("vertex not in graph: " + pt_str(p));
    return it->second;
  }
  bool is_base(Pt p) const { return base.contains(p); }
  size_t size() const { return vertices.size(); }

  // Monomer weight of a boundary vertex (z' at the two corners in
  // explicit-z' mode).
  double monomer_weight(Pt p) const {
    if (mode == CornerMode::explicit_zp &&
        (p == base.corner_left || p == base.corner_right))
      return corner_weight(z);
    return z;
  }
};

// Triangle count over a free boundary of b vertices: the parity-valid member
// of {2b-1, 2b-2} (the number of non-horizontal-edge vertices left over must
// be even).
inline int triangle_count(int b) { return b % 2 == 1 ? 2 * b - 1 : 2 * b - 2; }

inline AugmentedDomain augment(const Domain& domain, double z, int n_side,
                               std::optional<CornerMode> mode_opt = std::nullopt) {
  if (z <= 0) throw ValidationError("z must be positive");
  if (n_side < 0) throw ValidationError("n_side must be >= 0");
  if (domain.free_boundary.empty()) throw ValidationError("domain has no free boundary");
  AugmentedDomain a;
  a.base = domain;
  a.z = z;
  a.n_side = n_side;
  a.mode = mode_opt.value_or(n_side == 0 ? CornerMode::explicit_zp : CornerMode::finite_n);
  if (a.mode == CornerMode::explicit_zp && n_side > 0)
    throw ValidationError("explicit-z' mode keeps no side triangles");
  if (a.mode == CornerMode::finite_n && n_side < 1)
    throw ValidationError("finite-N mode needs n_side >= 1");

  int b = int(domain.free_boundary.size());
  a.k = triangle_count(b) + 4 * n_side;
  a.top_lo = domain.corner_left.x - n_side;
  a.top_hi = domain.corner_right.x + n_side;
  a.apex_lo = (a.k % 2 == 1) ? a.top_lo - 1 : a.top_lo;
  a.apex_hi = a.top_hi;

  std::vector<Pt> verts = domain.vertices;
  for (int x = a.apex_lo; x <= a.apex_hi; ++x) verts.push_back({x, -1});
  for (int x = a.top_lo; x < domain.corner_left.x; ++x) verts.push_back({x, 0});
  for (int x = domain.corner_right.x + 1; x <= a.top_hi; ++x) verts.push_back({x, 0});
  std::sort(verts.begin(), verts.end());
  a.vertices = std::move(verts);
  for (int i = 0; i < int(a.vertices.size()); ++i) a.index[a.vertices[i]] = i;

  double zp = corner_weight(z);
  auto leg_weight = [&](Pt top) {
    if (a.mode == CornerMode::explicit_zp &&
        (top == domain.corner_left || top == domain.corner_right))
      return zp;
    return z;
  };
  auto add_edge = [&](Pt p, Pt q, double w) {
    int i = a.at(p), j = a.at(q);
    if (i > j) std::swap(i, j);
    a.edges.push_back({i, j, w});
  };

  for (auto [i, j] : domain.edges)
    add_edge(domain.vertices[i], domain.vertices[j], 1.0);
  for (int x = a.apex_lo; x < a.apex_hi; ++x) add_edge({x, -1}, {x + 1, -1}, 1.0);
  // Side-extension row-0 horizontals, including the junction to the base.
  for (int x = a.top_lo; x < domain.corner_left.x; ++x) add_edge({x, 0}, {x + 1, 0}, 1.0);
  for (int x = domain.corner_right.x; x < a.top_hi; ++x) add_edge({x, 0}, {x + 1, 0}, 1.0);
  // Legs: each row-0 vertex hangs a vertical leg and a down-left diagonal leg
  // onto row -1 (where the target apex exists).
  for (int x = a.top_lo; x <= a.top_hi; ++x) {
    double w = leg_weight({x, 0});
    if (x >= a.apex_lo && x <= a.apex_hi) add_edge({x, 0}, {x, -1}, w);
    if (x - 1 >= a.apex_lo) add_edge({x, 0}, {x - 1, -1}, w);
  }

  a.adj.resize(a.vertices.size());
  for (const auto& e : a.edges) {
    a.adj[e.u].push_back({e.v, e.w});
    a.adj[e.v].push_back({e.u, e.w});
  }
  return a;
}

// ---------------------------------------------------------------------------
// The triangle row as a standalone graph and its unique-completion property.

// Unique dimer cover of the k-triangle row with the given top vertices
// removed. Tops sit at x in [0, floor(k/2)], apexes one row below. Returns
// the cover's edges; throws NoCover (as ValidationError) on parity violation.
inline std::vector<std::pair<Pt, Pt>> complete_triangle_row(
    int k, const std::set<int>& removed) {
  if (k < 0) throw ValidationError("k must be >= 0");
  int b = k / 2 + 1;
  int apex_lo = (k % 2 == 1) ? -1 : 0;
  int apex_hi = b - 1;
  for (int t : removed)
    if (t < 0 || t >= b) throw ValidationError("removed top out of range");
  int n_verts = (b - int(removed.size())) + (apex_hi - apex_lo + 1);
  if (n_verts % 2 != 0) throw ValidationError("NoCover: parity violation");

  auto top_present = [&](int x) { return x >= 0 && x < b && !removed.count(x); };

  // Left-to-right scan; after column x the only open vertex can be apex(x).
  // head[x] = 1 if apex(x) enters column x+1 unmatched. Count completions to
  // certify uniqueness, then rebuild the matching along the unique path.
  int ncols = apex_hi - apex_lo + 1;
  // ways[c][s]: completions of columns >= c given state s of apex(c-1).
  // Computed right-to-left so the forward reconstruction can follow the
  // unique branch.
  std::vector<std::array<long long, 2>> ways(ncols + 1, {0, 0});
  ways[ncols] = {1, 0};  // all apexes must be consumed at the end
  auto clip = [](long long v) { return std::min(v, (long long)2); };
  for (int c = ncols - 1; c >= 0; --c) {
    int x = apex_lo + c;  // apex(x) and top(x) live in this column
    for (int prev_free = 0; prev_free < 2; ++prev_free) {
      if (c == 0 && prev_free == 1) continue;
      long long total = 0;
      bool t = top_present(x);
      // Choices: match top(x) to apex(x-1) (down-left leg) or apex(x)
      // (vertical leg); then apex(x-1), if still free, must take the
      // horizontal to apex(x).
      for (int tchoice = 0; tchoice < (t ? 2 : 1); ++tchoice) {
        bool pf = prev_free, af = true;  // apex(x) free
        if (t) {
          if (tchoice == 0) {            // down-left to apex(x-1)
            if (c == 0 || !pf) continue;
            pf = false;
          } else {                       // vertical to apex(x)
            af = false;
          }
        }
        if (pf) {                        // horizontal apex(x-1)-apex(x)
          if (!af) continue;
          af = false;
        }
        total += ways[c + 1][af ? 1 : 0];
      }
      ways[c][prev_free] = clip(total);
    }
  }
  if (ways[0][0] == 0) throw ValidationError("NoCover: no completion exists");
  if (ways[0][0] > 1) throw NumericalError("triangle row completion not unique");

  std::vector<std::pair<Pt, Pt>> cover;
  int state = 0;
  for (int c = 0; c < ncols; ++c) {
    int x = apex_lo + c;
    bool t = top_present(x);
    bool picked = false;
    for (int tchoice = 0; tchoice < (t ? 2 : 1) && !picked; ++tchoice) {
      bool pf = state, af = true;
      std::vector<std::pair<Pt, Pt>> local;
      if (t) {
        if (tchoice == 0) {
          if (c == 0 || !pf) continue;
          pf = false;
          local.push_back({{x, 0}, {x - 1, -1}});
        } else {
          af = false;
          local.push_back({{x, 0}, {x, -1}});
        }
      }
      if (pf) {
        if (!af) continue;
        af = false;
        local.push_back({{x - 1, -1}, {x, -1}});
      }
      if (ways[c + 1][af ? 1 : 0] > 0) {
        for (auto& e : local) cover.push_back(e);
        state = af ? 1 : 0;
        picked = true;
      }
    }
    if (!picked) throw NumericalError("triangle row reconstruction failed");
  }
  return cover;
}

// ---------------------------------------------------------------------------
// Boundary monomer-dimer covers and the bijection with covers of the
// augmented graph.

struct MdCover {
  std::vector<std::pair<Pt, Pt>> dimers;  // each pair normalized (min, max)
  std::vector<Pt> monomers;               // free-boundary vertices left open
};

inline std::vector<std::string> validate_cover(const Domain& d, const MdCover& m) {
  std::vector<std::string> bad;
  std::unordered_map<Pt, int, PtHash> cover_count;
  for (auto [p, q] : m.dimers) {
    if (!d.contains(p) || !d.contains(q)) {
      bad.push_back("dimer endpoint outside domain: " + pt_str(p) + "-" + pt_str(q));
      continue;
    }
    if (std::abs(p.x - q.x) + std::abs(p.y - q.y) != 1)
      bad.push_back("dimer is not a lattice edge: " + pt_str(p) + "-" + pt_str(q));
    cover_count[p]++;
    cover_count[q]++;
  }
  for (Pt p : m.monomers) {
    if (!d.contains(p) || p.y != 0)
      bad.push_back("monomer off the free boundary: " + pt_str(p));
    cover_count[p]++;
  }
  for (Pt p : d.vertices) {
    int c = cover_count.count(p) ? cover_count[p] : 0;
    if (c != 1) bad.push_back("vertex covered " + std::to_string(c) + " times: " + pt_str(p));
  }
  return bad;
}

inline double cover_weight(const AugmentedDomain& a, const MdCover& m) {
  double w = 1;
  for (Pt p : m.monomers) w *= a.monomer_weight(p);
  return w;
}

// Perfect matching of the augmented graph -> boundary monomer-dimer cover of
// the base (a boundary vertex is a monomer iff it is not matched inside the
// base).
inline MdCover cover_from_matching(const AugmentedDomain& a,
                                   const std::vector<std::pair<int, int>>& matching) {
  MdCover m;
  std::vector<bool> used(a.size(), false);
  for (auto [i, j] : matching) {
    if (i == j || i < 0 || j < 0 || i >= int(a.size()) || j >= int(a.size()))
      throw ValidationError("matching index out of range");
    if (used[i] || used[j]) throw ValidationError("matching reuses a vertex");
    used[i] = used[j] = true;
    Pt p = a.vertices[i], q = a.vertices[j];
    if (a.is_base(p) && a.is_base(q))
      m.dimers.push_back({std::min(p, q), std::max(p, q)});
    else if (a.is_base(p) && p.y == 0)
      m.monomers.push_back(p);
    else if (a.is_base(q) && q.y == 0)
      m.monomers.push_back(q);
    else if (a.is_base(p) || a.is_base(q))
      throw ValidationError("base vertex off the boundary matched outside the base");
  }
  for (size_t i = 0; i < a.size(); ++i)
    if (!used[i]) throw ValidationError("matching leaves " + pt_str(a.vertices[i]) + " open");
  std::sort(m.monomers.begin(), m.monomers.end());
  return m;
}

// Inverse direction (explicit-z' graphs only: the side strips of a finite-N
// graph admit many completions, so only the n_side = 0 row completion is
// unique). Weight is preserved: each monomer contributes exactly one leg.
inline std::vector<std::pair<int, int>> matching_from_cover(const AugmentedDomain& a,
                                                            const MdCover& m) {
  if (a.n_side != 0) throw ValidationError("bijection requires n_side = 0");
  auto bad = validate_cover(a.base, m);
  if (!bad.empty()) {
    std::string msg = "invalid cover:";
    for (auto& s : bad) msg += "\n  - " + s;
    throw ValidationError(msg);
  }
  std::set<int> removed;  // tops matched inside the base, in row coordinates
  std::set<Pt> mono(m.monomers.begin(), m.monomers.end());
  for (int idx : a.base.free_boundary) {
    Pt p = a.base.vertices[idx];
    if (!mono.count(p)) removed.insert(p.x - a.top_lo);
  }
  auto row = complete_triangle_row(a.k, removed);
  std::vector<std::pair<int, int>> matching;
  for (auto [p, q] : m.dimers) matching.push_back({a.at(p), a.at(q)});
  for (auto [p, q] : row) {
    Pt ps{p.x + a.top_lo, p.y}, qs{q.x + a.top_lo, q.y};
    matching.push_back({a.at(ps), a.at(qs)});
  }
  return matching;
}

}  // namespace freedimer
