#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "freedimer/kasteleyn.hpp"

namespace freedimer {

// ---------------------------------------------------------------------------
// Faces of the base domain. A face is named by its lower-left corner; it
// exists when all four corners do (nearest-neighbour edges then follow).

inline bool has_face(const Domain& d, Pt f) {
  return d.contains(f) && d.contains({f.x + 1, f.y}) && d.contains({f.x, f.y + 1}) &&
         d.contains({f.x + 1, f.y + 1});
}

inline std::vector<Pt> face_set(const Domain& d) {
  std::vector<Pt> out;
  for (Pt v : d.vertices)
    if (has_face(d, v)) out.push_back(v);
  return out;
}

namespace detail {

// Directed lattice edges packed into 64 bits (coordinates stay far below the
// 16-bit bias).
inline uint64_t directed_key(Pt a, Pt b) {
  auto u16 = [](int v) { return uint64_t(uint16_t(v + 32768)); };
  return (u16(a.x) << 48) | (u16(a.y) << 32) | (u16(b.x) << 16) | u16(b.y);
}

// Primal edge crossed when stepping between two adjacent faces.
inline std::pair<Pt, Pt> crossed_edge(Pt f, Pt g) {
  int dx = g.x - f.x, dy = g.y - f.y;
  if (dx == 1 && dy == 0) return {{f.x + 1, f.y}, {f.x + 1, f.y + 1}};
  if (dx == -1 && dy == 0) return {{f.x, f.y}, {f.x, f.y + 1}};
  if (dx == 0 && dy == 1) return {{f.x, f.y + 1}, {f.x + 1, f.y + 1}};
  if (dx == 0 && dy == -1) return {{f.x, f.y}, {f.x + 1, f.y}};
  throw ValidationError("faces not adjacent: " + pt_str(f) + " " + pt_str(g));
}

// +1 when the black endpoint lies to the right of the dual step, i.e. the
// white-to-black direction rotated a quarter turn counterclockwise matches
// the step.
inline int crossing_sign(Pt f, Pt g) {
  auto [p, q] = crossed_edge(f, g);
  Pt w = p, b = q;
  if (is_black(w)) std::swap(w, b);
  Pt v{b.x - w.x, b.y - w.y};
  Pt rot{-v.y, v.x};
  return (rot.x == g.x - f.x && rot.y == g.y - f.y) ? 1 : -1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Reference flow: the expected dimer flow, one unit from white to black on
// each edge. Triangle legs joining equal colours fall back to the frozen
// vertex order, matching the correlation-formula convention.

using FlowMap = std::unordered_map<uint64_t, double>;

inline double flow_at(const FlowMap& flow, Pt a, Pt b) {
  auto it = flow.find(detail::directed_key(a, b));
  if (it == flow.end())
    throw ValidationError("no flow on edge " + pt_str(a) + "-" + pt_str(b));
  return it->second;
}

inline FlowMap reference_flow(const AugmentedDomain& a, const KasteleynSystem& sys) {
  // Orient each edge (w, b): white to black where colours differ, frozen
  // order otherwise. Group by w so one linear solve covers all edges at w.
  std::vector<std::vector<std::pair<Pt, Pt>>> batches;
  std::unordered_map<Pt, size_t, PtHash> source;
  for (const auto& e : a.edges) {
    Pt p = a.vertices[e.u], q = a.vertices[e.v];
    Pt w = p, b = q;
    if (is_black(p) != is_black(q)) {
      if (is_black(w)) std::swap(w, b);
    }
    auto [it, fresh] = source.try_emplace(w, batches.size());
    if (fresh) batches.emplace_back();
    batches[it->second].push_back({w, b});
  }
  FlowMap flow;
  for (const auto& batch : batches) {
    Eigen::VectorXcd col = sys.column(batch.front().first);
    for (auto [w, b] : batch) {
      cd val = sys.k_entry(w, b) * col[sys.index(b)];
      if (std::abs(val.imag()) > 1e-9)
        throw NumericalError("flow has imaginary residue " + std::to_string(val.imag()));
      flow[detail::directed_key(w, b)] = val.real();
      flow[detail::directed_key(b, w)] = -val.real();
    }
  }
  return flow;
}

// ---------------------------------------------------------------------------
// Height function of a cover, relative to a base face. Increments across a
// dual step are sign * (1_{e in M} - omega0(e)); the flow is closed because
// every vertex of the augmented graph is covered exactly once, so the value
// is independent of the breadth-first order.

struct HeightField {
  std::vector<Pt> faces;  // sorted by (y, x)
  std::unordered_map<Pt, int, PtHash> index;
  std::vector<double> value;
  Pt base{};

  double at(Pt f) const {
    auto it = index.find(f);
    if (it == index.end()) throw ValidationError("not a face: " + pt_str(f));
    return value[it->second];
  }
};

namespace detail {

inline std::unordered_set<uint64_t> cover_edge_set(const MdCover& m) {
  std::unordered_set<uint64_t> in;
  for (auto [p, q] : m.dimers) {
    in.insert(directed_key(p, q));
    in.insert(directed_key(q, p));
  }
  return in;
}

// sign * (1_{e in M} - omega0) for the step f -> g.
inline double height_increment(const FlowMap& flow,
                               const std::unordered_set<uint64_t>& cover, Pt f, Pt g) {
  auto [p, q] = crossed_edge(f, g);
  Pt w = p, b = q;
  if (is_black(w)) std::swap(w, b);
  double present = cover.count(directed_key(w, b)) ? 1.0 : 0.0;
  return detail::crossing_sign(f, g) * (present - flow_at(flow, w, b));
}

}  // namespace detail

inline HeightField build_height_field(const AugmentedDomain& a, const FlowMap& flow,
                                      const MdCover& cover, Pt base) {
  HeightField h;
  h.faces = face_set(a.base);
  for (size_t i = 0; i < h.faces.size(); ++i) h.index[h.faces[i]] = int(i);
  if (!h.index.count(base)) throw ValidationError("base is not a face: " + pt_str(base));
  h.base = base;
  h.value.assign(h.faces.size(), 0.0);

  auto in_cover = detail::cover_edge_set(cover);
  std::vector<char> seen(h.faces.size(), 0);
  std::vector<Pt> queue{base};
  seen[h.index.at(base)] = 1;
  const Pt steps[4] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  for (size_t head = 0; head < queue.size(); ++head) {
    Pt f = queue[head];
    double hf = h.value[h.index.at(f)];
    for (Pt s : steps) {
      Pt g{f.x + s.x, f.y + s.y};
      auto it = h.index.find(g);
      if (it == h.index.end()) continue;
      double hg = hf + detail::height_increment(flow, in_cover, f, g);
      if (seen[it->second]) {
        if (std::abs(hg - h.value[it->second]) > 1e-9)
          throw NumericalError("height increments fail to close at " + pt_str(g));
        continue;
      }
      seen[it->second] = 1;
      h.value[it->second] = hg;
      queue.push_back(g);
    }
  }
  for (size_t i = 0; i < h.faces.size(); ++i)
    if (!seen[i])
      throw ValidationError("dual graph disconnected at face " + pt_str(h.faces[i]));
  return h;
}

inline double height_difference(const AugmentedDomain& a, const FlowMap& flow,
                                const MdCover& cover, Pt fa, Pt fb) {
  HeightField h = build_height_field(a, flow, cover, fb);
  return h.at(fa) - h.at(fb);
}

// ---------------------------------------------------------------------------
// Truncated-correlation moments of height differences. A request carries k
// face pairs and disjoint axis-parallel dual paths; the moment is the k-fold
// sum over path-edge tuples of the centered correlation, each edge entering
// with the sign it contributes to h(a_i) - h(b_i).

struct MomentRequest {
  std::vector<std::pair<Pt, Pt>> pairs;  // faces (a_i, b_i)
  std::vector<std::vector<Pt>> paths;    // face sequences, a_i first
  double delta = 1.0;
};

// Truncation box realizing a half-plane window around a continuum
// configuration: free bottom row on the real axis, margin of four
// configuration diameters on the other sides.
struct MomentBox {
  AugmentedDomain aug;
  std::unique_ptr<KasteleynSystem> sys;
  int x0 = 0;  // lattice x of the continuum origin
  double delta = 1.0;
};

namespace detail {

inline std::vector<cd> flatten_pairs(const std::vector<std::pair<cd, cd>>& pairs) {
  std::vector<cd> pts;
  for (auto [a, b] : pairs) {
    pts.push_back(a);
    pts.push_back(b);
  }
  return pts;
}

inline void check_point_configuration(const std::vector<cd>& pts) {
  for (cd p : pts)
    if (!(p.imag() > 0)) throw ValidationError("points must lie above the real axis");
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j)
      if (pts[i] == pts[j]) throw ValidationError("coincident points");
}

inline double configuration_diameter(const std::vector<cd>& pts) {
  double d = 0;
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) d = std::max(d, std::abs(pts[i] - pts[j]));
  return d;
}

}  // namespace detail

inline MomentBox make_moment_box(const std::vector<std::pair<cd, cd>>& pairs,
                                 double delta, double z) {
  if (!(delta > 0) || !(z > 0)) throw ValidationError("delta and z must be positive");
  auto pts = detail::flatten_pairs(pairs);
  if (pts.empty()) throw ValidationError("empty configuration");
  detail::check_point_configuration(pts);
  double diam = detail::configuration_diameter(pts);
  double margin = 4 * std::max(diam, 0.5);
  double lo = pts.front().real(), hi = lo, top = 0;
  for (cd p : pts) {
    lo = std::min(lo, p.real());
    hi = std::max(hi, p.real());
    top = std::max(top, p.imag());
  }
  int x0 = int(std::lround((margin - lo) / delta)) + 1;
  int width = x0 + int(std::lround((hi + margin) / delta)) + 2;
  if (width % 2 == 0) ++width;
  int height = int(std::lround((top + margin) / delta)) + 2;
  if (height % 2 == 0) ++height;
  MomentBox box;
  Domain d = build_rectangle_domain(width, height);
  box.aug = augment(d, z, 0);
  box.sys = std::make_unique<KasteleynSystem>(box.aug);
  box.x0 = x0;
  box.delta = delta;
  return box;
}

// Face whose centre is nearest to the continuum point.
inline Pt face_of(const MomentBox& box, cd w) {
  Pt f{box.x0 + int(std::lround(w.real() / box.delta - 0.5)),
       int(std::lround(w.imag() / box.delta - 0.5))};
  if (!has_face(box.aug.base, f))
    throw ValidationError("point maps outside the box: face " + pt_str(f));
  return f;
}

inline cd face_centre(const MomentBox& box, Pt f) {
  return box.delta * cd(f.x - box.x0 + 0.5, f.y + 0.5);
}

namespace detail {

inline std::vector<Pt> l_shaped_path(Pt a, Pt b, bool horizontal_first) {
  std::vector<Pt> path{a};
  Pt cur = a;
  auto run = [&](int dx, int dy, int target) {
    while ((dx ? cur.x : cur.y) != target) {
      cur = {cur.x + dx * (target > cur.x ? 1 : -1) * (dx ? 1 : 0),
             cur.y + dy * (target > cur.y ? 1 : -1) * (dy ? 1 : 0)};
      path.push_back(cur);
    }
  };
  if (horizontal_first) {
    run(1, 0, b.x);
    run(0, 1, b.y);
  } else {
    run(0, 1, b.y);
    run(1, 0, b.x);
  }
  return path;
}

inline int face_chebyshev(Pt a, Pt b) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y));
}

inline bool paths_separated(const std::vector<std::vector<Pt>>& paths, int min_steps) {
  for (size_t i = 0; i < paths.size(); ++i)
    for (size_t j = i + 1; j < paths.size(); ++j)
      for (Pt f : paths[i])
        for (Pt g : paths[j])
          if (face_chebyshev(f, g) < min_steps) return false;
  return true;
}

}  // namespace detail

// L-shaped dual paths with straight portions of even length whenever the
// face parities allow it; leftovers stay in the sum. Paths must clear the
// pairwise separation floor of ceil(rho / (2 delta)) lattice steps.
inline MomentRequest make_moment_request(const MomentBox& box,
                                         const std::vector<std::pair<cd, cd>>& pairs,
                                         double rho = 0.5) {
  auto pts = detail::flatten_pairs(pairs);
  detail::check_point_configuration(pts);
  for (cd p : pts)
    if (p.imag() < rho) throw ValidationError("configuration dips below rho");
  MomentRequest req;
  req.delta = box.delta;
  for (auto [a, b] : pairs) {
    req.pairs.push_back({face_of(box, a), face_of(box, b)});
    req.paths.push_back(detail::l_shaped_path(req.pairs.back().first,
                                              req.pairs.back().second,
                                              req.paths.size() % 2 == 0));
  }
  int min_steps = int(std::ceil(rho / (2 * box.delta)));
  if (!detail::paths_separated(req.paths, min_steps)) {
    for (auto& path : req.paths)
      path = detail::l_shaped_path(path.front(), path.back(), false);
    if (!detail::paths_separated(req.paths, min_steps))
      throw ValidationError("dual paths violate the separation floor");
  }
  return req;
}

namespace detail {

// One path edge as it enters h(a_i) - h(b_i): centered indicator of (w, b)
// weighted by sigma.
struct SignedEdge {
  Pt w, b;
  int sigma;
};

inline std::vector<SignedEdge> signed_path_edges(const std::vector<Pt>& path) {
  std::vector<SignedEdge> out;
  for (size_t t = 0; t + 1 < path.size(); ++t) {
    auto [p, q] = crossed_edge(path[t], path[t + 1]);
    Pt w = p, b = q;
    if (is_black(w)) std::swap(w, b);
    // walking a -> b accumulates h(b) - h(a), hence the global flip
    out.push_back({w, b, -crossing_sign(path[t], path[t + 1])});
  }
  return out;
}

// Dense table of K^{-1} entries between the listed vertices, one sparse
// solve per vertex.
struct InverseTable {
  std::vector<Pt> pts;
  std::unordered_map<Pt, int, PtHash> at;
  Eigen::MatrixXcd kinv;  // kinv(i, j) = K^{-1}(p_i, p_j)

  cd coupling(Pt u, Pt v) const { return kinv(at.find(v)->second, at.find(u)->second); }
};

inline InverseTable build_inverse_table(const KasteleynSystem& sys,
                                        std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  InverseTable t;
  t.pts = pts;
  for (size_t i = 0; i < pts.size(); ++i) t.at[pts[i]] = int(i);
  t.kinv.resize(pts.size(), pts.size());
  for (size_t j = 0; j < pts.size(); ++j) {
    Eigen::VectorXcd col = sys.column(pts[j]);
    for (size_t i = 0; i < pts.size(); ++i) t.kinv(i, j) = col[sys.index(pts[i])];
  }
  return t;
}

// E[prod_i (1_{e_i in M} - p_i)] for vertex-disjoint edges, from the
// Pfaffian expansion with the own-pairs removed.
inline double truncated_from_table(const KasteleynSystem& sys, const InverseTable& t,
                                   const std::vector<SignedEdge>& edges) {
  int n = int(edges.size()) * 2;
  if (n == 2) return 0.0;
  std::vector<Pt> pts;
  for (const auto& e : edges) {
    pts.push_back(e.w);
    pts.push_back(e.b);
  }
  {
    auto sorted = pts;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ValidationError("repeated vertex in edge tuple");
  }
  cd a_e = 1.0;
  for (const auto& e : edges) a_e *= sys.k_entry(e.w, e.b);
  std::vector<std::vector<std::pair<int, int>>> pairings;
  std::vector<std::pair<int, int>> cur;
  std::vector<bool> used(n, false);
  all_pairings(n, cur, used, pairings);
  cd sum = 0;
  for (const auto& m : pairings) {
    bool restricted = true;
    for (auto [u, v] : m)
      if (u / 2 == v / 2) restricted = false;
    if (!restricted) continue;
    cd term = double(pairing_sign(m));
    for (auto [u, v] : m) term *= t.coupling(pts[u], pts[v]);
    sum += term;
  }
  cd val = a_e * sum;
  if (std::abs(val.imag()) > 1e-9)
    throw NumericalError("correlation has imaginary residue " + std::to_string(val.imag()));
  return val.real();
}

inline double edge_probability_from_table(const KasteleynSystem& sys,
                                          const InverseTable& t, const SignedEdge& e) {
  cd val = sys.k_entry(e.w, e.b) * t.coupling(e.w, e.b);
  if (std::abs(val.imag()) > 1e-9)
    throw NumericalError("probability has imaginary residue " + std::to_string(val.imag()));
  return val.real();
}

}  // namespace detail

// Exact moment E[prod_i (h(a_i) - h(b_i))]. The tuple sum runs over one edge
// per path; evaluations are pure, so the outermost path loop is safe to
// parallelize, and the reduction order below is fixed.
inline double exact_height_moment(const AugmentedDomain& aug, const KasteleynSystem& sys,
                                  const MomentRequest& req) {
  if (req.pairs.size() != req.paths.size() || req.pairs.empty())
    throw ValidationError("malformed moment request");
  std::vector<std::vector<detail::SignedEdge>> edges;
  std::vector<Pt> all;
  for (size_t i = 0; i < req.paths.size(); ++i) {
    const auto& path = req.paths[i];
    if (path.size() < 2 || !(path.front() == req.pairs[i].first) ||
        !(path.back() == req.pairs[i].second))
      throw ValidationError("path does not join its face pair");
    for (Pt f : path)
      if (!has_face(aug.base, f))
        throw ValidationError("path leaves the box at face " + pt_str(f));
    edges.push_back(detail::signed_path_edges(path));
    for (const auto& e : edges.back()) {
      all.push_back(e.w);
      all.push_back(e.b);
    }
  }
  for (const auto& path_edges : edges)
    if (path_edges.empty()) return 0.0;  // a_i == b_i: a zero factor
  detail::InverseTable table = detail::build_inverse_table(sys, all);

  int k = int(edges.size());
  std::vector<size_t> t(k, 0);
  double total = 0;
  while (true) {
    std::vector<detail::SignedEdge> tuple;
    int sigma = 1;
    for (int i = 0; i < k; ++i) {
      tuple.push_back(edges[i][t[i]]);
      sigma *= tuple.back().sigma;
    }
    total += sigma * detail::truncated_from_table(sys, table, tuple);
    int i = k - 1;
    while (i >= 0 && ++t[i] == edges[i].size()) t[i--] = 0;
    if (i < 0) break;
  }
  return total;
}

inline double exact_height_moment(const MomentBox& box, const MomentRequest& req) {
  return exact_height_moment(box.aug, *box.sys, req);
}

// Variance of h(a) - h(b) along one dual path: the k = 2 tuple sum with the
// same path twice, with the overlapping cases given by their exact values
// (dimers never share a vertex).
inline double height_variance(const AugmentedDomain& aug, const KasteleynSystem& sys,
                              const std::vector<Pt>& path) {
  for (Pt f : path)
    if (!has_face(aug.base, f))
      throw ValidationError("path leaves the box at face " + pt_str(f));
  auto edges = detail::signed_path_edges(path);
  detail::InverseTable table;
  {
    std::vector<Pt> all;
    for (const auto& e : edges) {
      all.push_back(e.w);
      all.push_back(e.b);
    }
    table = detail::build_inverse_table(sys, all);
  }
  std::vector<double> p(edges.size());
  for (size_t i = 0; i < edges.size(); ++i)
    p[i] = detail::edge_probability_from_table(sys, table, edges[i]);
  double total = 0;
  for (size_t i = 0; i < edges.size(); ++i)
    for (size_t j = 0; j < edges.size(); ++j) {
      double cov;
      if (i == j) {
        cov = p[i] * (1 - p[i]);
      } else if (edges[i].w == edges[j].w || edges[i].w == edges[j].b ||
                 edges[i].b == edges[j].w || edges[i].b == edges[j].b) {
        cov = -p[i] * p[j];
      } else {
        cov = detail::truncated_from_table(sys, table, {edges[i], edges[j]});
      }
      total += edges[i].sigma * edges[j].sigma * cov;
    }
  return total;
}

// ---------------------------------------------------------------------------
// Gaussian predictions on the upper half plane.

inline double neumann_green(cd x, cd y) {
  if (x == y) throw ValidationError("coincident points");
  return -std::log(std::abs(x - y)) - std::log(std::abs(x - std::conj(y)));
}

namespace detail {

inline void perfect_matchings(int k, std::vector<int>& left,
                              std::vector<std::pair<int, int>>& cur,
                              std::vector<std::vector<std::pair<int, int>>>& out) {
  if (left.empty()) {
    out.push_back(cur);
    return;
  }
  int a = left.front();
  for (size_t j = 1; j < left.size(); ++j) {
    int b = left[j];
    std::vector<int> rest;
    for (size_t l = 1; l < left.size(); ++l)
      if (l != j) rest.push_back(left[l]);
    cur.push_back({a, b});
    perfect_matchings(k, rest, cur, out);
    cur.pop_back();
  }
}

inline double pair_covariance(cd ai, cd bi, cd aj, cd bj) {
  cd num = (ai - aj) * (bi - bj) * (std::conj(ai) - aj) * (std::conj(bi) - bj);
  cd den = (ai - bj) * (bi - aj) * (std::conj(ai) - bj) * (std::conj(bi) - aj);
  if (num == cd(0) || den == cd(0)) throw ValidationError("coincident points");
  constexpr double pi = 3.14159265358979323846;
  return -1.0 / (2 * pi * pi) * std::log(std::abs(num / den));
}

}  // namespace detail

// Matching-sum prediction for E[prod_i (h(a_i) - h(b_i))] in the scaling
// limit: Gaussian pair covariances summed over perfect matchings of the k
// pairs. Odd k has no matchings and gives 0.
inline double gff_prediction(const std::vector<std::pair<cd, cd>>& pairs) {
  detail::check_point_configuration(detail::flatten_pairs(pairs));
  int k = int(pairs.size());
  if (k % 2 == 1) return 0.0;
  std::vector<int> idx(k);
  for (int i = 0; i < k; ++i) idx[i] = i;
  std::vector<std::vector<std::pair<int, int>>> matchings;
  std::vector<std::pair<int, int>> cur;
  detail::perfect_matchings(k, idx, cur, matchings);
  double total = 0;
  for (const auto& m : matchings) {
    double term = 1;
    for (auto [i, j] : m)
      term *= detail::pair_covariance(pairs[i].first, pairs[i].second, pairs[j].first,
                                      pairs[j].second);
    total += term;
  }
  return total;
}

struct MomentComparison {
  double measured = 0;
  double predicted = 0;
  double rel_err = 0;
};

inline MomentComparison compare_height_moment(const std::vector<std::pair<cd, cd>>& pairs,
                                              double delta, double z, double rho = 0.5) {
  MomentBox box = make_moment_box(pairs, delta, z);
  MomentRequest req = make_moment_request(box, pairs, rho);
  MomentComparison out;
  out.measured = exact_height_moment(box, req);
  out.predicted = gff_prediction(pairs);
  out.rel_err = std::abs(out.measured - out.predicted) /
                std::max(std::abs(out.predicted), 1e-12);
  return out;
}

// ---------------------------------------------------------------------------
// Pairing with a face-based test function: (h, f) = sum f h delta^2 over
// faces. With a mean-zero f this equals the double integral of height
// differences against f+(a) f-(b) / Z_f, so no base-face constant enters.

struct TestFunction {
  std::vector<std::pair<Pt, double>> samples;  // nonzero faces only
  double delta = 1.0;
  int x0 = 0;
};

inline TestFunction discretize_test_function(const MomentBox& box,
                                             const std::function<double(cd)>& f,
                                             bool recentre = true) {
  TestFunction tf;
  tf.delta = box.delta;
  tf.x0 = box.x0;
  for (Pt face : face_set(box.aug.base)) {
    double v = f(face_centre(box, face));
    if (v != 0.0) tf.samples.push_back({face, v});
  }
  if (recentre && !tf.samples.empty()) {
    double mean = 0;
    for (auto& [face, v] : tf.samples) mean += v;
    mean /= double(tf.samples.size());
    for (auto& [face, v] : tf.samples) v -= mean;
  }
  return tf;
}

namespace detail {

inline void require_mean_zero(const TestFunction& f) {
  double mass = 0;
  for (auto& [face, v] : f.samples) mass += v;
  if (std::abs(mass * f.delta * f.delta) > 1e-12)
    throw ValidationError("test function is not mean-zero");
}

// -integral of log|u - v| over two copies of the unit square; cached
// quadrature with the singularity tamed by a square-root substitution.
inline double log_energy_unit_square() {
  static const double value = [] {
    int n = 512;
    double sum = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double s = (i + 0.5) / n, t = (j + 0.5) / n;
        double a = s * s, b = t * t;
        sum += (1 - a) * (1 - b) * std::log(a * a + b * b) * s * t;
      }
    return -16.0 * sum / (n * n) / 2.0;
  }();
  return value;
}

}  // namespace detail

inline double pair_with_test_function(const HeightField& h, const TestFunction& f) {
  detail::require_mean_zero(f);
  double out = 0;
  for (auto& [face, v] : f.samples) out += v * h.at(face);
  return out * f.delta * f.delta;
}

// Predicted variance (1 / 2 pi^2) sum f(x) f(y) G(x, y) delta^4 with the
// log-singular diagonal replaced by its exact cell average.
inline double predicted_pairing_variance(const TestFunction& f) {
  detail::require_mean_zero(f);
  size_t n = f.samples.size();
  std::vector<cd> pos(n);
  for (size_t i = 0; i < n; ++i) {
    Pt face = f.samples[i].first;
    pos[i] = f.delta * cd(face.x - f.x0 + 0.5, face.y + 0.5);
  }
  double total = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      double g;
      if (i == j)
        g = -std::log(f.delta) + detail::log_energy_unit_square() -
            std::log(2 * pos[i].imag());
      else
        g = neumann_green(pos[i], pos[j]);
      total += f.samples[i].second * f.samples[j].second * g;
    }
  constexpr double pi = 3.14159265358979323846;
  return total * std::pow(f.delta, 4) / (2 * pi * pi);
}

}  // namespace freedimer
