#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <complex>
#include <vector>

#include "freedimer/lattice.hpp"

namespace freedimer {

// ---------------------------------------------------------------------------
// Orientation: verticals and triangle legs point downward; horizontals run
// left-to-right in odd rows and right-to-left in even rows. Every bounded
// face then has an odd number of edges disagreeing with its counterclockwise
// traversal.

inline bool oriented(Pt u, Pt v) {
  if (u.y != v.y) return u.y > v.y;  // downward
  bool odd_row = ((u.y % 2) + 2) % 2 == 1;
  return odd_row ? u.x < v.x : u.x > v.x;
}

// Bounded faces as counterclockwise vertex cycles: unit squares above the
// real line plus the two triangle shapes of the bottom row.
inline std::vector<std::vector<Pt>> bounded_faces(const AugmentedDomain& a) {
  auto has_edge = [&](Pt p, Pt q) {
    if (!a.contains(p) || !a.contains(q)) return false;
    int j = a.at(q);
    for (auto [nb, w] : a.adj[a.at(p)])
      if (nb == j) return true;
    return false;
  };
  std::vector<std::vector<Pt>> faces;
  for (Pt p : a.vertices) {
    if (p.y >= 0) {
      Pt q{p.x + 1, p.y}, r{p.x + 1, p.y + 1}, s{p.x, p.y + 1};
      if (has_edge(p, q) && has_edge(q, r) && has_edge(r, s) && has_edge(s, p))
        faces.push_back({p, q, r, s});
    }
    if (p.y == -1) {
      int x = p.x;
      // downward triangle: tops x, x+1 over apex x
      if (has_edge({x, 0}, {x + 1, 0}) && has_edge({x + 1, 0}, {x, -1}) &&
          has_edge({x, -1}, {x, 0}))
        faces.push_back({{x, -1}, {x + 1, 0}, {x, 0}});
      // upward triangle: apexes x, x+1 under top x+1
      if (has_edge({x, -1}, {x + 1, -1}) && has_edge({x + 1, -1}, {x + 1, 0}) &&
          has_edge({x + 1, 0}, {x, -1}))
        faces.push_back({{x, -1}, {x + 1, -1}, {x + 1, 0}});
    }
  }
  return faces;
}

// Internal-consistency assertion; unreachable for generated graphs.
inline void check_face_condition(const AugmentedDomain& a) {
  for (const auto& f : bounded_faces(a)) {
    int against = 0;
    for (size_t i = 0; i < f.size(); ++i) {
      Pt u = f[i], v = f[(i + 1) % f.size()];
      if (!oriented(u, v)) ++against;
    }
    if (against % 2 == 0)
      throw NumericalError("face condition violated at face starting " + pt_str(f[0]));
  }
}

// ---------------------------------------------------------------------------
// Gauge-changed Kasteleyn matrix: K(u,v) = Ktilde(u,v) * i^{[u even row] +
// [v even row]}; rows/columns follow the frozen (y, x) vertex order.

struct SkewMatrix {
  std::vector<Pt> order;
  Eigen::MatrixXcd a;
};

inline cd gauge_phase(Pt p) { return row_sign(p) == 1 ? cd(0, 1) : cd(1, 0); }

inline Eigen::SparseMatrix<cd> kasteleyn_sparse(const AugmentedDomain& g) {
  int n = int(g.size());
  std::vector<Eigen::Triplet<cd>> trip;
  trip.reserve(g.edges.size() * 2);
  for (const auto& e : g.edges) {
    Pt u = g.vertices[e.u], v = g.vertices[e.v];
    cd val = (oriented(u, v) ? 1.0 : -1.0) * e.w * gauge_phase(u) * gauge_phase(v);
    trip.push_back({e.u, e.v, val});
    trip.push_back({e.v, e.u, -val});
  }
  Eigen::SparseMatrix<cd> k(n, n);
  k.setFromTriplets(trip.begin(), trip.end());
  return k;
}

inline SkewMatrix kasteleyn_matrix(const AugmentedDomain& g) {
  check_face_condition(g);
  SkewMatrix k;
  k.order = g.vertices;
  k.a = Eigen::MatrixXcd(kasteleyn_sparse(g));
  if ((k.a + k.a.transpose()).cwiseAbs().maxCoeff() != 0.0)
    throw NumericalError("Kasteleyn matrix not antisymmetric");
  return k;
}

// D = K*K; real positive diagonal, couples vertices at lattice distance <= 2.
inline Eigen::MatrixXcd d_matrix(const SkewMatrix& k) { return k.a.adjoint() * k.a; }

// ---------------------------------------------------------------------------
// Pfaffian by skew-symmetric elimination with partial pivoting.

inline cd pfaffian(Eigen::MatrixXcd a) {
  int n = int(a.rows());
  if (a.cols() != n) throw ValidationError("pfaffian needs a square matrix");
  if (n % 2 != 0) throw ValidationError("pfaffian needs even dimension");
  if (n == 0) return 1.0;
  cd pf = 1.0;
  for (int k = 0; k + 1 < n; k += 2) {
    int m = k + 1;
    for (int i = k + 2; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(m, k))) m = i;
    if (a(m, k) == cd(0.0)) return 0.0;
    if (m != k + 1) {
      a.row(m).swap(a.row(k + 1));
      a.col(m).swap(a.col(k + 1));
      pf = -pf;
    }
    cd b = a(k, k + 1);
    pf *= b;
    for (int i = k + 2; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        cd delta = (a(k + 1, i) * a(k, j) - a(k, i) * a(k + 1, j)) / b;
        a(i, j) += delta;
        a(j, i) = -a(i, j);
      }
    }
  }
  return pf;
}

// |Pf K| equals the weighted count of boundary monomer-dimer covers.
inline double partition_function(const AugmentedDomain& g) {
  return std::abs(pfaffian(kasteleyn_matrix(g).a));
}

// ---------------------------------------------------------------------------
// Inverse Kasteleyn matrix (dense path, graphs up to a few thousand
// vertices).

inline Eigen::MatrixXcd inverse_kasteleyn(const SkewMatrix& k) {
  int n = int(k.a.rows());
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(k.a);
  Eigen::MatrixXcd inv = lu.solve(Eigen::MatrixXcd::Identity(n, n));
  double resid = (k.a * inv - Eigen::MatrixXcd::Identity(n, n)).cwiseAbs().maxCoeff();
  if (!(resid < 1e-8))
    throw NumericalError("NoDimerCover: Kasteleyn matrix numerically singular (residual " +
                         std::to_string(resid) + ")");
  return inv;
}

// Second route: K^{-1} = D^{-1} K*, used as a cross-check of the first.
inline Eigen::MatrixXcd inverse_kasteleyn_via_d(const SkewMatrix& k) {
  Eigen::MatrixXcd d = d_matrix(k);
  return Eigen::MatrixXcd(d.ldlt().solve(k.a.adjoint()));
}

// ---------------------------------------------------------------------------
// Pfaffian correlation formulas.

struct EdgeList {
  // White-then-black within each listed edge, in listing order.
  std::vector<std::pair<Pt, Pt>> wb;
};

inline EdgeList normalize_edges(const AugmentedDomain& g,
                                const std::vector<std::pair<Pt, Pt>>& edges) {
  EdgeList out;
  std::vector<Pt> seen;
  for (auto [p, q] : edges) {
    if (!g.contains(p) || !g.contains(q))
      throw ValidationError("edge endpoint not in graph: " + pt_str(p) + "-" + pt_str(q));
    bool adjacent = false;
    for (auto [nb, w] : g.adj[g.at(p)])
      if (nb == g.at(q)) adjacent = true;
    if (!adjacent) throw ValidationError("not an edge: " + pt_str(p) + "-" + pt_str(q));
    // white-then-black for bipartite edges; triangle legs join equal
    // colours, so fall back to the frozen vertex order (the a_E Pf(C)
    // product is invariant as long as both factors use the same order)
    Pt w = p, b = q;
    if (is_black(p) != is_black(q)) {
      if (is_black(w)) std::swap(w, b);
    } else if (b < w) {
      std::swap(w, b);
    }
    out.wb.push_back({w, b});
    seen.push_back(w);
    seen.push_back(b);
  }
  std::sort(seen.begin(), seen.end());
  if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
    throw ValidationError("repeated vertex in edge list");
  return out;
}

// CouplingMatrix rows/cols in order (w1, b1, ..., wk, bk); its entries are
// C(u,v) = K^{-1}(v,u), the coupling pairing, so that a single edge gives
// P(e) = K(w,b) K^{-1}(b,w).
inline SkewMatrix coupling_submatrix(const SkewMatrix& k, const Eigen::MatrixXcd& kinv,
                                     const EdgeList& e) {
  std::vector<Pt> pts;
  for (auto [w, b] : e.wb) {
    pts.push_back(w);
    pts.push_back(b);
  }
  std::vector<int> idx;
  for (Pt p : pts) {
    auto it = std::lower_bound(k.order.begin(), k.order.end(), p);
    idx.push_back(int(it - k.order.begin()));
  }
  SkewMatrix c;
  c.order = pts;
  c.a.resize(pts.size(), pts.size());
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = 0; j < pts.size(); ++j)
      c.a(i, j) = i == j ? cd(0) : kinv(idx[j], idx[i]);
  return c;
}

inline cd edge_weight_product(const SkewMatrix& k, const EdgeList& e) {
  cd a = 1.0;
  for (auto [w, b] : e.wb) {
    auto iw = std::lower_bound(k.order.begin(), k.order.end(), w) - k.order.begin();
    auto ib = std::lower_bound(k.order.begin(), k.order.end(), b) - k.order.begin();
    a *= k.a(iw, ib);
  }
  return a;
}

// P(e_1, ..., e_k all present) = a_E Pf(C).
inline double joint_dimer_probability(const AugmentedDomain& g, const SkewMatrix& k,
                                      const Eigen::MatrixXcd& kinv,
                                      const std::vector<std::pair<Pt, Pt>>& edges) {
  EdgeList e = normalize_edges(g, edges);
  cd val = edge_weight_product(k, e) * pfaffian(coupling_submatrix(k, kinv, e).a);
  if (std::abs(val.imag()) > 1e-9)
    throw NumericalError("probability has imaginary residue " + std::to_string(val.imag()));
  return val.real();
}

inline double edge_probability(const AugmentedDomain& g, const SkewMatrix& k,
                               const Eigen::MatrixXcd& kinv, Pt p, Pt q) {
  return joint_dimer_probability(g, k, kinv, {{p, q}});
}

namespace detail {

// Perfect matchings of {0..2k-1} with the Pfaffian expansion sign
// (-1)^{number of crossings}.
inline void all_pairings(int n, std::vector<std::pair<int, int>>& cur,
                         std::vector<bool>& used,
                         std::vector<std::vector<std::pair<int, int>>>& out) {
  int u = 0;
  while (u < n && used[u]) ++u;
  if (u == n) {
    out.push_back(cur);
    return;
  }
  used[u] = true;
  for (int v = u + 1; v < n; ++v) {
    if (used[v]) continue;
    used[v] = true;
    cur.push_back({u, v});
    all_pairings(n, cur, used, out);
    cur.pop_back();
    used[v] = false;
  }
  used[u] = false;
}

inline int pairing_sign(const std::vector<std::pair<int, int>>& m) {
  int crossings = 0;
  for (size_t i = 0; i < m.size(); ++i)
    for (size_t j = i + 1; j < m.size(); ++j) {
      auto [a, b] = m[i];
      auto [c, d] = m[j];
      if (c < a) std::swap(a, c), std::swap(b, d);
      if (a < c && c < b && b < d) ++crossings;
    }
  return crossings % 2 == 0 ? 1 : -1;
}

}  // namespace detail

// Truncated (centered) correlation E[prod (1_{e_i in M} - p_i)]: the Pfaffian
// expansion restricted to pairings that avoid every listed edge's own pair.
inline double truncated_correlation(const AugmentedDomain& g, const SkewMatrix& k,
                                    const Eigen::MatrixXcd& kinv,
                                    const std::vector<std::pair<Pt, Pt>>& edges) {
  EdgeList e = normalize_edges(g, edges);
  int n = int(e.wb.size()) * 2;
  if (n == 2) return 0.0;  // a single centered factor has zero mean
  SkewMatrix c = coupling_submatrix(k, kinv, e);
  std::vector<std::vector<std::pair<int, int>>> pairings;
  std::vector<std::pair<int, int>> cur;
  std::vector<bool> used(n, false);
  detail::all_pairings(n, cur, used, pairings);
  cd sum = 0;
  for (const auto& m : pairings) {
    bool restricted = true;
    for (auto [u, v] : m)
      if (u / 2 == v / 2) restricted = false;  // pairs (w_i, b_i) forbidden
    if (!restricted) continue;
    cd term = double(detail::pairing_sign(m));
    for (auto [u, v] : m) term *= c.a(u, v);
    sum += term;
  }
  cd val = edge_weight_product(k, e) * sum;
  if (std::abs(val.imag()) > 1e-9)
    throw NumericalError("correlation has imaginary residue " + std::to_string(val.imag()));
  return val.real();
}

// Sum over cyclic permutations of prod 1/(x_i - x_sigma(i)); vanishes for
// even length > 2.
inline cd cyclic_cancellation(const std::vector<cd>& pts) {
  int n = int(pts.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (pts[i] == pts[j]) throw ValidationError("repeated point");
  std::vector<int> rest;
  for (int i = 1; i < n; ++i) rest.push_back(i);
  cd total = 0;
  std::sort(rest.begin(), rest.end());
  do {
    // cycle 0 -> rest[0] -> rest[1] -> ... -> 0
    std::vector<int> next(n);
    int prev = 0;
    for (int r : rest) {
      next[prev] = r;
      prev = r;
    }
    next[prev] = 0;
    cd term = 1;
    for (int i = 0; i < n; ++i) term *= 1.0 / (pts[i] - pts[next[i]]);
    total += term;
  } while (std::next_permutation(rest.begin(), rest.end()));
  return total;
}

// ---------------------------------------------------------------------------
// Sparse factorization serving single columns of K^{-1} for large graphs.

class KasteleynSystem {
 public:
  explicit KasteleynSystem(const AugmentedDomain& g) : order_(g.vertices) {
    k_ = kasteleyn_sparse(g);
    k_.makeCompressed();
    lu_.compute(k_);
    if (lu_.info() != Eigen::Success)
      throw NumericalError("NoDimerCover: sparse Kasteleyn factorization failed");
  }

  // Column v of K^{-1} (so entries K^{-1}(. , v)).
  Eigen::VectorXcd column(Pt v) const {
    auto it = std::lower_bound(order_.begin(), order_.end(), v);
    if (it == order_.end() || !(*it == v))
      throw ValidationError("vertex not in graph: " + pt_str(v));
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(order_.size());
    e[it - order_.begin()] = 1.0;
    return lu_.solve(e);
  }

  int index(Pt p) const {
    auto it = std::lower_bound(order_.begin(), order_.end(), p);
    if (it == order_.end() || !(*it == p))
      throw ValidationError("vertex not in graph: " + pt_str(p));
    return int(it - order_.begin());
  }

  cd k_entry(Pt u, Pt v) const { return k_.coeff(index(u), index(v)); }
  const std::vector<Pt>& order() const { return order_; }

 private:
  std::vector<Pt> order_;
  Eigen::SparseMatrix<cd> k_;
  Eigen::SparseLU<Eigen::SparseMatrix<cd>> lu_;
};

}  // namespace freedimer
