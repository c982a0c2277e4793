#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "freedimer/kasteleyn.hpp"
#include "freedimer/lattice.hpp"

namespace freedimer {

// ---------------------------------------------------------------------------
// Auxiliary one-dimensional walk: steps +-1 with weight 1/2 - p and +-2 with
// weight p, where p = 1/(2 + 2z^2).

struct AuxWalkParams {
  double z = 1;
  double p = 0.25;        // in (0, 1/2)
  double gamma = 0;       // in (-1, 0)
  double b_const = 0;     // <= 0
  double sigma2 = 0;      // 1 + 6p
};

inline AuxWalkParams aux_params(double z) {
  if (!(z > 0)) throw ValidationError("aux_params needs z > 0");
  AuxWalkParams a;
  a.z = z;
  a.p = 1.0 / (2.0 + 2.0 * z * z);
  // gamma = sqrt(u^2-1) - u for u = 1/2 + 1/(4p), written to stay accurate
  // for u near 1 (small z) and u large (large z)
  double u = 0.5 + 1.0 / (4.0 * a.p);
  double um1 = (1.0 - 2.0 * a.p) / (4.0 * a.p);  // u - 1 without cancellation
  double root = std::sqrt(um1 * (u + 1.0));
  a.gamma = -1.0 / (u + root);
  a.b_const = 4.0 * a.p / ((a.gamma - 1.0) * (6.0 * a.p + 1.0) * (2.0 * a.p * a.gamma + 1.0));
  a.sigma2 = 1.0 + 6.0 * a.p;
  return a;
}

// alpha_k = |k|/(1+6p) - B + B gamma^{|k|}; alpha_0 = 0.
inline double potential_kernel_1d(long long k, const AuxWalkParams& a) {
  long long n = k < 0 ? -k : k;
  if (n == 0) return 0.0;
  double gp = (n % 2 ? -1.0 : 1.0) * std::pow(-a.gamma, double(n));
  return double(n) / a.sigma2 - a.b_const + a.b_const * gp;
}

// q_k = (-1)^{k+1}(1/2-p)(2 alpha_k - alpha_{k+1} - alpha_{k-1}).  The linear
// part of alpha cancels exactly in the second difference, leaving the
// geometric tail -(1/2-p) B (gamma-1)^2 |gamma|^{k-1}; that reduced form is
// used so large k do not lose precision to cancellation.
inline std::vector<double> effective_jump_weights(double z, int k_max) {
  AuxWalkParams a = aux_params(z);
  std::vector<double> q(k_max + 1);
  double alpha1 = 1.0 / ((1.0 + 2.0 * a.p * a.gamma) * (1.0 - a.gamma));
  q[0] = (1.0 - 2.0 * a.p) * alpha1;
  double g1 = a.gamma - 1.0;
  double coef = -(0.5 - a.p) * a.b_const * g1 * g1;
  double pw = 1.0;
  for (int k = 1; k <= k_max; ++k) {
    q[k] = coef * pw;
    pw *= -a.gamma;
  }
  return q;
}

// smallest k with |gamma|^k < 1e-14 (geometric tail below double noise)
inline int jump_weight_cutoff(const AuxWalkParams& a) {
  return int(std::ceil(std::log(1e-14) / std::log(-a.gamma))) + 1;
}

// ---------------------------------------------------------------------------
// D = K*K split into its row-parity sectors.  Rows -1, 1, 3, ... form the
// odd sector (with the apex row eliminated by a Schur complement), rows
// 0, 2, ... the even one.  The few cross-sector entries of D near strip ends
// and corners are tracked but take no part in either walk.

inline int row_parity(Pt p) { return ((p.y % 2) + 2) % 2; }

struct DSplit {
  std::vector<Pt> apex, odd, even;  // each sorted in the frozen (y, x) order
  Eigen::MatrixXd a;                // apex block
  Eigen::MatrixXd b;                // apex x odd coupling
  Eigen::MatrixXd c;                // odd block (rows 1, 3, ...)
  Eigen::MatrixXd e;                // even block
  double max_mixed = 0;             // largest |D| entry across sectors
};

inline DSplit split_d(const AugmentedDomain& g) {
  Eigen::SparseMatrix<cd> k = kasteleyn_sparse(g);
  Eigen::SparseMatrix<cd> d = (Eigen::SparseMatrix<cd>(k.adjoint()) * k).pruned();
  DSplit s;
  std::vector<int> kind(g.size());  // 0 apex, 1 odd, 2 even
  std::vector<int> local(g.size());
  for (size_t i = 0; i < g.size(); ++i) {
    Pt p = g.vertices[i];
    if (p.y == -1) {
      kind[i] = 0;
      local[i] = int(s.apex.size());
      s.apex.push_back(p);
    } else if (row_parity(p) == 1) {
      kind[i] = 1;
      local[i] = int(s.odd.size());
      s.odd.push_back(p);
    } else {
      kind[i] = 2;
      local[i] = int(s.even.size());
      s.even.push_back(p);
    }
  }
  s.a = Eigen::MatrixXd::Zero(s.apex.size(), s.apex.size());
  s.b = Eigen::MatrixXd::Zero(s.apex.size(), s.odd.size());
  s.c = Eigen::MatrixXd::Zero(s.odd.size(), s.odd.size());
  s.e = Eigen::MatrixXd::Zero(s.even.size(), s.even.size());
  for (int col = 0; col < d.outerSize(); ++col) {
    for (Eigen::SparseMatrix<cd>::InnerIterator it(d, col); it; ++it) {
      int i = int(it.row()), j = int(it.col());
      cd v = it.value();
      if (std::abs(v) < 1e-13) continue;
      bool io = kind[i] != 2, jo = kind[j] != 2;
      if (io != jo) {
        s.max_mixed = std::max(s.max_mixed, std::abs(v));
        continue;
      }
      if (std::abs(v.imag()) > 1e-11 * (1.0 + std::abs(v)))
        throw NumericalError("same-sector D entry not real at " +
                             pt_str(g.vertices[i]) + "," + pt_str(g.vertices[j]));
      double re = v.real();
      if (kind[i] == 0 && kind[j] == 0) s.a(local[i], local[j]) = re;
      else if (kind[i] == 0 && kind[j] == 1) s.b(local[i], local[j]) = re;
      else if (kind[i] == 1 && kind[j] == 0) s.b(local[j], local[i]) = re;
      else if (kind[i] == 1 && kind[j] == 1) s.c(local[i], local[j]) = re;
      else if (kind[i] == 2 && kind[j] == 2) s.e(local[i], local[j]) = re;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Green's function of the killed walk on the apex row V_{-1}: transitions
// P(a,b) = |A(a,b)|/A(a,a), absorbed at the two extremities through the
// diagonal deficit.

struct RowGreen {
  std::vector<Pt> apexes;
  std::vector<double> diag;  // A(a,a)
  Eigen::MatrixXd g;         // (I - P)^{-1}

  int index(Pt p) const {
    auto it = std::lower_bound(apexes.begin(), apexes.end(), p);
    if (it == apexes.end() || !(*it == p))
      throw ValidationError("not an apex vertex: " + pt_str(p));
    return int(it - apexes.begin());
  }
  double operator()(Pt a, Pt b) const { return g(index(a), index(b)); }
};

inline RowGreen boundary_row_green(const AugmentedDomain& g) {
  if (g.mode != CornerMode::finite_n || g.n_side < 1)
    throw ValidationError("boundary_row_green needs finite-N mode with n_side >= 1");
  DSplit s = split_d(g);
  int n = int(s.apex.size());
  RowGreen rg;
  rg.apexes = s.apex;
  Eigen::MatrixXd imp = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    rg.diag.push_back(s.a(i, i));
    for (int j = 0; j < n; ++j)
      if (j != i) imp(i, j) = -std::abs(s.a(i, j)) / s.a(i, i);
  }
  rg.g = imp.partialPivLu().solve(Eigen::MatrixXd::Identity(n, n));
  return rg;
}

// q^N_{u,v} for u, v in V_1, via second differences of the row Green's
// function below the two legs of each vertex.
inline double finite_jump_weights(const AugmentedDomain& g, const RowGreen& rg, Pt u, Pt v) {
  if (u.y != 1 || v.y != 1)
    throw ValidationError("finite jump weights need vertices in the first row");
  if (!g.contains(u) || !g.contains(v))
    throw ValidationError("vertex not in graph: " + pt_str(u) + " or " + pt_str(v));
  double z = g.z;
  Pt up{u.x, -1}, um{u.x - 1, -1}, vp{v.x, -1}, vm{v.x - 1, -1};
  double combo = rg(up, vp) - rg(up, vm) - rg(um, vp) + rg(um, vm);
  double sign = (((v.x - u.x) % 2) + 2) % 2 == 0 ? 1.0 : -1.0;
  return z * z / (2.0 + 2.0 * z * z) * sign * combo;
}

inline double finite_jump_weights(const AugmentedDomain& g, Pt u, Pt v) {
  RowGreen rg = boundary_row_green(g);
  return finite_jump_weights(g, rg, u, v);
}

// ---------------------------------------------------------------------------
// Standalone one-dimensional model of the apex-row walk on [-n, n]: interior
// steps +-1 with weight 1/2 - p and +-2 with weight p, the outward +-2 step
// from +-(n-1) is absorbed, and the end states +-n keep only the two inward
// steps renormalised to total weight one. This is the minimal chain whose
// anchored Green differences recover the 1-D potential kernel.

struct ReflectedChain {
  int n = 0;                // states are the integers in [-n, n]
  Eigen::MatrixXd green;    // (I - P)^{-1}, counting the time-0 visit

  int index(int x) const {
    if (std::abs(x) > n) throw ValidationError("state outside [-n, n]");
    return x + n;
  }
  double operator()(int u, int v) const { return green(index(u), index(v)); }
};

inline ReflectedChain reflected_chain_green(double z, int n) {
  if (n < 4) throw ValidationError("reflected chain needs n >= 4");
  AuxWalkParams a = aux_params(z);
  int m = 2 * n + 1;
  Eigen::MatrixXd imp = Eigen::MatrixXd::Identity(m, m);
  auto put = [&](int x, int y, double w) {
    if (std::abs(y) <= n) imp(x + n, y + n) -= w;
  };
  for (int x = -n; x <= n; ++x) {
    if (std::abs(x) <= n - 1) {
      put(x, x + 1, 0.5 - a.p);
      put(x, x - 1, 0.5 - a.p);
      put(x, x + 2, a.p);
      put(x, x - 2, a.p);
    } else {
      int s = x > 0 ? 1 : -1;
      put(x, x - s, 1.0 - 2.0 * a.p);
      put(x, x - 2 * s, 2.0 * a.p);
    }
  }
  ReflectedChain rc;
  rc.n = n;
  rc.green = imp.partialPivLu().solve(Eigen::MatrixXd::Identity(m, m));
  return rc;
}

// Potential-kernel approximation alpha^n_k from anchored Green differences at
// the centre of the chain; converges geometrically in n.
inline double anchored_potential_kernel(const ReflectedChain& rc, int k) {
  return rc(0, 0) - rc(std::abs(k), 0);
}

// Jump-weight approximation built from alpha^n by the same second-difference
// formula that defines the limiting weights; the (-1)^k factor folds the
// oscillating gamma-mode so that the result is nonnegative.
inline std::vector<double> anchored_jump_weights(double z, int n, int k_max) {
  if (k_max < 0 || k_max > n - 2)
    throw ValidationError("anchored jump weights need 0 <= k_max <= n - 2");
  ReflectedChain rc = reflected_chain_green(z, n);
  AuxWalkParams a = aux_params(z);
  std::vector<double> q(k_max + 1);
  q[0] = (1.0 - 2.0 * a.p) * anchored_potential_kernel(rc, 1);
  for (int k = 1; k <= k_max; ++k) {
    double d2 = anchored_potential_kernel(rc, k + 1) - 2.0 * anchored_potential_kernel(rc, k) +
                anchored_potential_kernel(rc, k - 1);
    q[k] = (0.5 - a.p) * (k % 2 == 0 ? 1.0 : -1.0) * d2;
  }
  return q;
}

// ---------------------------------------------------------------------------
// Schur complement M/A = C - B^T A^{-1} B of the block on `block` indices;
// returns the matrix on the complementary indices in ascending order.

inline Eigen::MatrixXd schur_complement(const Eigen::MatrixXd& m,
                                        const std::vector<int>& block) {
  int n = int(m.rows());
  std::vector<bool> in(n, false);
  for (int i : block) in.at(i) = true;
  std::vector<int> rest;
  for (int i = 0; i < n; ++i)
    if (!in[i]) rest.push_back(i);
  Eigen::MatrixXd a(block.size(), block.size()), b(block.size(), rest.size()),
      c(rest.size(), rest.size());
  for (size_t i = 0; i < block.size(); ++i)
    for (size_t j = 0; j < block.size(); ++j) a(i, j) = m(block[i], block[j]);
  for (size_t i = 0; i < block.size(); ++i)
    for (size_t j = 0; j < rest.size(); ++j) b(i, j) = m(block[i], rest[j]);
  for (size_t i = 0; i < rest.size(); ++i)
    for (size_t j = 0; j < rest.size(); ++j) c(i, j) = m(rest[i], rest[j]);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success)
    throw NumericalError("Schur complement: singular block");
  return c - b.transpose() * ldlt.solve(b);
}

// ---------------------------------------------------------------------------
// Effective walks.

struct NeedLargerN : NumericalError {
  Pt u, v;
  double value;
  NeedLargerN(Pt u_, Pt v_, double val)
      : NumericalError("negative transition weight " + std::to_string(val) + " at " +
                       pt_str(u_) + "->" + pt_str(v_) + "; increase n_side"),
        u(u_),
        v(v_),
        value(val) {}
};

struct WalkKernel {
  std::vector<Pt> states;  // sorted (y, x)
  std::vector<std::vector<std::pair<int, double>>> moves;
  std::vector<double> cemetery;    // killing mass, clamped at 0
  std::vector<double> normalizer;  // D(v,v)
  double max_row_excess = 0;       // positive when a row exceeds total mass 1

  int index(Pt p) const {
    auto it = std::lower_bound(states.begin(), states.end(), p);
    if (it == states.end() || !(*it == p))
      throw ValidationError("not a state of this walk: " + pt_str(p));
    return int(it - states.begin());
  }
};

namespace detail {

inline WalkKernel kernel_from_rates(std::vector<Pt> states, const Eigen::MatrixXd& r,
                                    std::vector<double> normalizer, bool throw_on_negative) {
  int n = int(states.size());
  WalkKernel k;
  k.states = std::move(states);
  k.normalizer = std::move(normalizer);
  k.moves.resize(n);
  k.cemetery.resize(n, 1.0);
  bool any_kill = n == 0;
  for (int i = 0; i < n; ++i) {
    double total = 0;
    for (int j = 0; j < n; ++j) {
      double w = r(i, j);
      if (w < -1e-12) {
        if (throw_on_negative) throw NeedLargerN(k.states[i], k.states[j], w);
        throw NumericalError("negative transition weight in walk kernel");
      }
      if (w <= 0) continue;
      k.moves[i].push_back({j, w});
      total += w;
    }
    k.max_row_excess = std::max(k.max_row_excess, total - 1.0);
    k.cemetery[i] = std::max(0.0, 1.0 - total);
    if (k.cemetery[i] > 1e-12) any_kill = true;
  }
  if (!any_kill) throw NumericalError("walk kernel has no absorption anywhere");
  return k;
}

}  // namespace detail

// Odd walk on rows 1, 3, ...: lattice moves from the odd block of D plus the
// boundary jumps q^N generated by eliminating the apex row, all divided by
// the diagonal D(u,u).
inline WalkKernel odd_walk_kernel(const AugmentedDomain& g) {
  DSplit s = split_d(g);
  int n = int(s.odd.size());
  Eigen::MatrixXd schur = s.c;
  if (s.apex.size() > 0 && n > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s.a);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("apex block not invertible");
    schur -= s.b.transpose() * ldlt.solve(s.b);
  }
  Eigen::MatrixXd r(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      r(i, j) = (i == j ? 1.0 : 0.0) - schur(i, j) / s.c(i, i);
  std::vector<double> norm(n);
  for (int i = 0; i < n; ++i) norm[i] = s.c(i, i);
  return detail::kernel_from_rates(s.odd, r, norm, /*throw_on_negative=*/true);
}

// Even walk on rows 0, 2, ...: R(x,y) = |D(x,y)|/D(x,x).
inline WalkKernel even_walk_kernel(const AugmentedDomain& g) {
  DSplit s = split_d(g);
  int n = int(s.even.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (j != i) r(i, j) = std::abs(s.e(i, j)) / s.e(i, i);
  std::vector<double> norm(n);
  for (int i = 0; i < n; ++i) norm[i] = s.e(i, i);
  return detail::kernel_from_rates(s.even, r, norm, /*throw_on_negative=*/false);
}

// ---------------------------------------------------------------------------
// Green's functions G(u,v) = E_u[visits to v] / D(v,v).

inline Eigen::MatrixXd transition_matrix(const WalkKernel& k) {
  int n = int(k.states.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (auto [j, w] : k.moves[i]) r(i, j) += w;
  return r;
}

inline Eigen::MatrixXd green_matrix(const WalkKernel& k) {
  int n = int(k.states.size());
  if (n == 0) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd imr = Eigen::MatrixXd::Identity(n, n) - transition_matrix(k);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(imr);
  Eigen::MatrixXd g = lu.solve(Eigen::MatrixXd::Identity(n, n));
  double resid = (imr * g - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff();
  if (!(resid < 1e-8))
    throw NumericalError("walk Green's function diverges (no absorption reachable)");
  for (int j = 0; j < n; ++j) g.col(j) /= k.normalizer[j];
  return g;
}

inline double green(const WalkKernel& k, Pt u, Pt v) {
  int iu = k.index(u), iv = k.index(v);
  int n = int(k.states.size());
  Eigen::MatrixXd imr = Eigen::MatrixXd::Identity(n, n) - transition_matrix(k);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e[iv] = 1.0;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(imr);
  Eigen::VectorXd col = lu.solve(e);
  if (!std::isfinite(col[iu]) || (imr * col - e).cwiseAbs().maxCoeff() > 1e-8)
    throw NumericalError("walk Green's function diverges (no absorption reachable)");
  return col[iu] / k.normalizer[iv];
}

// ---------------------------------------------------------------------------
// Verification of the random-walk representation of the sector inverses of
// D: within the odd sector (apex row eliminated) the inverse restricted to
// V_odd equals G_odd, within the even sector it equals
// (-1)^{x_u - x_v} G_even, and the table couples the sectors by 0.  The
// largest cross-sector entry of the full inverse is reported alongside.

struct RwReport {
  double odd_residual = 0;
  double even_residual = 0;
  double mixed_table_residual = 0;  // structurally zero
  double full_inverse_mixed_max = 0;
  double max_row_excess = 0;
  int n_side = 0;
};

inline RwReport verify_rw_representation(const AugmentedDomain& g) {
  DSplit s = split_d(g);
  RwReport rep;
  rep.n_side = g.n_side;

  // odd sector: invert [A B; B^T C] jointly, restrict to V_odd
  int na = int(s.apex.size()), no = int(s.odd.size()), ne = int(s.even.size());
  if (no > 0) {
    Eigen::MatrixXd m(na + no, na + no);
    m << s.a, s.b, s.b.transpose(), s.c;
    Eigen::MatrixXd minv = m.ldlt().solve(Eigen::MatrixXd::Identity(na + no, na + no));
    WalkKernel ok = odd_walk_kernel(g);
    rep.max_row_excess = std::max(rep.max_row_excess, ok.max_row_excess);
    Eigen::MatrixXd godd = green_matrix(ok);
    for (int i = 0; i < no; ++i)
      for (int j = 0; j < no; ++j)
        rep.odd_residual =
            std::max(rep.odd_residual, std::abs(minv(na + i, na + j) - godd(i, j)));
  }

  if (ne > 0) {
    Eigen::MatrixXd einv = s.e.ldlt().solve(Eigen::MatrixXd::Identity(ne, ne));
    WalkKernel ek = even_walk_kernel(g);
    rep.max_row_excess = std::max(rep.max_row_excess, ek.max_row_excess);
    Eigen::MatrixXd geven = green_matrix(ek);
    for (int i = 0; i < ne; ++i)
      for (int j = 0; j < ne; ++j) {
        double sign = ((s.even[i].x - s.even[j].x) % 2 + 2) % 2 == 0 ? 1.0 : -1.0;
        rep.even_residual =
            std::max(rep.even_residual, std::abs(einv(i, j) - sign * geven(i, j)));
      }
  }

  // informational: the full D^{-1} does couple the sectors near strip ends
  Eigen::SparseMatrix<cd> k = kasteleyn_sparse(g);
  Eigen::MatrixXcd d = Eigen::MatrixXcd(Eigen::SparseMatrix<cd>(k.adjoint()) * k);
  Eigen::MatrixXcd dinv =
      d.partialPivLu().solve(Eigen::MatrixXcd::Identity(g.size(), g.size()));
  for (size_t i = 0; i < g.size(); ++i)
    for (size_t j = 0; j < g.size(); ++j) {
      bool io = row_parity(g.vertices[i]) == 1, jo = row_parity(g.vertices[j]) == 1;
      if (io != jo)
        rep.full_inverse_mixed_max =
            std::max(rep.full_inverse_mixed_max, std::abs(dinv(i, j)));
    }
  return rep;
}

// Adaptive choice of the side extension: start at 4 |V_0| and double until
// the odd kernel has nonnegative jumps and strictly substochastic rows.
inline int choose_n_side(const Domain& dom, double z, int n_cap = 1 << 14) {
  int n = 4 * std::max<int>(1, int(dom.free_boundary.size()));
  while (n <= n_cap) {
    try {
      AugmentedDomain g = augment(dom, z, n, CornerMode::finite_n);
      WalkKernel k = odd_walk_kernel(g);
      if (k.max_row_excess <= 0) return n;
    } catch (const NeedLargerN&) {
    }
    n *= 2;
  }
  throw NumericalError("no admissible side extension below cap " + std::to_string(n_cap));
}

}  // namespace freedimer
