#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

#include "freedimer/kasteleyn.hpp"
#include "oracle.hpp"

using namespace freedimer;

namespace {

Eigen::MatrixXcd random_skew(int n, std::mt19937& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      a(i, j) = cd(u(gen), u(gen));
      a(j, i) = -a(i, j);
    }
  return a;
}

double oracle_truncated(const AugmentedDomain& a,
                        const std::vector<oracle::WeightedMatching>& ms,
                        const std::vector<std::pair<Pt, Pt>>& edges) {
  std::vector<std::pair<int, int>> want;
  std::vector<double> p;
  for (auto [u, v] : edges) {
    int i = a.at(u), j = a.at(v);
    if (i > j) std::swap(i, j);
    want.push_back({i, j});
    p.push_back(oracle::joint_probability(ms, {{i, j}}));
  }
  double z = oracle::total_weight(ms), acc = 0;
  for (const auto& m : ms) {
    double term = m.weight;
    for (size_t t = 0; t < want.size(); ++t) {
      bool in = std::find(m.pairs.begin(), m.pairs.end(), want[t]) != m.pairs.end();
      term *= (in ? 1.0 : 0.0) - p[t];
    }
    acc += term;
  }
  return acc / z;
}

}  // namespace

TEST_CASE("pfaffian basics") {
  Eigen::MatrixXcd two(2, 2);
  two << 0, cd(3, 1), cd(-3, -1), 0;
  CHECK(std::abs(pfaffian(two) - cd(3, 1)) < 1e-14);

  cd a(0.3, 1), b(-1.1, 0.2), c(0.7, 0), d(2.0, -0.5), e(0.1, 0.1), f(-0.4, 0.9);
  Eigen::MatrixXcd four(4, 4);
  four << 0, a, b, c, -a, 0, d, e, -b, -d, 0, f, -c, -e, -f, 0;
  CHECK(std::abs(pfaffian(four) - (a * f - b * e + c * d)) < 1e-13);

  std::mt19937 gen(12345);
  for (int n = 2; n <= 40; n += 2) {
    Eigen::MatrixXcd m = random_skew(n, gen);
    cd pf = pfaffian(m);
    cd det = m.determinant();
    CHECK(std::abs(pf * pf - det) < 1e-8 * std::max(1.0, std::abs(det)));
  }

  CHECK(pfaffian(Eigen::MatrixXcd::Zero(6, 6)) == cd(0.0));
  CHECK_THROWS_AS(pfaffian(Eigen::MatrixXcd::Zero(3, 3)), ValidationError);

  // block diagonal multiplies
  Eigen::MatrixXcd blk = Eigen::MatrixXcd::Zero(6, 6);
  blk.block(0, 0, 2, 2) = two;
  blk.block(2, 2, 4, 4) = four;
  CHECK(std::abs(pfaffian(blk) - pfaffian(two) * pfaffian(four)) < 1e-12);
}

TEST_CASE("orientation and gauge") {
  Domain d = build_rectangle_domain(5, 3);
  double z = 0.8, zp = corner_weight(z);
  AugmentedDomain g = augment(d, z, 0);
  SkewMatrix k = kasteleyn_matrix(g);
  auto entry = [&](Pt u, Pt v) { return k.a(g.at(u), g.at(v)); };

  // interior bottom-row vertex, neighbours counterclockwise from the top
  Pt x{1, 0};
  CHECK(std::abs(entry(x, {1, 1}) - cd(0, -1)) < 1e-15);
  CHECK(std::abs(entry(x, {0, 0}) - cd(-1, 0)) < 1e-15);
  CHECK(std::abs(entry(x, {0, -1}) - cd(0, z)) < 1e-15);
  CHECK(std::abs(entry(x, {1, -1}) - cd(0, z)) < 1e-15);
  CHECK(std::abs(entry(x, {2, 0}) - cd(1, 0)) < 1e-15);

  // corner legs carry the corner weight
  CHECK(std::abs(entry({0, 0}, {0, -1}) - cd(0, zp)) < 1e-15);
  CHECK(std::abs(entry({0, 0}, {-1, -1}) - cd(0, zp)) < 1e-15);

  // apex row runs left to right with real entries
  CHECK(std::abs(entry({0, -1}, {1, -1}) - cd(1, 0)) < 1e-15);

  // odd rows left to right, even rows right to left, verticals down
  CHECK(std::abs(entry({0, 1}, {1, 1}) - cd(1, 0)) < 1e-15);
  CHECK(std::abs(entry({1, 2}, {0, 2}) - cd(-1, 0)) < 1e-15);
  CHECK(std::abs(entry({0, 2}, {0, 1}) - cd(0, 1)) < 1e-15);
}

TEST_CASE("bounded faces satisfy the parity condition") {
  for (const auto& entry : oracle::small_corpus()) {
    for (int n : {0, 1}) {
      AugmentedDomain g = augment(entry.domain, 1.0, n,
                                  n == 0 ? CornerMode::explicit_zp : CornerMode::finite_n);
      CHECK_NOTHROW(check_face_condition(g));
      // connected planar graph: bounded faces = edges - vertices + 1
      CHECK(bounded_faces(g).size() == g.edges.size() - g.size() + 1);
    }
  }
}

TEST_CASE("partition function matches enumeration") {
  for (const auto& entry : oracle::small_corpus()) {
    for (double z : {0.3, 1.0, 1.7}) {
      AugmentedDomain g = augment(entry.domain, z, 0);
      double zn = oracle::total_weight(oracle::enumerate_matchings(g));
      double pf = partition_function(g);
      INFO(entry.name << " z=" << z);
      CHECK(pf == Catch::Approx(zn).epsilon(1e-9));
    }
  }
  for (const auto& name : {"rect3x3", "lshape", "strip4", "block2x2"}) {
    for (int n : {1, 2}) {
      for (const auto& entry : oracle::small_corpus()) {
        if (entry.name != name) continue;
        AugmentedDomain g = augment(entry.domain, 1.2, n, CornerMode::finite_n);
        double zn = oracle::total_weight(oracle::enumerate_matchings(g));
        INFO(entry.name << " N=" << n);
        CHECK(partition_function(g) == Catch::Approx(zn).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("edge probabilities match enumeration") {
  for (const auto& entry : oracle::small_corpus()) {
    AugmentedDomain g = augment(entry.domain, 0.8, 0);
    auto ms = oracle::enumerate_matchings(g);
    SkewMatrix k = kasteleyn_matrix(g);
    Eigen::MatrixXcd kinv = inverse_kasteleyn(k);

    CHECK((kinv + kinv.transpose()).cwiseAbs().maxCoeff() < 1e-11);
    Eigen::MatrixXcd alt = inverse_kasteleyn_via_d(k);
    CHECK((kinv - alt).cwiseAbs().maxCoeff() < 1e-9);

    for (const auto& e : g.edges) {
      Pt u = g.vertices[e.u], v = g.vertices[e.v];
      if (!g.is_base(u) || !g.is_base(v)) continue;
      double want = oracle::joint_probability(ms, {{e.u, e.v}});
      double got = edge_probability(g, k, kinv, u, v);
      INFO(entry.name << " edge " << pt_str(u) << "-" << pt_str(v));
      CHECK(got == Catch::Approx(want).margin(1e-9));
      CHECK(got >= -1e-12);
      CHECK(got <= 1 + 1e-12);
    }

    // bulk vertices are always covered by a dimer of the base graph
    for (Pt p : g.base.vertices) {
      if (p.y == 0) continue;
      double s = 0;
      for (int nb : g.base.adj[g.base.at(p)])
        s += edge_probability(g, k, kinv, p, g.base.vertices[nb]);
      CHECK(s == Catch::Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("finite extension probabilities match enumeration") {
  for (const auto& entry : oracle::small_corpus()) {
    if (entry.name != "rect3x3" && entry.name != "lshape") continue;
    AugmentedDomain g = augment(entry.domain, 1.3, 1, CornerMode::finite_n);
    auto ms = oracle::enumerate_matchings(g);
    SkewMatrix k = kasteleyn_matrix(g);
    Eigen::MatrixXcd kinv = inverse_kasteleyn(k);
    for (const auto& e : g.edges) {
      Pt u = g.vertices[e.u], v = g.vertices[e.v];
      double want = oracle::joint_probability(ms, {{e.u, e.v}});
      double got = edge_probability(g, k, kinv, u, v);
      INFO(entry.name << " edge " << pt_str(u) << "-" << pt_str(v));
      CHECK(got == Catch::Approx(want).margin(1e-9));
    }
  }
}

TEST_CASE("joint probabilities and truncated correlations") {
  Domain d = build_rectangle_domain(5, 3);
  AugmentedDomain g = augment(d, 0.8, 0);
  auto ms = oracle::enumerate_matchings(g);
  SkewMatrix k = kasteleyn_matrix(g);
  Eigen::MatrixXcd kinv = inverse_kasteleyn(k);

  std::vector<std::pair<Pt, Pt>> base_edges;
  for (const auto& e : g.edges) {
    Pt u = g.vertices[e.u], v = g.vertices[e.v];
    if (g.is_base(u) && g.is_base(v)) base_edges.push_back({u, v});
  }

  auto disjoint = [](const std::vector<std::pair<Pt, Pt>>& es) {
    std::vector<Pt> pts;
    for (auto [u, v] : es) {
      pts.push_back(u);
      pts.push_back(v);
    }
    std::sort(pts.begin(), pts.end());
    return std::adjacent_find(pts.begin(), pts.end()) == pts.end();
  };
  auto oracle_joint = [&](const std::vector<std::pair<Pt, Pt>>& es) {
    std::vector<std::pair<int, int>> want;
    for (auto [u, v] : es) want.push_back({g.at(u), g.at(v)});
    return oracle::joint_probability(ms, want);
  };

  int pairs = 0, triples = 0;
  for (size_t i = 0; i < base_edges.size(); ++i)
    for (size_t j = i + 1; j < base_edges.size(); ++j) {
      std::vector<std::pair<Pt, Pt>> es{base_edges[i], base_edges[j]};
      if (!disjoint(es)) continue;
      ++pairs;
      double want = oracle_joint(es);
      CHECK(joint_dimer_probability(g, k, kinv, es) == Catch::Approx(want).margin(1e-9));
      // centered two-point function against enumeration and the entry formula
      double cov = oracle_truncated(g, ms, es);
      CHECK(truncated_correlation(g, k, kinv, es) == Catch::Approx(cov).margin(1e-9));
      EdgeList el = normalize_edges(g, es);
      auto [w1, b1] = el.wb[0];
      auto [w2, b2] = el.wb[1];
      cd af = k.a(g.at(w1), g.at(b1)) * k.a(g.at(w2), g.at(b2));
      cd direct = af * (kinv(g.at(b1), g.at(w2)) * kinv(g.at(w1), g.at(b2)) -
                        kinv(g.at(w1), g.at(w2)) * kinv(g.at(b1), g.at(b2)));
      CHECK(direct.real() == Catch::Approx(cov).margin(1e-9));
      CHECK(std::abs(direct.imag()) < 1e-9);
    }
  CHECK(pairs > 40);

  for (size_t i = 0; i < base_edges.size(); i += 3)
    for (size_t j = i + 1; j < base_edges.size(); j += 2) {
      for (size_t l = j + 1; l < base_edges.size(); l += 2) {
        std::vector<std::pair<Pt, Pt>> es{base_edges[i], base_edges[j], base_edges[l]};
        if (!disjoint(es)) continue;
        ++triples;
        CHECK(joint_dimer_probability(g, k, kinv, es) ==
              Catch::Approx(oracle_joint(es)).margin(1e-9));
        CHECK(truncated_correlation(g, k, kinv, es) ==
              Catch::Approx(oracle_truncated(g, ms, es)).margin(1e-9));
      }
    }
  CHECK(triples > 15);

  CHECK(truncated_correlation(g, k, kinv, {base_edges[0]}) == 0.0);

  // white/black order is normalized internally
  auto [u0, v0] = base_edges[0];
  CHECK(edge_probability(g, k, kinv, u0, v0) == edge_probability(g, k, kinv, v0, u0));

  CHECK_THROWS_AS(joint_dimer_probability(g, k, kinv, {{Pt{0, 0}, Pt{1, 1}}}),
                  ValidationError);
  CHECK_THROWS_AS(joint_dimer_probability(g, k, kinv, {{Pt{0, 0}, Pt{0, 5}}}),
                  ValidationError);
  std::vector<std::pair<Pt, Pt>> sharing{{Pt{0, 0}, Pt{0, 1}}, {Pt{0, 1}, Pt{1, 1}}};
  CHECK_THROWS_AS(joint_dimer_probability(g, k, kinv, sharing), ValidationError);
}

TEST_CASE("sparse column solves match the dense inverse") {
  Domain d = build_rectangle_domain(7, 3);
  AugmentedDomain g = augment(d, 1.0, 1, CornerMode::finite_n);
  SkewMatrix k = kasteleyn_matrix(g);
  Eigen::MatrixXcd kinv = inverse_kasteleyn(k);
  KasteleynSystem sys(g);
  for (Pt v : {Pt{0, 0}, Pt{3, 1}, Pt{2, 2}, Pt{1, -1}, Pt{6, 0}}) {
    Eigen::VectorXcd col = sys.column(v);
    CHECK((col - kinv.col(g.at(v))).cwiseAbs().maxCoeff() < 1e-10);
  }
  CHECK(std::abs(sys.k_entry({0, 0}, {0, 1}) - k.a(g.at({0, 0}), g.at({0, 1}))) < 1e-15);
  CHECK_THROWS_AS(sys.column(Pt{99, 99}), ValidationError);
}

TEST_CASE("graphs without a cover are rejected") {
  // (0,3) is isolated, so no perfect matching exists
  Domain d = build_explicit_domain({{0, 0}, {1, 0}, {0, 1}, {0, 3}}, false);
  CHECK_THROWS_AS(build_explicit_domain({{0, 0}, {1, 0}, {0, 1}, {0, 3}}, true),
                  ValidationError);
  AugmentedDomain g = augment(d, 1.0, 0);
  REQUIRE(g.size() % 2 == 0);
  CHECK(partition_function(g) < 1e-12);
  SkewMatrix k = kasteleyn_matrix(g);
  CHECK_THROWS_AS(inverse_kasteleyn(k), NumericalError);
  CHECK_THROWS_AS(KasteleynSystem(g), NumericalError);
}

TEST_CASE("cyclic sums cancel at even order") {
  std::mt19937 gen(777);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int n : {4, 6}) {
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<cd> pts;
      for (int i = 0; i < n; ++i) pts.push_back(cd(u(gen), u(gen)));
      CHECK(std::abs(cyclic_cancellation(pts)) < 1e-10);
    }
  }
  // n = 2 is the exception: the single transposition gives -1/(x1-x2)^2
  std::vector<cd> two{cd(0, 0), cd(2, 0)};
  CHECK(std::abs(cyclic_cancellation(two) - cd(-0.25, 0)) < 1e-14);
  CHECK_THROWS_AS(cyclic_cancellation({cd(1, 0), cd(1, 0)}), ValidationError);
}
