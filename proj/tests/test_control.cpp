#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gwhf/control.hpp"
#include "support/admm_oracle.hpp"
#include "support/helpers.hpp"

using namespace gwhf;
using testsup::Rng;

namespace {

Graph two_node() { return Graph(2, {{0, 1, 1.0, 1.0}}); }
Graph path3() { return Graph(3, {{0, 1, 1.0, 1.0}, {1, 2, 1.0, 1.0}}); }

// density with a randomly chosen support, normalized; at least one node kept
NodeField random_boundary_density(Rng& eng, int n) {
  NodeField rho(n, 0.0);
  double s = 0.0;
  for (int tries = 0; s == 0.0 && tries < 50; ++tries)
    for (int i = 0; i < n; ++i) {
      rho[i] = testsup::uniform(eng, 0.0, 1.0) < 0.4 ? 0.0 : testsup::uniform(eng, 0.1, 1.0);
      s += rho[i];
    }
  if (s == 0.0) {
    rho[0] = 1.0;
    return rho;
  }
  for (double& x : rho) x /= s;
  return rho;
}

double slice_mass_error(const DensityPath& rho) {
  double worst = 0.0;
  for (const auto& r : rho) worst = std::max(worst, std::abs(sum(r) - 1.0));
  return worst;
}

double min_entry(const DensityPath& rho) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : rho)
    for (double v : r) m = std::min(m, v);
  return m;
}

}  // namespace

TEST_CASE("variant names round trip") {
  CHECK(control_variant_from_string(to_string(ControlVariant::AdditiveWZ)) ==
        ControlVariant::AdditiveWZ);
  CHECK(control_variant_from_string(to_string(ControlVariant::SpecialMultiplicative)) ==
        ControlVariant::SpecialMultiplicative);
  CHECK_THROWS_AS(control_variant_from_string("classic"), InvalidInput);
}

TEST_CASE("problem validation rejects malformed input") {
  ControlProblem p(two_node());
  p.rho_a = {0.5, 0.5};
  p.rho_b = {0.2, 0.8};
  p.intervals = 8;
  REQUIRE_NOTHROW(p.validate());

  SECTION("interval count") {
    p.intervals = 0;
    CHECK_THROWS_AS(p.validate(), InvalidInput);
  }
  SECTION("marginal size") {
    p.rho_b = {1.0};
    CHECK_THROWS_AS(p.validate(), InvalidInput);
  }
  SECTION("marginal mass") {
    p.rho_b = {0.4, 0.4};
    CHECK_THROWS_AS(p.validate(), InvalidInput);
  }
  SECTION("potential size") {
    p.sigma = {1.0, 0.0, 0.0};
    CHECK_THROWS_AS(p.validate(), InvalidInput);
  }
  SECTION("noise width must tile the grid") {
    const WienerPath wp = sample_wiener(3, 1.0, 1.0 / 8);
    const WongZakaiPath wz{wp, 1.0 / 8};
    p.wz = &wz;
    p.intervals = 12;  // h = 1/12 does not divide 1/8
    CHECK_THROWS_AS(p.validate(), InvalidInput);
    p.intervals = 8;
    REQUIRE_NOTHROW(p.validate());
  }
  SECTION("noise horizon must cover the unit interval") {
    const WienerPath wp = sample_wiener(3, 0.5, 1.0 / 8);
    const WongZakaiPath wz{wp, 1.0 / 8};
    p.wz = &wz;
    CHECK_THROWS_AS(p.validate(), InvalidInput);
  }
}

TEST_CASE("interval slopes sample the piecewise-linear path") {
  ControlProblem p(two_node());
  p.rho_a = {0.5, 0.5};
  p.rho_b = {0.2, 0.8};
  p.intervals = 16;
  CHECK(interval_slopes(p) == std::vector<double>(16, 0.0));

  const WienerPath wp = sample_wiener(9, 1.0, 1.0 / 16);
  const WongZakaiPath wz{wp, 0.25};
  p.wz = &wz;
  const std::vector<double> wd = interval_slopes(p);
  REQUIRE(wd.size() == 16);
  for (int k = 0; k < 16; ++k) {
    const int knot = k / 4;  // four grid intervals per noise knot
    const double expect = (wz.knot_value(knot + 1) - wz.knot_value(knot)) / wz.delta;
    CHECK(std::abs(wd[k] - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
  }
}

TEST_CASE("action pins to hand-computed values") {
  ControlProblem p(two_node());
  p.rho_a = {0.5, 0.5};
  p.rho_b = {0.5, 0.5};
  p.intervals = 4;
  DensityPath rho(5, NodeField{0.5, 0.5});
  FluxPath m(4, EdgeField{0.0});

  CHECK(action(p, rho, m) == 0.0);

  // theta = 1/2 on every interval, m = 1: integral of m^2/(2 theta) = 1
  for (auto& slice : m) slice[0] = 1.0;
  CHECK(std::abs(action(p, rho, m) - 1.0) <= 1e-15);

  // flux across a dead edge costs infinitely much
  for (auto& slice : rho) slice = {1.0, 0.0};
  ControlProblem q(path3());
  q.rho_a = {1.0, 0.0, 0.0};
  q.rho_b = {1.0, 0.0, 0.0};
  q.intervals = 4;
  DensityPath rho3(5, NodeField{1.0, 0.0, 0.0});
  FluxPath m3(4, EdgeField{0.0, 0.0});
  CHECK(action(q, rho3, m3) == 0.0);
  m3[2][1] = 0.5;  // edge (1,2) has theta = 0
  CHECK(std::isinf(action(q, rho3, m3)));

  SECTION("path shape validation") {
    CHECK_THROWS_AS(action(p, DensityPath(3, NodeField{0.5, 0.5}), m), InvalidInput);
    CHECK_THROWS_AS(action(p, rho, FluxPath(2, EdgeField{0.0})), InvalidInput);
  }
}

TEST_CASE("tree solver inverts the incidence divergence") {
  Rng eng(20250816);
  for (int trial = 0; trial < 40; ++trial) {
    const Graph g = testsup::random_connected_graph(eng, 2, 7);
    const detail::TreeSolver tree(g, trial % g.nodes());
    NodeField q(g.nodes());
    double s = 0.0;
    for (int i = 1; i < g.nodes(); ++i) s += (q[i] = testsup::uniform(eng, -1.0, 1.0));
    q[0] = -s;  // zero-sum source
    const EdgeField f = tree.solve(q);
    const NodeField back = detail::flux_divergence(g, f);
    for (int i = 0; i < g.nodes(); ++i) CHECK(std::abs(back[i] - q[i]) <= 1e-13);
    // flux is supported on the tree
    std::vector<char> on_tree(g.edge_count(), 0);
    for (int v = 0; v < g.nodes(); ++v)
      if (tree.parent_edge[v] >= 0) on_tree[tree.parent_edge[v]] = 1;
    for (int e = 0; e < g.edge_count(); ++e)
      if (!on_tree[e]) CHECK(f[e] == 0.0);
  }
}

TEST_CASE("perspective prox satisfies its optimality system") {
  Rng eng(777);
  for (int trial = 0; trial < 300; ++trial) {
    const double at = testsup::uniform(eng, -2.0, 2.0);
    const double ut = testsup::uniform(eng, -3.0, 3.0);
    const double gamma = std::exp(testsup::uniform(eng, -4.0, 3.0));
    const auto [a, u] = detail::prox_pair(at, ut, gamma);
    REQUIRE(a >= 0.0);
    if (a > 0.0) {
      const double lhs = (a - at) * (a + gamma) * (a + gamma);
      const double rhs = 0.5 * gamma * ut * ut;
      CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(1.0, std::abs(rhs)));
      CHECK(std::abs(u - ut * a / (a + gamma)) <= 1e-12 * std::max(1.0, std::abs(ut)));
    } else {
      CHECK(u == 0.0);
      CHECK(at * gamma + 0.5 * ut * ut <= 1e-12);
    }
    // agreement with the search-based prox used by the cross-check solver
    const auto [a2, u2] = oracle::detail::prox_search(at, ut, gamma);
    CHECK(std::abs(a - a2) <= 1e-7 * std::max(1.0, std::abs(a)));
    CHECK(std::abs(u - u2) <= 1e-7 * std::max(1.0, std::abs(u)));
  }
}

TEST_CASE("feasible paths are exact and finite over random marginal pairs") {
  Rng eng(424242);
  const WienerPath wp = sample_wiener(31, 1.0, 1.0 / 16);
  const WongZakaiPath wz{wp, 1.0 / 8};
  int boundary_pairs = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Graph g = testsup::random_connected_graph(eng, 2, 6);
    const int n = g.nodes();
    ControlProblem p(g);
    const bool interior = trial % 3 == 0;
    p.rho_a = interior ? testsup::random_interior_density(eng, n)
                       : random_boundary_density(eng, n);
    p.rho_b = interior ? testsup::random_interior_density(eng, n)
                       : random_boundary_density(eng, n);
    if (!interior) ++boundary_pairs;
    p.intervals = 16;
    if (trial % 2 == 0) {
      p.wz = &wz;
      p.sigma = testsup::random_potential(eng, n);
    }
    const auto [rho, m] = feasible_path(p);
    REQUIRE(rho.size() == 17);
    REQUIRE(m.size() == 16);
    CHECK(constraint_residual(p, rho, m) <= 1e-12);
    const double a = action(p, rho, m);
    CHECK(std::isfinite(a));
    CHECK(a >= 0.0);
    CHECK(slice_mass_error(rho) <= 1e-12);
    CHECK(min_entry(rho) >= -1e-15);
    for (int i = 0; i < n; ++i) {
      CHECK(rho.front()[i] == p.rho_a[i]);
      CHECK(std::abs(rho.back()[i] - p.rho_b[i]) <= 1e-12);
    }
  }
  REQUIRE(boundary_pairs > 10);
}

TEST_CASE("two-node feasible path reproduces the hold-and-ramp closed form") {
  const WienerPath wp = sample_wiener(3, 1.0, 1.0 / 32);
  const WongZakaiPath wz{wp, 1.0 / 8};
  ControlProblem p(two_node());
  p.rho_a = {1.0, 0.0};
  p.rho_b = {0.25, 0.75};
  p.sigma = {0.7, -0.3};
  p.wz = &wz;
  p.intervals = 32;
  const auto [rho, m] = feasible_path(p);
  const std::vector<double> wd = interval_slopes(p);
  const int ramp = 4;  // delta / h grid intervals
  for (int k = 0; k < 32 - ramp; ++k) {
    // held at rho_a: the flux only balances the noise term,
    // m = theta (sigma_1 - sigma_0) Wdot with theta = 1/2
    const double expect = 0.5 * (p.sigma[1] - p.sigma[0]) * wd[k];
    CHECK(std::abs(m[k][0] - expect) <= 1e-12 * std::max(1.0, std::abs(expect)));
    CHECK(rho[k][0] == 1.0);
  }
  for (int k = 32 - ramp; k < 32; ++k) {
    // linear ramp: transfer part (rho_b - rho_a)_0 / delta on top of noise
    const NodeField mid = {0.5 * (rho[k][0] + rho[k + 1][0]),
                           0.5 * (rho[k][1] + rho[k + 1][1])};
    const double th = 0.5 * (mid[0] + mid[1]);
    const double expect =
        (p.rho_b[0] - p.rho_a[0]) / wz.delta + th * (p.sigma[1] - p.sigma[0]) * wd[k];
    CHECK(std::abs(m[k][0] - expect) <= 1e-10);
  }
  CHECK(constraint_residual(p, rho, m) <= 1e-12);
}

TEST_CASE("identical marginals with no potential give the zero path") {
  ControlProblem p(path3());
  p.rho_a = {0.2, 0.3, 0.5};
  p.rho_b = {0.2, 0.3, 0.5};
  p.intervals = 8;
  const auto [rho, m] = feasible_path(p);
  CHECK(action(p, rho, m) == 0.0);
  for (const auto& slice : m)
    for (double v : slice) CHECK(v == 0.0);
  for (const auto& slice : rho)
    for (int i = 0; i < 3; ++i) CHECK(slice[i] == p.rho_a[i]);
}

TEST_CASE("feasible flux never crosses a dead edge") {
  Graph g(4, {{0, 1, 1.3, 1.0}, {1, 2, 0.8, 1.0}, {2, 3, 1.1, 1.0}});
  const WienerPath wp = sample_wiener(13, 1.0, 1.0 / 16);
  const WongZakaiPath wz{wp, 1.0 / 8};
  ControlProblem p(g);
  p.rho_a = {0.0, 0.0, 0.5, 0.5};
  p.rho_b = {0.0, 0.0, 1.0, 0.0};
  p.sigma = {1.0, -0.5, 0.25, 0.0};
  p.wz = &wz;
  p.intervals = 16;
  const auto [rho, m] = feasible_path(p);
  CHECK(constraint_residual(p, rho, m) <= 1e-12);
  CHECK(std::isfinite(action(p, rho, m)));
  // nodes 0 and 1 stay empty, so edge (0,1) has theta = 0 throughout and
  // carries exactly no flux; same for the noise part on that edge
  for (int k = 0; k < 16; ++k) {
    CHECK(m[k][0] == 0.0);
    CHECK(rho[k][0] == 0.0);
    CHECK(rho[k][1] == 0.0);
  }
}

TEST_CASE("feasible path demands enough intervals for the transfer chain") {
  Graph g(6, {{0, 1, 1.0, 1.0},
              {1, 2, 1.0, 1.0},
              {2, 3, 1.0, 1.0},
              {3, 4, 1.0, 1.0},
              {4, 5, 1.0, 1.0}});
  ControlProblem p(g);
  p.rho_a = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  p.rho_b = {0.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  p.intervals = 4;  // five single-edge moves needed
  CHECK_THROWS_AS(feasible_path(p), InvalidInput);
  p.intervals = 5;
  const auto [rho, m] = feasible_path(p);
  CHECK(constraint_residual(p, rho, m) <= 1e-12);
  CHECK(std::isfinite(action(p, rho, m)));
}

TEST_CASE("special-variant feasible path rejects a degenerate slope") {
  // hand-built path with a -20 slope on the first knot: 1 + 0.05 (-20) = 0
  WienerPath wp;
  wp.dt = 0.25;
  wp.w = {0.0, -5.0, -5.0, -5.0, -5.0};
  const WongZakaiPath wz{wp, 0.25};
  ControlProblem p(two_node());
  p.rho_a = {0.5, 0.5};
  p.rho_b = {0.2, 0.8};
  p.wz = &wz;
  p.intervals = 8;
  p.variant = ControlVariant::SpecialMultiplicative;
  p.epsilon = 0.05;
  CHECK_THROWS_WITH(feasible_path(p), Catch::Matchers::ContainsSubstring("interval 0"));
  p.epsilon = 0.01;  // slope harmless at a smaller scale
  const auto [rho, m] = feasible_path(p);
  CHECK(constraint_residual(p, rho, m) <= 1e-12);
}

TEST_CASE("solved geodesic matches the exact two-node distance") {
  ControlProblem p(two_node());
  p.rho_a = {0.3, 0.7};
  p.rho_b = {0.7, 0.3};
  p.intervals = 40;
  SolveOptions opt;
  opt.gap_abs = 1e-9;
  opt.gap_rel = 1e-7;
  const ControlSolution sol = solve(p, opt);

  REQUIRE(sol.rho.size() == 41);
  REQUIRE(sol.m.size() == 40);
  REQUIRE(sol.S.size() == 40);
  CHECK(std::abs(sol.action - 0.16) <= 1e-6);
  CHECK(std::abs(sol.gap) <= 1e-4 * 0.16);
  CHECK(sol.residual <= 1e-8);
  CHECK(slice_mass_error(sol.rho) <= 1e-8);
  CHECK(min_entry(sol.rho) >= -1e-9);

  // optimal flux is the constant 0.4 and the multiplier gradient matches
  // m = theta sqrt(w) (S_a - S_b) with theta = 1/2
  for (int k = 0; k < 40; ++k) {
    CHECK(std::abs(sol.m[k][0] - 0.4) <= 1e-3);
    CHECK(std::abs((sol.S[k][0] - sol.S[k][1]) - 0.8) <= 1e-3);
  }
  CHECK(stationarity_residual(p, sol) <= 1e-4);

  // reported numbers are recomputable from the returned path
  CHECK(std::abs(action(p, sol.rho, sol.m) - sol.action) <= 1e-12);
  CHECK(std::abs(duality_gap(p, sol) - sol.gap) <= 1e-12);
}

TEST_CASE("solver requires the arithmetic mean and a sane budget") {
  ControlProblem p(two_node());
  p.rho_a = {0.3, 0.7};
  p.rho_b = {0.7, 0.3};
  p.intervals = 8;
  SECTION("mean kind") {
    p.kind = ThetaKind::Logarithmic;
    CHECK_THROWS_AS(solve(p), InvalidInput);
  }
  SECTION("iteration budget exhaustion reports the monitored state") {
    SolveOptions opt;
    opt.max_iterations = 10;
    opt.check_every = 5;
    try {
      solve(p, opt);
      FAIL("expected SolveFailure");
    } catch (const SolveFailure& f) {
      CHECK(f.iterations == 10);
      CHECK(std::isfinite(f.gap));
      CHECK(std::isfinite(f.residual));
    }
  }
}

TEST_CASE("identical marginals solve to the zero action instantly") {
  ControlProblem p(path3());
  p.rho_a = {0.2, 0.3, 0.5};
  p.rho_b = {0.2, 0.3, 0.5};
  p.intervals = 8;
  const ControlSolution sol = solve(p);
  CHECK(sol.action <= 1e-10);
  CHECK(std::abs(sol.gap) <= 1e-10);
}

TEST_CASE("primal-dual and operator-splitting solvers agree") {
  const WienerPath wp = sample_wiener(21, 1.0, 1.0 / 16);
  const WongZakaiPath wz{wp, 1.0 / 8};
  ControlProblem p(path3());
  p.rho_a = {0.6, 0.3, 0.1};
  p.rho_b = {0.1, 0.3, 0.6};
  p.sigma = {1.0, 0.0, 0.0};
  p.wz = &wz;
  p.intervals = 16;

  const ControlSolution sol = solve(p);
  const oracle::AdmmResult orc = oracle::admm_solve(p);
  REQUIRE(orc.split <= 1e-8);
  CHECK(std::abs(orc.action - sol.action) <= 1e-4 * sol.action);
  double path_diff = 0.0;
  for (size_t k = 0; k < orc.rho.size(); ++k)
    for (int i = 0; i < 3; ++i)
      path_diff = std::max(path_diff, std::abs(orc.rho[k][i] - sol.rho[k][i]));
  CHECK(path_diff <= 1e-3);
}

TEST_CASE("duality certificate bounds every solved instance") {
  Rng eng(90210);
  const WienerPath wp = sample_wiener(77, 1.0, 1.0 / 24);
  const WongZakaiPath wz{wp, 1.0 / 8};
  for (int trial = 0; trial < 12; ++trial) {
    const Graph g = testsup::random_connected_graph(eng, 2, 5);
    const int n = g.nodes();
    ControlProblem p(g);
    p.rho_a = testsup::random_interior_density(eng, n);
    p.rho_b = testsup::random_interior_density(eng, n);
    p.sigma = testsup::random_potential(eng, n, 0.7);
    p.wz = &wz;
    p.intervals = 24;
    const ControlSolution sol = solve(p);
    CHECK(sol.gap >= -1e-8);
    CHECK(std::abs(sol.gap) <= 1e-3 * std::max(1.0, sol.action));
    CHECK(sol.residual <= 1e-8);
    CHECK(slice_mass_error(sol.rho) <= 1e-8);

    // the certificate is a lower bound for ANY multiplier path, not just
    // the solver's: perturbing S may only lower the certified value
    std::vector<NodeField> s2 = sol.S;
    for (auto& slice : s2)
      for (double& v : slice) v += testsup::uniform(eng, -0.1, 0.1);
    const double dv2 = detail::dual_value(p, s2, interval_slopes(p));
    CHECK(sol.action >= dv2 - 1e-6);
  }
}

TEST_CASE("special variant at zero perturbation is the classical problem") {
  const WienerPath wp = sample_wiener(41, 1.0, 1.0 / 16);
  const WongZakaiPath wz{wp, 1.0 / 4};
  ControlProblem p(path3());
  p.rho_a = {0.5, 0.3, 0.2};
  p.rho_b = {0.2, 0.3, 0.5};
  p.wz = &wz;
  p.intervals = 16;
  const ControlSolution classical = solve(p);  // additive, empty potential
  const ControlSolution special = solve_special(p, 0.0);
  CHECK(std::abs(classical.action - special.action) <= 1e-6);
}

TEST_CASE("special variant confines mass to the reachable side") {
  const WienerPath wp = sample_wiener(5, 1.0, 1.0 / 64);
  const WongZakaiPath wz{wp, 1.0 / 16};
  ControlProblem p(path3());
  p.rho_a = {0.0, 0.0, 1.0};
  p.rho_b = {0.0, 0.5, 0.5};
  p.wz = &wz;
  p.intervals = 64;
  p.variant = ControlVariant::SpecialMultiplicative;
  p.epsilon = 0.1;
  SolveOptions opt;  // boundary marginals leave the dual degenerate; insist on
  opt.gap_abs = 1e-9;  // a near-exact solve so the confinement is sharp
  opt.gap_rel = 1e-7;
  opt.residual = 1e-10;
  opt.max_iterations = 500000;
  const ControlSolution sol = solve(p, opt);
  CHECK(sol.gap >= -1e-8);
  double worst0 = 0.0;
  for (const auto& slice : sol.rho) worst0 = std::max(worst0, std::abs(slice[0]));
  CHECK(worst0 <= 1e-6);
  // the optimum moves half the mass across edge (1,2) and nothing touches
  // the far edge
  for (int k = 0; k < 64; ++k) CHECK(std::abs(sol.m[k][0]) <= 1e-3);
}

TEST_CASE("vanishing perturbation recovers the classical action monotonically") {
  const WienerPath wp = sample_wiener(5, 1.0, 1.0 / 32);
  const WongZakaiPath wz{wp, 0.25};

  ControlProblem p2(two_node());
  p2.rho_a = {0.3, 0.7};
  p2.rho_b = {0.7, 0.3};
  p2.wz = &wz;
  p2.intervals = 32;
  const GammaStudy g2 = gamma_study(p2, {0.2, 0.1, 0.05});
  REQUIRE(g2.rows.size() == 3);
  CHECK(std::abs(g2.action0 - 0.16) <= 1e-4);
  const double d20 = std::abs(g2.rows[0].second - g2.action0);
  const double d21 = std::abs(g2.rows[1].second - g2.action0);
  const double d22 = std::abs(g2.rows[2].second - g2.action0);
  CHECK(d20 > d21);
  CHECK(d21 > d22);

  ControlProblem p3(path3());
  p3.rho_a = {0.6, 0.3, 0.1};
  p3.rho_b = {0.1, 0.3, 0.6};
  p3.wz = &wz;
  p3.intervals = 32;
  const GammaStudy g3 = gamma_study(p3, {0.2, 0.1, 0.05});
  const double d30 = std::abs(g3.rows[0].second - g3.action0);
  const double d31 = std::abs(g3.rows[1].second - g3.action0);
  const double d32 = std::abs(g3.rows[2].second - g3.action0);
  CHECK(d30 > d31);
  CHECK(d31 > d32);
}

TEST_CASE("interior instances satisfy the discrete optimality system") {
  const WienerPath wp = sample_wiener(11, 1.0, 1.0 / 32);
  const WongZakaiPath wz{wp, 1.0 / 8};
  ControlProblem p(path3());
  p.rho_a = {0.6, 0.3, 0.1};
  p.rho_b = {0.1, 0.3, 0.6};
  p.sigma = {1.0, 0.0, 0.0};
  p.wz = &wz;
  p.intervals = 32;
  SolveOptions opt;
  opt.gap_abs = 1e-9;
  opt.gap_rel = 1e-7;
  const ControlSolution sol = solve(p, opt);
  REQUIRE(min_entry(sol.rho) > 1e-6);
  CHECK(stationarity_residual(p, sol) <= 1e-3);
}
