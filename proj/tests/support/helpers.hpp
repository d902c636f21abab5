#pragma once

// Shared test utilities: random instances and independent oracles.  The
// oracles deliberately re-derive quantities from first principles (directed
// double sums, finite differences) rather than reusing library internals.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "gwhf/energy.hpp"
#include "gwhf/graph.hpp"
#include "gwhf/util.hpp"

namespace testsup {

using gwhf::EdgeField;
using gwhf::EnergyCoeffs;
using gwhf::Graph;
using gwhf::NodeField;
using gwhf::ThetaKind;

using Rng = std::mt19937_64;

inline double uniform(Rng& eng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(eng);
}

inline int uniform_int(Rng& eng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(eng);
}

/// Random connected graph: a random spanning tree plus each remaining pair
/// independently with probability p.  Weights drawn from [0.5, 2].
inline Graph random_connected_graph(Rng& eng, int nmin = 2, int nmax = 8, double p = 0.3) {
  const int n = uniform_int(eng, nmin, nmax);
  std::vector<std::vector<char>> present(n, std::vector<char>(n, 0));
  std::vector<gwhf::Edge> edges;
  auto add = [&](int a, int b) {
    edges.push_back({a, b, uniform(eng, 0.5, 2.0), uniform(eng, 0.5, 2.0)});
    present[a][b] = present[b][a] = 1;
  };
  for (int i = 1; i < n; ++i) add(uniform_int(eng, 0, i - 1), i);
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      if (!present[a][b] && uniform(eng, 0.0, 1.0) < p) add(a, b);
  return Graph(n, std::move(edges));
}

/// Interior density bounded away from the boundary: entries in
/// [0.1, 1.1] before normalization, so min_i rho_i >= 0.1/(1.1 N).
inline NodeField random_interior_density(Rng& eng, int n) {
  NodeField rho(n);
  double s = 0.0;
  for (double& x : rho) s += (x = uniform(eng, 0.1, 1.1));
  for (double& x : rho) x /= s;
  return rho;
}

inline NodeField random_potential(Rng& eng, int n, double scale = 1.0) {
  NodeField S(n);
  for (double& x : S) x = uniform(eng, -scale, scale);
  return S;
}

/// Random coefficient set exercising every term.  Fisher kept nonnegative.
inline EnergyCoeffs random_coeffs(Rng& eng, int n, double scale = 1.0) {
  EnergyCoeffs c;
  c.kinetic = uniform(eng, -scale, scale);
  c.fisher = uniform(eng, 0.0, scale);
  c.linear = uniform(eng, -scale, scale);
  c.interaction = uniform(eng, -scale, scale);
  c.entropy = uniform(eng, -scale, scale);
  c.v.resize(n);
  for (double& x : c.v) x = uniform(eng, -scale, scale);
  c.w.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) c.w[i * n + j] = c.w[j * n + i] = uniform(eng, -scale, scale);
  return c;
}

/// Inner product recomputed as the paper-style half sum over all directed
/// pairs, walking a dense adjacency matrix.
inline double brute_inner_product(const Graph& g, const NodeField& rho, const EdgeField& u,
                                  const EdgeField& v, ThetaKind kind) {
  const int n = g.nodes();
  std::vector<std::vector<double>> uu(n, std::vector<double>(n, 0.0)), vv = uu, ww = uu;
  std::vector<std::vector<char>> has(n, std::vector<char>(n, 0));
  for (int e = 0; e < g.edge_count(); ++e) {
    const auto& ed = g.edge(e);
    uu[ed.a][ed.b] = u[e];
    uu[ed.b][ed.a] = -u[e];
    vv[ed.a][ed.b] = v[e];
    vv[ed.b][ed.a] = -v[e];
    ww[ed.a][ed.b] = ww[ed.b][ed.a] = ed.w;
    has[ed.a][ed.b] = has[ed.b][ed.a] = 1;
  }
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (has[i][j])
        s += 0.5 * uu[i][j] * vv[i][j] * gwhf::theta(kind, rho[i], rho[j]) * ww[i][j];
  return s;
}

/// Central difference d f / d x_i at step h.
inline double fd(const std::function<double(const NodeField&)>& f, NodeField x, int i,
                 double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

/// |a - b| <= tol * max(1, |b|): relative tolerance with an absolute floor.
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace testsup
