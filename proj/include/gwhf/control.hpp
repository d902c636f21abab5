#pragma once

// Dynamic optimal-transport control on the unit time interval: action
// evaluation, exact feasible-path construction, a primal-dual solver for the
// convex program, duality certificates, the multiplicatively perturbed
// variant, and the vanishing-perturbation study.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gwhf/graph.hpp"
#include "gwhf/noise.hpp"
#include "gwhf/util.hpp"

namespace gwhf {

enum class ControlVariant { AdditiveWZ, SpecialMultiplicative };

inline const char* to_string(ControlVariant v) {
  return v == ControlVariant::AdditiveWZ ? "additive" : "special";
}

inline ControlVariant control_variant_from_string(const std::string& s) {
  if (s == "additive") return ControlVariant::AdditiveWZ;
  if (s == "special") return ControlVariant::SpecialMultiplicative;
  throw InvalidInput("unknown variant '" + s + "' (want additive|special)");
}

using DensityPath = std::vector<NodeField>;  // M+1 slices
using FluxPath = std::vector<EdgeField>;     // M slices, canonical orientation

/// Transport a density from rho_a at t=0 to rho_b at t=1 on M uniform
/// intervals, steering against the piecewise-linear noise path.  The
/// additive variant perturbs the continuity equation by the noise-potential
/// flux; the special variant rescales the whole flux by (1 + eps Wdot).
struct ControlProblem {
  explicit ControlProblem(Graph g) : graph(std::move(g)) {}

  Graph graph;
  NodeField rho_a, rho_b;
  NodeField sigma;                   // noise potential (additive variant); empty = zero
  double epsilon = 0.0;              // perturbation scale (special variant)
  const WongZakaiPath* wz = nullptr; // nullable: no noise
  int intervals = 0;                 // M, grid step h = 1/M
  ControlVariant variant = ControlVariant::AdditiveWZ;
  ThetaKind kind = ThetaKind::Arithmetic;

  double h() const { return 1.0 / intervals; }

  void validate() const {
    if (intervals < 1) throw InvalidInput("control problem needs at least one interval");
    const int n = graph.nodes();
    if (static_cast<int>(rho_a.size()) != n || static_cast<int>(rho_b.size()) != n)
      throw InvalidInput("boundary densities must have one entry per node");
    validate_density(rho_a);
    validate_density(rho_b);
    if (!sigma.empty() && static_cast<int>(sigma.size()) != n)
      throw InvalidInput("noise potential must have one entry per node");
    if (wz) {
      if (wz->base.t_end() < 1.0 - 1e-12)
        throw InvalidInput("noise path must cover the unit horizon");
      const double q = wz->delta * intervals;  // delta / h
      if (std::abs(q - std::round(q)) > 1e-9 || q < 1.0 - 1e-9)
        throw InvalidInput("noise width must be a multiple of the grid step");
    }
  }
};

struct ControlSolution {
  DensityPath rho;   // M+1
  FluxPath m;        // M
  std::vector<NodeField> S;  // M multiplier slices
  double action = 0.0;
  double gap = 0.0;
  double residual = 0.0;
  long iterations = 0;
};

struct SolveOptions {
  double gap_abs = 1e-6;
  double gap_rel = 1e-4;
  double residual = 1e-8;
  long max_iterations = 200000;
  long check_every = 250;
};

/// Per-interval slope of the noise path, sampled at interval midpoints
/// (the slope is constant there since the noise width tiles the grid).
inline std::vector<double> interval_slopes(const ControlProblem& p) {
  std::vector<double> wd(p.intervals, 0.0);
  if (p.wz)
    for (int k = 0; k < p.intervals; ++k) wd[k] = p.wz->slope((k + 0.5) * p.h());
  return wd;
}

namespace detail {

// Plain incidence divergence of an edge flux: out_a -= sqrt(w) f,
// out_b += sqrt(w) f per canonical edge.
inline NodeField flux_divergence(const Graph& g, const EdgeField& f) {
  NodeField out(g.nodes(), 0.0);
  for (int e = 0; e < g.edge_count(); ++e) {
    const Edge& ed = g.edge(e);
    const double t = std::sqrt(ed.w) * f[e];
    out[ed.a] -= t;
    out[ed.b] += t;
  }
  return out;
}

// Edge flux of the noise potential at density rho:
// theta_e(rho) sqrt(w_e) (sigma_a - sigma_b); its divergence is the noise
// term of the continuity constraint.
inline EdgeField noise_flux(const Graph& g, ThetaKind kind, const NodeField& sigma,
                            const NodeField& rho) {
  EdgeField f(g.edge_count(), 0.0);
  if (sigma.empty()) return f;
  for (int e = 0; e < g.edge_count(); ++e) {
    const Edge& ed = g.edge(e);
    f[e] = theta(kind, rho[ed.a], rho[ed.b]) * std::sqrt(ed.w) * (sigma[ed.a] - sigma[ed.b]);
  }
  return f;
}

// Exact solver for flux_divergence(f) = q supported on a BFS spanning tree.
// q must sum to zero (guaranteed for differences of densities and for
// divergence images).
struct TreeSolver {
  const Graph* g = nullptr;
  std::vector<int> order;        // BFS order from the root
  std::vector<int> parent_edge;  // edge linking a node to its parent
  std::vector<int> parent;

  explicit TreeSolver(const Graph& graph, int root = 0) : g(&graph) {
    const int n = graph.nodes();
    parent_edge.assign(n, -1);
    parent.assign(n, -1);
    std::vector<char> seen(n, 0);
    order.clear();
    order.push_back(root);
    seen[root] = 1;
    for (size_t q = 0; q < order.size(); ++q) {
      const int v = order[q];
      for (const auto& [l, e] : graph.neighbors(v))
        if (!seen[l]) {
          seen[l] = 1;
          parent[l] = v;
          parent_edge[l] = e;
          order.push_back(l);
        }
    }
  }

  EdgeField solve(NodeField need) const {
    EdgeField f(g->edge_count(), 0.0);
    for (size_t q = order.size(); q-- > 1;) {
      const int v = order[q];
      const int e = parent_edge[v];
      const Edge& ed = g->edge(e);
      const double sv = v == ed.a ? -1.0 : 1.0;   // sign of v in the divergence
      const double sw = std::sqrt(ed.w);
      f[e] = need[v] / (sv * sw);
      need[parent[v]] -= -sv * sw * f[e];  // parent carries the opposite sign
    }
    return f;
  }
};

inline NodeField midpoint(const NodeField& a, const NodeField& b) {
  NodeField m(a.size());
  for (size_t i = 0; i < a.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
  return m;
}

}  // namespace detail

/// Kinetic action of a discrete path:
///   A = sum_k h/2 sum_e L(theta_e(midpoint_k), m_{k,e}),
/// where L(x,y) = y^2/x for x > 0, L(0,0) = 0, and +infinity otherwise.
/// The infinite sentinel is a value, not an error.
inline double action(const ControlProblem& p, const DensityPath& rho, const FluxPath& m) {
  p.validate();
  const int M = p.intervals, ne = p.graph.edge_count();
  if (static_cast<int>(rho.size()) != M + 1 || static_cast<int>(m.size()) != M)
    throw InvalidInput("path lengths do not match the time grid");
  const double h = p.h();
  double a = 0.0;
  for (int k = 0; k < M; ++k) {
    if (static_cast<int>(m[k].size()) != ne)
      throw InvalidInput("flux slice has the wrong number of edges");
    const NodeField mid = detail::midpoint(rho[k], rho[k + 1]);
    for (int e = 0; e < ne; ++e) {
      const Edge& ed = p.graph.edge(e);
      const double th = theta(p.kind, std::max(mid[ed.a], 0.0), std::max(mid[ed.b], 0.0));
      const double y = m[k][e];
      if (th > 0.0)
        a += 0.5 * h * y * y / th;
      else if (y != 0.0)
        return std::numeric_limits<double>::infinity();
    }
  }
  return a;
}

/// Constraint residual of a discrete path, max norm over nodes and
/// intervals:  (rho_{k+1} - rho_k) + h div(m_k) + h Wdot_k div(noise flux)
/// for the additive variant, and (rho_{k+1} - rho_k) + h(1+eps Wdot_k)
/// div(m_k) for the special one.
inline double constraint_residual(const ControlProblem& p, const DensityPath& rho,
                                  const FluxPath& m) {
  const int M = p.intervals;
  const double h = p.h();
  const std::vector<double> wd = interval_slopes(p);
  double worst = 0.0;
  for (int k = 0; k < M; ++k) {
    const NodeField mid = detail::midpoint(rho[k], rho[k + 1]);
    NodeField r = detail::flux_divergence(p.graph, m[k]);
    const double scale = p.variant == ControlVariant::AdditiveWZ
                             ? h
                             : h * (1.0 + p.epsilon * wd[k]);
    for (double& x : r) x *= scale;
    if (p.variant == ControlVariant::AdditiveWZ && !p.sigma.empty()) {
      const NodeField noise =
          detail::flux_divergence(p.graph, detail::noise_flux(p.graph, p.kind, p.sigma, mid));
      for (size_t i = 0; i < r.size(); ++i) r[i] += h * wd[k] * noise[i];
    }
    for (size_t i = 0; i < r.size(); ++i)
      worst = std::max(worst, std::abs(rho[k + 1][i] - rho[k][i] + r[i]));
  }
  return worst;
}

/// Exact feasible path: a density schedule plus the flux solving the
/// continuity constraint on every interval.  Two nodes follow the
/// hold-then-ramp construction (ramp width = the noise width); larger
/// graphs chain single-edge transfers along a spanning tree through the
/// state with all mass at the last node.
inline std::pair<DensityPath, FluxPath> feasible_path(const ControlProblem& p) {
  p.validate();
  const int M = p.intervals, n = p.graph.nodes();
  const double h = p.h();
  const std::vector<double> wd = interval_slopes(p);
  if (p.variant == ControlVariant::SpecialMultiplicative)
    for (int k = 0; k < M; ++k)
      if (std::abs(1.0 + p.epsilon * wd[k]) < 1e-6)
        throw InvalidInput("degenerate noise slope on interval " + std::to_string(k));

  // 1. the density schedule.  Every interval moves mass across at most one
  // edge, recorded in move_edge (-1 = hold), so the transfer flux can later
  // be written down edge by edge instead of solved for -- that keeps it
  // exactly zero away from the active edge, where the density may vanish.
  DensityPath rho(M + 1);
  std::vector<int> move_edge(M, -1);
  bool same = true;
  for (int i = 0; i < n; ++i)
    if (p.rho_a[i] != p.rho_b[i]) same = false;

  if (same) {
    for (int k = 0; k <= M; ++k) rho[k] = p.rho_a;
  } else if (n == 2) {
    const long ramp = p.wz ? std::lround(p.wz->delta * M) : 1;  // intervals in the ramp
    if (ramp > M) throw InvalidInput("grid too coarse for the ramp construction");
    const long k0 = M - ramp;
    for (int k = 0; k <= M; ++k) {
      if (k <= k0) {
        rho[k] = p.rho_a;
      } else {
        const double s = static_cast<double>(k - k0) / static_cast<double>(ramp);
        rho[k] = {p.rho_a[0] + s * (p.rho_b[0] - p.rho_a[0]),
                  p.rho_a[1] + s * (p.rho_b[1] - p.rho_a[1])};
      }
    }
    for (int k = 0; k < M; ++k) move_edge[k] = 0;
  } else {
    // Single-edge transfers toward the root state and back out.  Collect
    // (from, to, amount) moves; each move gets a contiguous block of
    // intervals with a linear ramp.
    const int root = n - 1;
    const detail::TreeSolver tree(p.graph, root);
    struct Move {
      int from, to;
      double amount;
    };
    auto collapse = [&](const NodeField& start) {
      std::vector<Move> mv;
      NodeField cur = start;
      for (size_t q = tree.order.size(); q-- > 1;) {
        const int v = tree.order[q];
        if (cur[v] > 0.0) {
          mv.push_back({v, tree.parent[v], cur[v]});
          cur[tree.parent[v]] += cur[v];
          cur[v] = 0.0;
        }
      }
      return mv;
    };
    std::vector<Move> moves = collapse(p.rho_a);
    std::vector<Move> back = collapse(p.rho_b);
    for (size_t q = back.size(); q-- > 0;) moves.push_back({back[q].to, back[q].from, back[q].amount});
    const int Q = static_cast<int>(moves.size());
    if (M < Q)
      throw InvalidInput("grid too coarse: needs at least " + std::to_string(Q) +
                         " intervals for this boundary pair");
    NodeField cur = p.rho_a;
    int k = 0;
    rho[0] = cur;
    for (int q = 0; q < Q; ++q) {
      const int child = tree.parent[moves[q].from] == moves[q].to ? moves[q].from : moves[q].to;
      const int len = M / Q + (q < M % Q ? 1 : 0);
      for (int j = 1; j <= len; ++j) {
        NodeField next = cur;
        const double s = static_cast<double>(j) / len;
        next[moves[q].from] -= s * moves[q].amount;
        next[moves[q].to] += s * moves[q].amount;
        move_edge[k] = tree.parent_edge[child];
        rho[++k] = next;
      }
      cur[moves[q].from] -= moves[q].amount;
      cur[moves[q].to] += moves[q].amount;
    }
  }

  // 2. the flux.  The transfer part lives on the interval's move edge alone:
  // m = drho_a / (h sqrt(w)) balances both endpoints of edge (a,b) at once.
  // The noise part is the explicit potential flux, which carries a theta
  // factor and so vanishes wherever the density does.
  FluxPath m(M);
  for (int k = 0; k < M; ++k) {
    m[k].assign(p.graph.edge_count(), 0.0);
    const double scale =
        p.variant == ControlVariant::AdditiveWZ ? h : h * (1.0 + p.epsilon * wd[k]);
    if (move_edge[k] >= 0) {
      const Edge& ed = p.graph.edge(move_edge[k]);
      m[k][move_edge[k]] = (rho[k + 1][ed.a] - rho[k][ed.a]) / (scale * std::sqrt(ed.w));
    }
    if (p.variant == ControlVariant::AdditiveWZ && !p.sigma.empty()) {
      const EdgeField nf =
          detail::noise_flux(p.graph, p.kind, p.sigma, detail::midpoint(rho[k], rho[k + 1]));
      for (int e = 0; e < p.graph.edge_count(); ++e) m[k][e] -= wd[k] * nf[e];
    }
  }
  return {std::move(rho), std::move(m)};
}

namespace detail {

// ---- the convex program behind solve() ------------------------------------
//
// Unknowns  x = (rho_1..rho_{M-1}, u_0..u_{M-1}, a_0..a_{M-1}) where
// u = h m is the per-interval mass flux and a interpolates theta at the
// interval midpoint.  Rows are the continuity constraints (scaled by h,
// boundary slices folded into the right-hand side) and the interpolation
// ties a_{k,e} = theta^A at the midpoint.  All entries are O(1).
struct Program {
  const Graph* g;
  int n, ne, M;
  double h;
  std::vector<double> wd;      // continuity-noise slope per interval (zeros for special)
  std::vector<double> wk;      // objective weight per interval (ones for additive)
  EdgeField gsig;              // sqrt(w_e)(sigma_a - sigma_b) per edge
  std::vector<double> b;       // right-hand side

  int xdim() const { return (M - 1) * n + 2 * M * ne; }
  int ydim() const { return M * n + M * ne; }
  int xr(int k, int i) const { return (k - 1) * n + i; }      // k in 1..M-1
  int xu(int k, int e) const { return (M - 1) * n + k * ne + e; }
  int xa(int k, int e) const { return (M - 1) * n + (M + k) * ne + e; }
  int yc(int k, int i) const { return k * n + i; }
  int yi(int k, int e) const { return M * n + k * ne + e; }

  // divergence of the noise-potential flux at density slice r (theta^A)
  void add_noise_div(const NodeField& r, double coeff, std::vector<double>& out,
                     int row0) const {
    if (gsig.empty()) return;
    for (int e = 0; e < ne; ++e) {
      const Edge& ed = g->edge(e);
      const double th = 0.5 * (r[ed.a] + r[ed.b]);
      const double t = coeff * std::sqrt(ed.w) * th * gsig[e];
      out[row0 + ed.a] -= t;
      out[row0 + ed.b] += t;
    }
  }

  std::vector<double> apply(const std::vector<double>& x) const {
    std::vector<double> y(ydim(), 0.0);
    for (int k = 0; k < M; ++k) {
      // continuity rows: rho_{k+1} - rho_k + D u_k + h wd_k T(midpoint)
      NodeField mid(n, 0.0);
      for (int i = 0; i < n; ++i) {
        double v = 0.0;
        if (k + 1 <= M - 1) v += x[xr(k + 1, i)];
        if (k >= 1) v -= x[xr(k, i)];
        y[yc(k, i)] = v;
        double m = 0.0;
        if (k >= 1) m += 0.5 * x[xr(k, i)];
        if (k + 1 <= M - 1) m += 0.5 * x[xr(k + 1, i)];
        mid[i] = m;
      }
      for (int e = 0; e < ne; ++e) {
        const Edge& ed = g->edge(e);
        const double t = std::sqrt(ed.w) * x[xu(k, e)];
        y[yc(k, ed.a)] -= t;
        y[yc(k, ed.b)] += t;
      }
      if (wd[k] != 0.0) add_noise_div(mid, h * wd[k], y, k * n);
      // interpolation rows: a - quarter sum of the four endpoint densities
      for (int e = 0; e < ne; ++e) {
        const Edge& ed = g->edge(e);
        double s = x[xa(k, e)];
        if (k >= 1) s -= 0.25 * (x[xr(k, ed.a)] + x[xr(k, ed.b)]);
        if (k + 1 <= M - 1) s -= 0.25 * (x[xr(k + 1, ed.a)] + x[xr(k + 1, ed.b)]);
        y[yi(k, e)] = s;
      }
    }
    return y;
  }

  std::vector<double> apply_transposed(const std::vector<double>& y) const {
    std::vector<double> x(xdim(), 0.0);
    for (int k = 0; k < M; ++k) {
      for (int i = 0; i < n; ++i) {
        const double v = y[yc(k, i)];
        if (k + 1 <= M - 1) x[xr(k + 1, i)] += v;
        if (k >= 1) x[xr(k, i)] -= v;
      }
      for (int e = 0; e < ne; ++e) {
        const Edge& ed = g->edge(e);
        x[xu(k, e)] += std::sqrt(ed.w) * (y[yc(k, ed.b)] - y[yc(k, ed.a)]);
      }
      if (wd[k] != 0.0 && !gsig.empty())
        for (int e = 0; e < ne; ++e) {
          const Edge& ed = g->edge(e);
          const double t =
              0.5 * h * wd[k] * std::sqrt(ed.w) * gsig[e] * (y[yc(k, ed.b)] - y[yc(k, ed.a)]);
          if (k >= 1) {
            x[xr(k, ed.a)] += 0.5 * t;
            x[xr(k, ed.b)] += 0.5 * t;
          }
          if (k + 1 <= M - 1) {
            x[xr(k + 1, ed.a)] += 0.5 * t;
            x[xr(k + 1, ed.b)] += 0.5 * t;
          }
        }
      for (int e = 0; e < ne; ++e) {
        const Edge& ed = g->edge(e);
        const double v = y[yi(k, e)];
        x[xa(k, e)] += v;
        if (k >= 1) {
          x[xr(k, ed.a)] -= 0.25 * v;
          x[xr(k, ed.b)] -= 0.25 * v;
        }
        if (k + 1 <= M - 1) {
          x[xr(k + 1, ed.a)] -= 0.25 * v;
          x[xr(k + 1, ed.b)] -= 0.25 * v;
        }
      }
    }
    return x;
  }
};

inline Program build_program(const ControlProblem& p, const std::vector<double>& slopes) {
  Program pr;
  pr.g = &p.graph;
  pr.n = p.graph.nodes();
  pr.ne = p.graph.edge_count();
  pr.M = p.intervals;
  pr.h = p.h();
  pr.wk.assign(pr.M, 1.0);
  if (p.variant == ControlVariant::AdditiveWZ) {
    pr.wd = slopes;
    if (!p.sigma.empty()) {
      pr.gsig.resize(pr.ne);
      for (int e = 0; e < pr.ne; ++e) {
        const Edge& ed = p.graph.edge(e);
        pr.gsig[e] = std::sqrt(ed.w) * (p.sigma[ed.a] - p.sigma[ed.b]);
      }
    }
  } else {
    pr.wd.assign(pr.M, 0.0);
    for (int k = 0; k < pr.M; ++k) {
      const double c = 1.0 + p.epsilon * slopes[k];
      if (std::abs(c) < 1e-6)
        throw InvalidInput("degenerate noise slope on interval " + std::to_string(k));
      pr.wk[k] = 1.0 / (c * c);
    }
  }
  // right-hand side: boundary densities folded out of the operator
  pr.b.assign(pr.ydim(), 0.0);
  for (int i = 0; i < pr.n; ++i) {
    pr.b[pr.yc(0, i)] += p.rho_a[i];
    pr.b[pr.yc(pr.M - 1, i)] -= p.rho_b[i];
  }
  if (p.variant == ControlVariant::AdditiveWZ) {
    NodeField half_a(pr.n), half_b(pr.n);
    for (int i = 0; i < pr.n; ++i) {
      half_a[i] = 0.5 * p.rho_a[i];
      half_b[i] = 0.5 * p.rho_b[i];
    }
    // b collects MINUS the constant part of the constraint rows
    std::vector<double> tmp(pr.ydim(), 0.0);
    pr.add_noise_div(half_a, pr.h * pr.wd[0], tmp, 0);
    pr.add_noise_div(half_b, pr.h * pr.wd[pr.M - 1], tmp, (pr.M - 1) * pr.n);
    for (int i = 0; i < pr.ydim(); ++i) pr.b[i] -= tmp[i];
  }
  for (int e = 0; e < pr.ne; ++e) {
    const Edge& ed = p.graph.edge(e);
    pr.b[pr.yi(0, e)] += 0.25 * (p.rho_a[ed.a] + p.rho_a[ed.b]);
    pr.b[pr.yi(pr.M - 1, e)] += 0.25 * (p.rho_b[ed.a] + p.rho_b[ed.b]);
  }
  return pr;
}

// Joint prox of (a, u) -> gamma * u^2 / (2a): shrink u by a/(a+gamma) where
// a solves (a - at)(a + gamma)^2 = gamma ut^2 / 2; project to (0,0) when the
// cubic has no positive root.
inline std::pair<double, double> prox_pair(double at, double ut, double gamma) {
  if (at * gamma + 0.5 * ut * ut <= 0.0) return {std::max(at, 0.0), 0.0};
  const double target = 0.5 * gamma * ut * ut;
  double lo = std::max(at, 0.0);
  auto phi = [&](double a) { return (a - at) * (a + gamma) * (a + gamma) - target; };
  double hi = lo + std::max({gamma, std::abs(ut), 1e-3});
  while (phi(hi) < 0.0) hi = 2.0 * hi + 1.0;
  double a = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = phi(a);
    if (f > 0.0)
      hi = a;
    else
      lo = a;
    const double df = (a + gamma) * (3.0 * a + gamma - 2.0 * at);
    double step = df > 0.0 ? a - f / df : -1.0;
    a = (step > lo && step < hi) ? step : 0.5 * (lo + hi);
    if (hi - lo <= 1e-15 * std::max(1.0, hi)) break;
  }
  return {a, ut * a / (a + gamma)};
}

// Largest singular value of the program operator by power iteration.
inline double operator_norm(const Program& pr) {
  std::vector<double> x(pr.xdim());
  std::uint64_t s = 0x9e3779b97f4a7c15ull;
  for (double& v : x) {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    v = static_cast<double>(s % 1000) / 999.0 - 0.5;
  }
  double lam = 1.0;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> z = pr.apply_transposed(pr.apply(x));
    double nz = 0.0;
    for (double v : z) nz += v * v;
    nz = std::sqrt(nz);
    if (nz == 0.0) return 1.0;
    lam = nz;
    for (int i = 0; i < pr.xdim(); ++i) x[i] = z[i] / nz;
  }
  return std::sqrt(lam);
}

// Hamilton-Jacobi data of a multiplier path: per-slice g and the interior
// residual r_k = S_k - S_{k-1} + h/2 (g_{k-1} + g_k).
struct HjData {
  std::vector<NodeField> g;  // M slices
  std::vector<NodeField> r;  // M-1 slices
};

inline HjData hj_data(const ControlProblem& p, const std::vector<NodeField>& S,
                      const std::vector<double>& slopes) {
  const int n = p.graph.nodes(), ne = p.graph.edge_count(), M = p.intervals;
  HjData out;
  out.g.assign(M, NodeField(n, 0.0));
  for (int k = 0; k < M; ++k) {
    const bool special = p.variant == ControlVariant::SpecialMultiplicative;
    const double amp = special ? (1.0 + p.epsilon * slopes[k]) : 1.0;
    for (int e = 0; e < ne; ++e) {
      const Edge& ed = p.graph.edge(e);
      const double dS = S[k][ed.a] - S[k][ed.b];
      double t = 0.25 * amp * amp * ed.w * dS * dS;
      if (!special && !p.sigma.empty())
        t += 0.5 * slopes[k] * ed.w * (p.sigma[ed.a] - p.sigma[ed.b]) * dS;
      out.g[k][ed.a] += t;
      out.g[k][ed.b] += t;
    }
  }
  out.r.assign(M > 1 ? M - 1 : 0, NodeField(n, 0.0));
  for (int k = 1; k < M; ++k)
    for (int i = 0; i < n; ++i)
      out.r[k - 1][i] =
          S[k][i] - S[k - 1][i] + 0.5 * p.h() * (out.g[k - 1][i] + out.g[k][i]);
  return out;
}

// Certified lower bound on the optimal action: shift the multiplier path so
// the interior Hamilton-Jacobi residual is nonpositive, then evaluate the
// boundary pairing with the half-step g corrections.
inline double dual_value(const ControlProblem& p, const std::vector<NodeField>& S,
                         const std::vector<double>& slopes) {
  const int n = p.graph.nodes(), M = p.intervals;
  const HjData hj = hj_data(p, S, slopes);
  double shift = 0.0;
  for (int k = 1; k < M; ++k) {
    double worst = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) worst = std::max(worst, hj.r[k - 1][i]);
    shift += std::max(worst, 0.0);
  }
  double dv = 0.0;
  for (int i = 0; i < n; ++i) {
    dv += (S[M - 1][i] - shift - 0.5 * p.h() * hj.g[M - 1][i]) * p.rho_b[i];
    dv -= (S[0][i] + 0.5 * p.h() * hj.g[0][i]) * p.rho_a[i];
  }
  return dv;
}

// Least-norm feasibility correction x <- x - K^T mu with K K^T mu = Kx - b,
// by conjugate gradients (the system is consistent even where K has a left
// null space, since b lies in the range).  Returns the remaining max-norm
// violation; the CG residual IS the corrected point's violation.
inline double polish(const Program& pr, std::vector<double>& x, double target) {
  std::vector<double> rr = pr.apply(x);
  for (int r = 0; r < pr.ydim(); ++r) rr[r] -= pr.b[r];
  std::vector<double> mu(pr.ydim(), 0.0), pdir = rr;
  double rs = 0.0, worst = 0.0;
  for (double v : rr) {
    rs += v * v;
    worst = std::max(worst, std::abs(v));
  }
  for (int cg = 0; cg < 10 * pr.ydim() && worst > target; ++cg) {
    const std::vector<double> ap = pr.apply(pr.apply_transposed(pdir));
    double pap = 0.0;
    for (int r = 0; r < pr.ydim(); ++r) pap += pdir[r] * ap[r];
    if (pap <= 0.0) break;
    const double alpha = rs / pap;
    double rs2 = 0.0;
    worst = 0.0;
    for (int r = 0; r < pr.ydim(); ++r) {
      mu[r] += alpha * pdir[r];
      rr[r] -= alpha * ap[r];
      rs2 += rr[r] * rr[r];
      worst = std::max(worst, std::abs(rr[r]));
    }
    const double beta = rs2 / rs;
    rs = rs2;
    for (int r = 0; r < pr.ydim(); ++r) pdir[r] = rr[r] + beta * pdir[r];
  }
  const std::vector<double> dx = pr.apply_transposed(mu);
  for (int i = 0; i < pr.xdim(); ++i) x[i] -= dx[i];
  return worst;
}

}  // namespace detail

/// Certified duality gap of a solution: action minus the dual value of the
/// post-processed multiplier path.  Nonnegative up to solver tolerance.
inline double duality_gap(const ControlProblem& p, const ControlSolution& sol) {
  return action(p, sol.rho, sol.m) - detail::dual_value(p, sol.S, interval_slopes(p));
}

/// Max-norm stationarity residual of a solution at interior points: the
/// interior Hamilton-Jacobi rows divided by h, plus the flux/potential link
/// on every edge with theta bounded away from zero.
inline double stationarity_residual(const ControlProblem& p, const ControlSolution& sol,
                                    double theta_floor = 1e-6) {
  const std::vector<double> wd = interval_slopes(p);
  const detail::HjData hj = detail::hj_data(p, sol.S, wd);
  double worst = 0.0;
  for (const auto& row : hj.r)
    for (double x : row) worst = std::max(worst, std::abs(x) / p.h());
  for (int k = 0; k < p.intervals; ++k) {
    const NodeField mid = detail::midpoint(sol.rho[k], sol.rho[k + 1]);
    const double amp = p.variant == ControlVariant::SpecialMultiplicative
                           ? 1.0 + p.epsilon * wd[k]
                           : 1.0;
    for (int e = 0; e < p.graph.edge_count(); ++e) {
      const Edge& ed = p.graph.edge(e);
      const double th = theta(p.kind, std::max(mid[ed.a], 0.0), std::max(mid[ed.b], 0.0));
      if (th <= theta_floor) continue;
      const double v = std::sqrt(ed.w) * (sol.S[k][ed.a] - sol.S[k][ed.b]);
      worst = std::max(worst, std::abs(sol.m[k][e] / th - amp * v));
    }
  }
  return worst;
}

/// Primal-dual solve of the discrete control problem (arithmetic mean only:
/// the constraint is then linear in the density and the program convex).
inline ControlSolution solve(const ControlProblem& p, const SolveOptions& opt = {}) {
  p.validate();
  if (p.kind != ThetaKind::Arithmetic)
    throw InvalidInput("the solver requires the arithmetic mean");
  const int n = p.graph.nodes(), ne = p.graph.edge_count(), M = p.intervals;
  const double h = p.h();
  const std::vector<double> slopes = interval_slopes(p);
  detail::Program pr = detail::build_program(p, slopes);

  // warm start: linear density schedule, tree-solved flux, interpolated a
  std::vector<double> x(pr.xdim(), 0.0);
  {
    DensityPath rho(M + 1);
    for (int k = 0; k <= M; ++k) {
      rho[k].resize(n);
      const double s = static_cast<double>(k) / M;
      for (int i = 0; i < n; ++i) rho[k][i] = (1.0 - s) * p.rho_a[i] + s * p.rho_b[i];
    }
    const detail::TreeSolver tree(p.graph, 0);
    for (int k = 1; k < M; ++k)
      for (int i = 0; i < n; ++i) x[pr.xr(k, i)] = rho[k][i];
    for (int k = 0; k < M; ++k) {
      const NodeField mid = detail::midpoint(rho[k], rho[k + 1]);
      NodeField q(n, 0.0);
      for (int i = 0; i < n; ++i) q[i] = -(rho[k + 1][i] - rho[k][i]);
      if (p.variant == ControlVariant::AdditiveWZ && !p.sigma.empty()) {
        const NodeField nd = detail::flux_divergence(
            p.graph, detail::noise_flux(p.graph, p.kind, p.sigma, mid));
        for (int i = 0; i < n; ++i) q[i] -= h * slopes[k] * nd[i];
      }
      const EdgeField u = tree.solve(q);
      for (int e = 0; e < ne; ++e) {
        x[pr.xu(k, e)] = u[e];
        const Edge& ed = p.graph.edge(e);
        x[pr.xa(k, e)] = 0.5 * (mid[ed.a] + mid[ed.b]);
      }
    }
  }

  const double L = detail::operator_norm(pr) * 1.01;
  const double tau = 0.95 / L, sigma = 0.95 / L;
  const double relax = 1.85;
  std::vector<double> y(pr.ydim(), 0.0);

  auto paths_of = [&](const std::vector<double>& xv) {
    DensityPath rho(M + 1);
    rho[0] = p.rho_a;
    rho[M] = p.rho_b;
    for (int k = 1; k < M; ++k) {
      rho[k].resize(n);
      for (int i = 0; i < n; ++i) rho[k][i] = xv[pr.xr(k, i)];
    }
    FluxPath m(M);
    for (int k = 0; k < M; ++k) {
      m[k].resize(ne);
      const double amp = p.variant == ControlVariant::SpecialMultiplicative
                             ? 1.0 + p.epsilon * slopes[k]
                             : 1.0;
      for (int e = 0; e < ne; ++e) m[k][e] = xv[pr.xu(k, e)] / (h * amp);
    }
    return std::make_pair(std::move(rho), std::move(m));
  };
  auto multipliers_of = [&](const std::vector<double>& yv) {
    std::vector<NodeField> S(M, NodeField(n, 0.0));
    for (int k = 0; k < M; ++k)
      for (int i = 0; i < n; ++i) S[k][i] = yv[pr.yc(k, i)];
    return S;
  };

  // Overrelaxed primal-dual loop.  The dual reported to the certificate is
  // the average of y over the trailing check window: the pointwise iterate
  // oscillates, and the certificate's positive-part shift turns that
  // oscillation into an O(M)-amplified bias.  Convergence is judged on the
  // polished candidate (feasibility projected by conjugate gradients), so
  // both reported bounds hold for the solution actually returned.
  double last_gap = std::numeric_limits<double>::infinity();
  double last_res = std::numeric_limits<double>::infinity();
  std::vector<double> y_acc(pr.ydim(), 0.0), y_avg;
  long acc_count = 0;
  long it = 0;
  bool converged = false;
  for (it = 1; it <= opt.max_iterations; ++it) {
    std::vector<double> xh = pr.apply_transposed(y);
    for (int i = 0; i < pr.xdim(); ++i) xh[i] = x[i] - tau * xh[i];
    for (int k = 1; k < M; ++k)
      for (int i = 0; i < n; ++i) xh[pr.xr(k, i)] = std::max(xh[pr.xr(k, i)], 0.0);
    for (int k = 0; k < M; ++k) {
      const double gamma = tau * pr.wk[k] / h;
      for (int e = 0; e < ne; ++e) {
        const auto [a, u] = detail::prox_pair(xh[pr.xa(k, e)], xh[pr.xu(k, e)], gamma);
        xh[pr.xa(k, e)] = a;
        xh[pr.xu(k, e)] = u;
      }
    }
    std::vector<double> xr2(pr.xdim());
    for (int i = 0; i < pr.xdim(); ++i) xr2[i] = 2.0 * xh[i] - x[i];
    const std::vector<double> ky = pr.apply(xr2);
    for (int r = 0; r < pr.ydim(); ++r) y[r] += relax * sigma * (ky[r] - pr.b[r]);
    for (int i = 0; i < pr.xdim(); ++i) x[i] += relax * (xh[i] - x[i]);
    for (int r = 0; r < pr.ydim(); ++r) y_acc[r] += y[r];
    ++acc_count;

    if (it % opt.check_every == 0 || it == opt.max_iterations) {
      y_avg = y_acc;
      for (double& v : y_avg) v /= static_cast<double>(acc_count);
      std::fill(y_acc.begin(), y_acc.end(), 0.0);
      acc_count = 0;

      const std::vector<double> res = pr.apply(x);
      last_res = 0.0;
      for (int r = 0; r < pr.ydim(); ++r)
        last_res = std::max(last_res, std::abs(res[r] - pr.b[r]));
      auto [rho, m] = paths_of(x);
      const double act = action(p, rho, m);
      last_gap = act - detail::dual_value(p, multipliers_of(y_avg), slopes);
      const double gap_tol = std::max(opt.gap_abs, opt.gap_rel * std::abs(act));
      if (std::abs(last_gap) <= gap_tol && last_res <= 1e4 * opt.residual) {
        std::vector<double> xp = x;
        const double viol = detail::polish(pr, xp, 1e-3 * opt.residual);
        auto [rho_p, m_p] = paths_of(xp);
        const double act_p = action(p, rho_p, m_p);
        last_gap = act_p - detail::dual_value(p, multipliers_of(y_avg), slopes);
        last_res = viol;
        if (viol <= opt.residual &&
            std::abs(last_gap) <= std::max(opt.gap_abs, opt.gap_rel * std::abs(act_p))) {
          x = std::move(xp);
          converged = true;
          break;
        }
      }
    }
  }
  if (!converged)
    throw SolveFailure("primal-dual iteration did not converge", last_gap, last_res,
                       opt.max_iterations);

  ControlSolution sol;
  auto [rho, m] = paths_of(x);
  sol.rho = std::move(rho);
  sol.m = std::move(m);
  sol.S = multipliers_of(y_avg);
  sol.action = action(p, sol.rho, sol.m);
  sol.gap = sol.action - detail::dual_value(p, sol.S, slopes);
  sol.residual = last_res;
  sol.iterations = it;
  return sol;
}

/// Special-variant convenience wrapper: solve with the multiplicative
/// perturbation at the given scale.
inline ControlSolution solve_special(ControlProblem p, double epsilon,
                                     const SolveOptions& opt = {}) {
  p.variant = ControlVariant::SpecialMultiplicative;
  p.epsilon = epsilon;
  p.sigma.clear();
  return solve(p, opt);
}

struct GammaStudy {
  double action0 = 0.0;                        // classical problem (eps = 0)
  std::vector<std::pair<double, double>> rows; // (eps, action)
};

/// Optimal actions of the special variant over a decreasing list of
/// perturbation scales, against the classical baseline.
inline GammaStudy gamma_study(const ControlProblem& p, const std::vector<double>& eps_list,
                              const SolveOptions& opt = {}) {
  GammaStudy out;
  out.action0 = solve_special(p, 0.0, opt).action;
  for (double eps : eps_list) out.rows.emplace_back(eps, solve_special(p, eps, opt).action);
  return out;
}

}  // namespace gwhf
