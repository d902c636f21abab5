#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gwhf/errors.hpp"
#include "gwhf/util.hpp"
#include "json.hpp"

namespace gwhf {

// Mobility averages used to weight edge quantities by the densities at the
// two endpoints.
enum class ThetaKind { Arithmetic, Logarithmic };

inline const char* to_string(ThetaKind k) {
  return k == ThetaKind::Arithmetic ? "arithmetic" : "logarithmic";
}

inline ThetaKind theta_kind_from_string(const std::string& s) {
  if (s == "arithmetic") return ThetaKind::Arithmetic;
  if (s == "logarithmic") return ThetaKind::Logarithmic;
  throw InvalidInput("unknown theta kind '" + s + "' (want arithmetic|logarithmic)");
}

/// Mean of two nonnegative numbers.  The logarithmic mean
/// (s - t) / (log s - log t) extends continuously: theta(s, s) = s and
/// theta(s, 0) = 0.  The log difference is evaluated as log1p((s-t)/t),
/// which stays accurate for near-equal arguments; the midpoint branch
/// below 1e-9 relative spread handles the removable singularity itself
/// (it agrees with the exact value to O((s-t)^2 / s) there).
inline double theta(ThetaKind k, double s, double t) {
  if (s < 0.0 || t < 0.0) throw InvalidInput("theta: negative argument");
  if (k == ThetaKind::Arithmetic) return 0.5 * (s + t);
  if (s == 0.0 || t == 0.0) return 0.0;
  const double hi = std::max(s, t), lo = std::min(s, t);
  if (hi - lo <= 1e-9 * hi) return 0.5 * (s + t);
  // evaluated on ordered arguments so the result is exactly symmetric
  return (hi - lo) / std::log1p((hi - lo) / lo);
}

/// d theta / d s (derivative in the first argument).  For the logarithmic
/// mean this is [log(s/t) - (s-t)/s] / log^2(s/t) with the log1p
/// evaluation of the ratio log, and the series branch
/// 1/2 - (s-t)/(6s) + O(((s-t)/s)^2) taking over near the diagonal where
/// the quotient cancels catastrophically.
inline double theta_deriv_first(ThetaKind k, double s, double t) {
  if (k == ThetaKind::Arithmetic) return 0.5;
  if (!(s > 0.0) || !(t > 0.0))
    throw BoundaryDensity("logarithmic mean derivative needs positive arguments");
  const double m = std::max(s, t);
  if (std::abs(s - t) <= 1e-7 * m) return 0.5 - (s - t) / (6.0 * s);
  const double dl = std::log1p((s - t) / t);
  return (dl - (s - t) / s) / (dl * dl);
}

struct Edge {
  int a, b;         // endpoints, a < b, 0-based
  double w, wt;     // weight and the separate Fisher weight
};

class Graph {
 public:
  Graph(int nodes, std::vector<Edge> edges) : n_(nodes), edges_(std::move(edges)) {
    if (n_ < 2) throw InvalidInput("graph needs at least 2 nodes");
    adj_.resize(n_);
    std::vector<std::vector<char>> seen(n_, std::vector<char>(n_, 0));
    int idx = 0;
    for (auto& e : edges_) {
      if (e.a >= e.b) std::swap(e.a, e.b);
      if (e.a < 0 || e.b >= n_) throw InvalidInput("edge endpoint out of range");
      if (e.a == e.b) throw InvalidInput("self loops are not allowed");
      if (seen[e.a][e.b]) throw InvalidInput("duplicate edge");
      seen[e.a][e.b] = 1;
      if (!(e.w > 0.0) || !(e.wt > 0.0))
        throw InvalidInput("edge weights must be positive");
      adj_[e.a].push_back({e.b, idx});
      adj_[e.b].push_back({e.a, idx});
      ++idx;
    }
    // connectivity (with all edges present)
    std::vector<char> vis(n_, 0);
    std::vector<int> stack{0};
    vis[0] = 1;
    int count = 1;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto [v, ei] : adj_[u])
        if (!vis[v]) {
          vis[v] = 1;
          ++count;
          stack.push_back(v);
        }
    }
    if (count != n_) throw InvalidInput("graph is not connected");
  }

  int nodes() const { return n_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(int i) const { return edges_[i]; }
  // (neighbor, edge index) pairs in insertion order
  const std::vector<std::pair<int, int>>& neighbors(int v) const { return adj_[v]; }

 private:
  int n_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::pair<int, int>>> adj_;
};

/// Graph file format: {"nodes": N, "edges": [[i, j, omega], ...]} with
/// 1-based endpoints and an optional fourth entry per edge for the Fisher
/// weight (defaults to omega).
inline Graph graph_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges"))
    throw InvalidInput("graph json needs 'nodes' and 'edges'");
  const int n = j.at("nodes").get<int>();
  std::vector<Edge> edges;
  for (const auto& row : j.at("edges")) {
    if (!row.is_array() || row.size() < 3 || row.size() > 4)
      throw InvalidInput("graph edge rows are [i, j, omega] or [i, j, omega, omega_tilde]");
    Edge e;
    e.a = row[0].get<int>() - 1;
    e.b = row[1].get<int>() - 1;
    e.w = row[2].get<double>();
    e.wt = row.size() == 4 ? row[3].get<double>() : e.w;
    edges.push_back(e);
  }
  return Graph(n, std::move(edges));
}

inline Graph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open graph file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("graph file '" + path + "' is not valid json: " + e.what());
  }
  return graph_from_json(j);
}

/// Edge fields live on canonical (a < b) edges and are read as skew:
/// f_ab = f_e, f_ba = -f_e.

/// (grad S)_e = sqrt(w_e) (S_a - S_b).
inline EdgeField gradient(const Graph& g, const NodeField& S) {
  EdgeField out(g.edge_count());
  for (int i = 0; i < g.edge_count(); ++i) {
    const Edge& e = g.edge(i);
    out[i] = std::sqrt(e.w) * (S[e.a] - S[e.b]);
  }
  return out;
}

/// div_j = -sum_{l ~ j} sqrt(w_jl) f_jl theta_jl(rho).  Each edge
/// contributes one value with opposite signs at its endpoints, so the
/// output sums to zero up to per-node accumulation round-off.
inline NodeField divergence(const Graph& g, const NodeField& rho, const EdgeField& f,
                            ThetaKind k) {
  NodeField out(g.nodes(), 0.0);
  for (int i = 0; i < g.edge_count(); ++i) {
    const Edge& e = g.edge(i);
    const double t = std::sqrt(e.w) * f[i] * theta(k, rho[e.a], rho[e.b]);
    out[e.a] -= t;
    out[e.b] += t;
  }
  return out;
}

/// <u,v> = sum over unordered edges of u_e v_e theta_e w_e; equal to the
/// directed half-sum because the integrand is even under orientation flip.
inline double inner_product(const Graph& g, const NodeField& rho, const EdgeField& u,
                            const EdgeField& v, ThetaKind k) {
  double s = 0.0;
  for (int i = 0; i < g.edge_count(); ++i) {
    const Edge& e = g.edge(i);
    s += u[i] * v[i] * theta(k, rho[e.a], rho[e.b]) * e.w;
  }
  return s;
}

/// Connected components of the subgraph keeping edges with
/// theta_e(rho) > tol.  Nodes and components come out sorted.
inline std::vector<std::vector<int>> theta_connected_components(const Graph& g,
                                                                const NodeField& rho,
                                                                ThetaKind k,
                                                                double tol = 0.0) {
  std::vector<int> comp(g.nodes(), -1);
  int nc = 0;
  for (int s = 0; s < g.nodes(); ++s) {
    if (comp[s] >= 0) continue;
    comp[s] = nc;
    std::vector<int> stack{s};
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      for (auto [v, ei] : g.neighbors(u)) {
        if (comp[v] >= 0) continue;
        const Edge& e = g.edge(ei);
        if (theta(k, rho[e.a], rho[e.b]) > tol) {
          comp[v] = nc;
          stack.push_back(v);
        }
      }
    }
    ++nc;
  }
  std::vector<std::vector<int>> out(nc);
  for (int v = 0; v < g.nodes(); ++v) out[comp[v]].push_back(v);
  return out;
}

}  // namespace gwhf
