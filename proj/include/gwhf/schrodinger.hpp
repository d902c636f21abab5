#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "gwhf/energy.hpp"
#include "gwhf/graph.hpp"
#include "gwhf/util.hpp"

namespace gwhf {

using WaveFunction = std::vector<std::complex<double>>;

/// u -> (|u|^2, arg u), with the phase reduced to (-pi, pi].  This is the
/// only place a mod-2pi reduction happens; the Hamiltonian flow evolves S
/// on the real line.
inline std::pair<NodeField, NodeField> madelung_forward(const WaveFunction& u) {
  NodeField rho(u.size()), S(u.size());
  for (size_t j = 0; j < u.size(); ++j) {
    const double r2 = std::norm(u[j]);
    if (!(r2 > 0.0)) throw InvalidInput("zero amplitude at node " + std::to_string(j + 1));
    rho[j] = r2;
    double a = std::arg(u[j]);  // [-pi, pi]
    if (a <= -3.141592653589793238) a = 3.141592653589793238;
    S[j] = a;
  }
  return {rho, S};
}

/// (rho, S) -> sqrt(rho) e^{iS}; requires an interior density.
inline WaveFunction madelung_inverse(const NodeField& rho, const NodeField& S) {
  if (rho.size() != S.size()) throw InvalidInput("density/potential size mismatch");
  WaveFunction u(rho.size());
  for (size_t j = 0; j < rho.size(); ++j) {
    if (!(rho[j] > 0.0))
      throw BoundaryDensity("density must be positive at node " + std::to_string(j + 1));
    u[j] = std::polar(std::sqrt(rho[j]), S[j]);
  }
  return u;
}

namespace detail {

inline WaveFunction graph_laplacian_rs(const Graph& g, const NodeField& rho, const NodeField& S,
                                       const WaveFunction& u, ThetaKind th, ThetaKind tht) {
  const std::complex<double> iu(0.0, 1.0);
  WaveFunction out(u.size(), 0.0);
  for (int j = 0; j < g.nodes(); ++j) {
    std::complex<double> flux = 0.0;  // the bracketed 1/rho_j sums
    double quad = 0.0;                // the two derivative sums
    for (const auto& [l, e] : g.neighbors(j)) {
      const Edge& ed = g.edge(e);
      const double ds = S[j] - S[l];
      const double dl = std::log(rho[j]) - std::log(rho[l]);
      const double w2 = ed.w * ed.w;
      flux += iu * (w2 * theta(th, rho[j], rho[l]) * ds);
      flux += ed.wt * theta(tht, rho[j], rho[l]) * 0.5 * dl;
      quad += w2 * theta_deriv_first(th, rho[j], rho[l]) * ds * ds;
      quad += ed.wt * theta_deriv_first(tht, rho[j], rho[l]) * 0.25 * dl * dl;
    }
    out[j] = -u[j] * (flux / rho[j] + quad);
  }
  return out;
}

}  // namespace detail

/// Nonlinear graph Laplacian.  Writing log u = (1/2) log rho + iS, the
/// j-th entry is
///   -u_j ( rho_j^{-1} [ i sum_l w^2 theta (S_j-S_l)
///                       + sum_l wt thetat (log rho_j - log rho_l)/2 ]
///        + sum_l w^2 (d theta/d rho_j) (S_j-S_l)^2
///        + sum_l wt (d thetat/d rho_j) (log rho_j - log rho_l)^2/4 ),
/// so that -1/2 Delta_G u + u V + u (W rho) reproduces the Hamiltonian
/// vector field of K + (1/8) Fisher + potentials through the chain rule
/// du = u (drho/(2 rho) + i dS).
inline WaveFunction graph_laplacian(const Graph& g, const WaveFunction& u,
                                    ThetaKind th = ThetaKind::Arithmetic,
                                    ThetaKind tht = ThetaKind::Logarithmic) {
  if (static_cast<int>(u.size()) != g.nodes()) throw InvalidInput("wavefunction has wrong length");
  const auto [rho, S] = madelung_forward(u);
  return detail::graph_laplacian_rs(g, rho, S, u, th, tht);
}

enum class NlsKind { CommonNoiseNLS, LogarithmicNLS, WhiteNoiseDispersion };

inline const char* to_string(NlsKind k) {
  switch (k) {
    case NlsKind::CommonNoiseNLS: return "common-noise";
    case NlsKind::LogarithmicNLS: return "logarithmic";
    default: return "dispersion";
  }
}

inline NlsKind nls_kind_from_string(const std::string& s) {
  if (s == "common-noise") return NlsKind::CommonNoiseNLS;
  if (s == "logarithmic") return NlsKind::LogarithmicNLS;
  if (s == "dispersion") return NlsKind::WhiteNoiseDispersion;
  throw InvalidInput("unknown preset '" + s + "' (want common-noise|logarithmic|dispersion)");
}

/// One of the three wavefunction models, with its coefficient data.
/// Empty v / w / sigma stand for zeros.
struct NlsPreset {
  NlsKind kind = NlsKind::CommonNoiseNLS;
  int nodes = 0;
  NodeField v;                // node potential
  std::vector<double> w;      // symmetric interaction kernel, row-major
  NodeField sigma;            // noise potential (common-noise and logarithmic kinds)
  double alpha = 1.0;         // entropy strength (logarithmic kind)
};

/// Expand a preset into Hamiltonian coefficients:
///   common-noise:  H0 = K + (1/8)I + <V,rho> + (1/2)<rho,W rho>, H1 = <sigma,rho>
///   logarithmic:   common-noise plus the alpha entropy term in H0
///   dispersion:    H0 = <V,rho> + (1/2)<rho,W rho>,  H1 = K + (1/8)I
inline HamiltonianSpec preset_spec(const NlsPreset& p) {
  if (p.nodes < 2) throw InvalidInput("preset needs the node count");
  HamiltonianSpec spec;
  if (p.kind == NlsKind::WhiteNoiseDispersion) {
    spec.h0.linear = 1.0;
    spec.h0.v = p.v;
    spec.h0.interaction = 1.0;
    spec.h0.w = p.w;
    spec.h1.kinetic = 1.0;
    spec.h1.fisher = 0.125;
  } else {
    spec.h0.kinetic = 1.0;
    spec.h0.fisher = 0.125;
    spec.h0.linear = 1.0;
    spec.h0.v = p.v;
    spec.h0.interaction = 1.0;
    spec.h0.w = p.w;
    if (p.kind == NlsKind::LogarithmicNLS) spec.h0.entropy = p.alpha;
    spec.h1.linear = 1.0;
    spec.h1.v = p.sigma;
  }
  spec.validate(p.nodes);
  return spec;
}

}  // namespace gwhf
