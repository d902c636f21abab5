#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "gwhf/graph.hpp"
#include "gwhf/util.hpp"

namespace gwhf {

/// One Hamiltonian as a weighted sum of the five energy functionals:
///
///   H(rho, S) = kinetic   * K(rho, S)        kinetic transport energy
///             + fisher    * I(rho)           graph Fisher information
///             + linear    * sum_i v_i rho_i
///             + interaction * 1/2 sum_ij w_ij rho_i rho_j
///             - entropy   * sum_i (rho_i log rho_i - rho_i)
///
/// v and w may be empty (treated as zero).  The drift Hamiltonian and the
/// noise Hamiltonian of one model are two instances of this struct.
struct EnergyCoeffs {
  double kinetic = 0.0;
  double fisher = 0.0;
  double linear = 0.0;
  double interaction = 0.0;
  double entropy = 0.0;
  std::vector<double> v;  // node potential, size N or empty
  std::vector<double> w;  // symmetric interaction kernel, row-major N*N or empty

  void validate(int n) const {
    for (double c : {kinetic, fisher, linear, interaction, entropy})
      if (!std::isfinite(c)) throw InvalidInput("non-finite energy coefficient");
    if (!v.empty() && static_cast<int>(v.size()) != n)
      throw InvalidInput("node potential has wrong length");
    if (!all_finite(v)) throw InvalidInput("node potential has non-finite entries");
    if (!w.empty()) {
      if (static_cast<int>(w.size()) != n * n)
        throw InvalidInput("interaction kernel has wrong shape");
      if (!all_finite(w)) throw InvalidInput("interaction kernel has non-finite entries");
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (std::abs(w[i * n + j] - w[j * n + i]) > 1e-12)
            throw InvalidInput("interaction kernel must be symmetric");
    }
  }
};

struct HamiltonianSpec {
  EnergyCoeffs h0, h1;
  ThetaKind theta = ThetaKind::Arithmetic;
  ThetaKind theta_tilde = ThetaKind::Logarithmic;

  void validate(int n) const {
    h0.validate(n);
    h1.validate(n);
  }
};

/// K = 1/2 <grad S, grad S>_{theta(rho)}.  Built from the calculus
/// primitives; with the sqrt(w) inside the gradient and the w inside the
/// inner product, each edge term is w^2 (S_a - S_b)^2 theta.
inline double kinetic(const Graph& g, const NodeField& rho, const NodeField& S,
                      ThetaKind k) {
  const EdgeField gs = gradient(g, S);
  return 0.5 * inner_product(g, rho, gs, gs, k);
}

/// Fisher information I = sum over unordered edges of
/// wt_e (log rho_a - log rho_b)^2 theta~_e.  Blows up at the simplex
/// boundary: any zero component yields +infinity.
inline double fisher(const Graph& g, const NodeField& rho, ThetaKind kt) {
  for (double x : rho)
    if (!(x > 0.0)) return std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (int i = 0; i < g.edge_count(); ++i) {
    const Edge& e = g.edge(i);
    const double dl = std::log(rho[e.a]) - std::log(rho[e.b]);
    s += e.wt * dl * dl * theta(kt, rho[e.a], rho[e.b]);
  }
  return s;
}

/// sum_i rho_i log rho_i - rho_i, with 0 log 0 = 0.
inline double entropy(const NodeField& rho) {
  double s = 0.0;
  for (double x : rho) {
    if (x < 0.0) throw InvalidInput("entropy: negative density");
    if (x > 0.0) s += x * std::log(x) - x;
  }
  return s;
}

inline double part_value(const Graph& g, const EnergyCoeffs& c, const NodeField& rho,
                         const NodeField& S, ThetaKind th, ThetaKind tht) {
  double h = 0.0;
  if (c.kinetic != 0.0) h += c.kinetic * kinetic(g, rho, S, th);
  if (c.fisher != 0.0) h += c.fisher * fisher(g, rho, tht);
  if (c.linear != 0.0 && !c.v.empty())
    for (int i = 0; i < g.nodes(); ++i) h += c.linear * c.v[i] * rho[i];
  if (c.interaction != 0.0 && !c.w.empty()) {
    const int n = g.nodes();
    double q = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) q += c.w[i * n + j] * rho[i] * rho[j];
    h += 0.5 * c.interaction * q;
  }
  if (c.entropy != 0.0) h -= c.entropy * entropy(rho);
  return h;
}

inline std::pair<double, double> hamiltonian_value(const Graph& g,
                                                   const HamiltonianSpec& spec,
                                                   const NodeField& rho,
                                                   const NodeField& S) {
  return {part_value(g, spec.h0, rho, S, spec.theta, spec.theta_tilde),
          part_value(g, spec.h1, rho, S, spec.theta, spec.theta_tilde)};
}

/// dH/dS_i = kinetic * sum_{l ~ i} w_il^2 (S_i - S_l) theta_il.  Only the
/// kinetic term depends on S.  Accumulated as +/- the identical product per
/// edge, so the components cancel to zero mass-flux exactly in exact
/// arithmetic and to round-off in floating point.
inline NodeField part_grad_S(const Graph& g, const EnergyCoeffs& c, const NodeField& rho,
                             const NodeField& S, ThetaKind th) {
  NodeField out(g.nodes(), 0.0);
  if (c.kinetic == 0.0) return out;
  for (int i = 0; i < g.edge_count(); ++i) {
    const Edge& e = g.edge(i);
    const double t =
        c.kinetic * e.w * e.w * (S[e.a] - S[e.b]) * theta(th, rho[e.a], rho[e.b]);
    out[e.a] += t;
    out[e.b] -= t;
  }
  return out;
}

namespace detail {

// Central difference of a scalar function of rho, one coordinate.
inline double fd_partial(const std::function<double(const NodeField&)>& f, NodeField rho,
                         int i, double step) {
  const double x = rho[i];
  rho[i] = x + step;
  const double fp = f(rho);
  rho[i] = x - step;
  const double fm = f(rho);
  return (fp - fm) / (2.0 * step);
}

inline double fd_step_for(double x) { return std::min(1e-6 * std::max(1.0, std::abs(x)), 0.5 * x); }

}  // namespace detail

/// dH/drho_i.  Closed forms: kinetic term for the arithmetic mean
/// (d theta / d rho = 1/2 at both endpoints), Fisher term for both means,
/// linear / interaction / entropy terms always.  With the logarithmic mean
/// in the kinetic term the derivative is taken by central finite
/// differences of the kinetic energy (step 1e-6 scaled, accurate to about
/// 1e-9; requires an interior density).
inline NodeField part_grad_rho(const Graph& g, const EnergyCoeffs& c, const NodeField& rho,
                               const NodeField& S, ThetaKind th, ThetaKind tht) {
  const int n = g.nodes();
  NodeField out(n, 0.0);
  const bool singular = c.fisher != 0.0 || c.entropy != 0.0 ||
                        (c.kinetic != 0.0 && th == ThetaKind::Logarithmic);
  if (singular && !is_interior(rho))
    throw BoundaryDensity("density gradient requested at the simplex boundary");

  if (c.kinetic != 0.0) {
    if (th == ThetaKind::Arithmetic) {
      for (int i = 0; i < g.edge_count(); ++i) {
        const Edge& e = g.edge(i);
        const double ds = S[e.a] - S[e.b];
        const double q = 0.25 * c.kinetic * e.w * e.w * ds * ds;
        out[e.a] += q;
        out[e.b] += q;
      }
    } else {
      auto kin = [&](const NodeField& r) { return c.kinetic * kinetic(g, r, S, th); };
      for (int i = 0; i < n; ++i)
        out[i] += detail::fd_partial(kin, rho, i, detail::fd_step_for(rho[i]));
    }
  }

  if (c.fisher != 0.0) {
    for (int i = 0; i < g.edge_count(); ++i) {
      const Edge& e = g.edge(i);
      const double dl = std::log(rho[e.a]) - std::log(rho[e.b]);
      if (tht == ThetaKind::Logarithmic) {
        // theta~ equal to the logarithmic mean collapses the product rule:
        // d/d rho_a [dl^2 theta~] = dl + (rho_a - rho_b)/rho_a.
        out[e.a] += c.fisher * e.wt * (dl + (rho[e.a] - rho[e.b]) / rho[e.a]);
        out[e.b] += c.fisher * e.wt * (-dl + (rho[e.b] - rho[e.a]) / rho[e.b]);
      } else {
        const double t = theta(tht, rho[e.a], rho[e.b]);
        out[e.a] += c.fisher * e.wt *
                    (2.0 * dl * t / rho[e.a] +
                     dl * dl * theta_deriv_first(tht, rho[e.a], rho[e.b]));
        out[e.b] += c.fisher * e.wt *
                    (-2.0 * dl * t / rho[e.b] +
                     dl * dl * theta_deriv_first(tht, rho[e.b], rho[e.a]));
      }
    }
  }

  if (c.linear != 0.0 && !c.v.empty())
    for (int i = 0; i < n; ++i) out[i] += c.linear * c.v[i];

  if (c.interaction != 0.0 && !c.w.empty())
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += c.w[i * n + j] * rho[j];
      out[i] += c.interaction * s;
    }

  if (c.entropy != 0.0)
    for (int i = 0; i < n; ++i) out[i] -= c.entropy * std::log(rho[i]);

  return out;
}

/// Second derivatives of one Hamiltonian part.  s_rho(i, j) stores
/// d^2 H / dS_i drho_j (not symmetric); ss and rho_rho are symmetric and
/// the rows of ss sum to zero (graph Laplacian structure).
struct HessianBlocks {
  Matrix ss, s_rho, rho_rho;
};

/// Closed forms hold for the arithmetic mean in the kinetic term and the
/// logarithmic mean in the Fisher term (the defaults).  Other combinations
/// fill the affected entries by finite differences: s_rho from the exact
/// S-gradient (about 1e-9), the kinetic rho-rho block from second
/// differences of the energy (about 1e-7 at step 1e-4).
inline HessianBlocks part_hessian(const Graph& g, const EnergyCoeffs& c,
                                  const NodeField& rho, const NodeField& S, ThetaKind th,
                                  ThetaKind tht) {
  const int n = g.nodes();
  HessianBlocks hb{Matrix(n, n), Matrix(n, n), Matrix(n, n)};
  const bool singular = c.fisher != 0.0 || c.entropy != 0.0 ||
                        (c.kinetic != 0.0 && th == ThetaKind::Logarithmic);
  if (singular && !is_interior(rho))
    throw BoundaryDensity("hessian requested at the simplex boundary");

  if (c.kinetic != 0.0) {
    for (int i = 0; i < g.edge_count(); ++i) {
      const Edge& e = g.edge(i);
      const double ww = c.kinetic * e.w * e.w;
      const double t = theta(th, rho[e.a], rho[e.b]);
      hb.ss(e.a, e.a) += ww * t;
      hb.ss(e.b, e.b) += ww * t;
      hb.ss(e.a, e.b) -= ww * t;
      hb.ss(e.b, e.a) -= ww * t;
    }
    if (th == ThetaKind::Arithmetic) {
      for (int i = 0; i < g.edge_count(); ++i) {
        const Edge& e = g.edge(i);
        const double ww = c.kinetic * e.w * e.w;
        const double ds = S[e.a] - S[e.b];
        hb.s_rho(e.a, e.a) += 0.5 * ww * ds;
        hb.s_rho(e.a, e.b) += 0.5 * ww * ds;
        hb.s_rho(e.b, e.a) -= 0.5 * ww * ds;
        hb.s_rho(e.b, e.b) -= 0.5 * ww * ds;
      }
      // theta is linear in rho: no kinetic rho-rho contribution
    } else {
      EnergyCoeffs kin_only;
      kin_only.kinetic = c.kinetic;
      for (int j = 0; j < n; ++j) {
        NodeField rp = rho, rm = rho;
        const double step = detail::fd_step_for(rho[j]);
        rp[j] += step;
        rm[j] -= step;
        const NodeField gp = part_grad_S(g, kin_only, rp, S, th);
        const NodeField gm = part_grad_S(g, kin_only, rm, S, th);
        for (int i = 0; i < n; ++i) hb.s_rho(i, j) = (gp[i] - gm[i]) / (2.0 * step);
      }
      auto kin = [&](const NodeField& r) { return c.kinetic * kinetic(g, r, S, th); };
      const double step = 1e-4;
      const double f0 = kin(rho);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          NodeField r = rho;
          double val;
          if (i == j) {
            r[i] = rho[i] + step;
            const double fp = kin(r);
            r[i] = rho[i] - step;
            const double fm = kin(r);
            val = (fp - 2.0 * f0 + fm) / (step * step);
          } else {
            r[i] = rho[i] + step, r[j] = rho[j] + step;
            const double fpp = kin(r);
            r[j] = rho[j] - step;
            const double fpm = kin(r);
            r[i] = rho[i] - step, r[j] = rho[j] + step;
            const double fmp = kin(r);
            r[j] = rho[j] - step;
            const double fmm = kin(r);
            val = (fpp - fpm - fmp + fmm) / (4.0 * step * step);
          }
          hb.rho_rho(i, j) += val;
          if (i != j) hb.rho_rho(j, i) += val;
        }
    }
  }

  if (c.fisher != 0.0) {
    if (tht == ThetaKind::Logarithmic) {
      for (int i = 0; i < g.edge_count(); ++i) {
        const Edge& e = g.edge(i);
        const double f = c.fisher * e.wt;
        hb.rho_rho(e.a, e.a) += f * (1.0 / rho[e.a] + rho[e.b] / (rho[e.a] * rho[e.a]));
        hb.rho_rho(e.b, e.b) += f * (1.0 / rho[e.b] + rho[e.a] / (rho[e.b] * rho[e.b]));
        hb.rho_rho(e.a, e.b) -= f * (1.0 / rho[e.a] + 1.0 / rho[e.b]);
        hb.rho_rho(e.b, e.a) -= f * (1.0 / rho[e.a] + 1.0 / rho[e.b]);
      }
    } else {
      EnergyCoeffs fish_only;
      fish_only.fisher = c.fisher;
      for (int j = 0; j < n; ++j) {
        NodeField rp = rho, rm = rho;
        const double step = detail::fd_step_for(rho[j]);
        rp[j] += step;
        rm[j] -= step;
        const NodeField gp = part_grad_rho(g, fish_only, rp, S, th, tht);
        const NodeField gm = part_grad_rho(g, fish_only, rm, S, th, tht);
        for (int i = 0; i < n; ++i)
          hb.rho_rho(i, j) += (gp[i] - gm[i]) / (2.0 * step);
      }
    }
  }

  if (c.interaction != 0.0 && !c.w.empty())
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) hb.rho_rho(i, j) += c.interaction * c.w[i * n + j];

  if (c.entropy != 0.0)
    for (int i = 0; i < n; ++i) hb.rho_rho(i, i) -= c.entropy / rho[i];

  return hb;
}

/// {A, B} = sum_i dA/drho_i dB/dS_i - dA/dS_i dB/drho_i.
inline double poisson_bracket(const Graph& g, const EnergyCoeffs& a, const EnergyCoeffs& b,
                              const NodeField& rho, const NodeField& S, ThetaKind th,
                              ThetaKind tht) {
  const NodeField ar = part_grad_rho(g, a, rho, S, th, tht);
  const NodeField as = part_grad_S(g, a, rho, S, th);
  const NodeField br = part_grad_rho(g, b, rho, S, th, tht);
  const NodeField bs = part_grad_S(g, b, rho, S, th);
  double s = 0.0;
  for (int i = 0; i < g.nodes(); ++i) s += ar[i] * bs[i] - as[i] * br[i];
  return s;
}

}  // namespace gwhf
