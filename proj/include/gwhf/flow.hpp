#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gwhf/energy.hpp"
#include "gwhf/graph.hpp"
#include "gwhf/noise.hpp"
#include "gwhf/util.hpp"

namespace gwhf {

enum class Scheme { WongZakaiODE, StratonovichHeun, ItoEulerCorrected };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::WongZakaiODE: return "wz-ode";
    case Scheme::StratonovichHeun: return "heun";
    default: return "ito-euler";
  }
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "wz-ode") return Scheme::WongZakaiODE;
  if (s == "heun") return Scheme::StratonovichHeun;
  if (s == "ito-euler") return Scheme::ItoEulerCorrected;
  throw InvalidInput("unknown scheme '" + s + "' (want wz-ode|heun|ito-euler)");
}

enum class StopReason { None, DensityFloor, PotentialBlowup };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::None: return "none";
    case StopReason::DensityFloor: return "density_floor";
    default: return "potential_blowup";
  }
}

struct FlowConfig {
  Scheme scheme = Scheme::StratonovichHeun;
  double t_end = 1.0;
  double h = 1e-3;
  double rho_min = 1e-8;   // density floor triggering the stop
  double s_max = 1e8;      // max-norm blowup threshold for S
  int store_every = 1;     // stride for stored states (final state always kept)
};

/// Time series of one realization.  tau is +infinity while the flow ran to
/// t_end; otherwise the detection time of the first floor/blowup event.
/// States strictly before tau are interior simplex points.
struct Trajectory {
  std::vector<double> t;
  std::vector<NodeField> rho, S;
  std::vector<double> h0, h1;  // energies at the stored states
  bool stopped = false;
  double tau = std::numeric_limits<double>::infinity();
  StopReason reason = StopReason::None;

  const NodeField& final_rho() const { return rho.back(); }
  const NodeField& final_S() const { return S.back(); }
};

namespace detail {

struct PhaseField {
  NodeField drho, ds;  // drho/dt = dH/dS, dS/dt = -dH/drho
};

inline PhaseField hamiltonian_field(const Graph& g, const EnergyCoeffs& c,
                                    const NodeField& rho, const NodeField& S, ThetaKind th,
                                    ThetaKind tht) {
  // a stage that undershoots the simplex is a boundary event, not bad input
  for (double x : rho)
    if (x < 0.0) throw BoundaryDensity("integration stage left the simplex");
  PhaseField f;
  f.drho = part_grad_S(g, c, rho, S, th);
  f.ds = part_grad_rho(g, c, rho, S, th, tht);
  for (double& x : f.ds) x = -x;
  return f;
}

}  // namespace detail

/// Stratonovich-to-Ito drift correction for the noise Hamiltonian:
///   rho: +1/2 [ (d2H1/dSdrho) dH1/dS - (d2H1/dS2)    dH1/drho ]
///   S:   +1/2 [ (d2H1/dSdrho)^T dH1/drho - (d2H1/drho2) dH1/dS ]
/// i.e. 1/2 (Db) b for the phase-space noise field b = (dH1/dS, -dH1/drho).
/// The rho component has exact zero sum; it is re-centered if accumulation
/// noise exceeds 1e-12.
inline std::pair<NodeField, NodeField> ito_correction(const Graph& g,
                                                      const HamiltonianSpec& spec,
                                                      const NodeField& rho,
                                                      const NodeField& S) {
  const int n = g.nodes();
  const NodeField gs = part_grad_S(g, spec.h1, rho, S, spec.theta);
  const NodeField gr = part_grad_rho(g, spec.h1, rho, S, spec.theta, spec.theta_tilde);
  const HessianBlocks hb = part_hessian(g, spec.h1, rho, S, spec.theta, spec.theta_tilde);
  NodeField crho(n, 0.0), cs(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double a = 0.0, b = 0.0;
    for (int j = 0; j < n; ++j) {
      a += hb.s_rho(i, j) * gs[j] - hb.ss(i, j) * gr[j];
      b += hb.s_rho(j, i) * gr[j] - hb.rho_rho(i, j) * gs[j];
    }
    crho[i] = 0.5 * a;
    cs[i] = 0.5 * b;
  }
  const double drift = sum(crho);
  if (std::abs(drift) > 1e-12) {
    const double shift = drift / n;
    for (double& x : crho) x -= shift;
  }
  return {crho, cs};
}

namespace detail {

struct State {
  NodeField rho, S;
};

inline State axpy(const State& x, double a, const PhaseField& f) {
  State y = x;
  for (size_t i = 0; i < y.rho.size(); ++i) {
    y.rho[i] += a * f.drho[i];
    y.S[i] += a * f.ds[i];
  }
  return y;
}

}  // namespace detail

/// One step of the chosen scheme from (rho, S) at time t.
///
/// WongZakaiODE: classical RK4 on drho/dt = dH0/dS + dH1/dS W', with the
/// smoothed slope W' frozen over the step (integrate() aligns steps with
/// the linearization knots, so the frozen value is the exact piecewise
/// constant).  StratonovichHeun: Euler predictor, trapezoidal corrector,
/// both drift and noise evaluated at predictor and base point.
/// ItoEulerCorrected: Euler-Maruyama plus the ito_correction drift.
inline void step(const Graph& g, const HamiltonianSpec& spec, Scheme scheme, NodeField& rho,
                 NodeField& S, double t, double h, const NoiseDriver& noise) {
  using detail::State;
  const ThetaKind th = spec.theta, tht = spec.theta_tilde;
  auto field = [&](const State& x, double wdot) {
    detail::PhaseField f0 = detail::hamiltonian_field(g, spec.h0, x.rho, x.S, th, tht);
    if (wdot != 0.0) {
      const detail::PhaseField f1 = detail::hamiltonian_field(g, spec.h1, x.rho, x.S, th, tht);
      for (size_t i = 0; i < f0.drho.size(); ++i) {
        f0.drho[i] += wdot * f1.drho[i];
        f0.ds[i] += wdot * f1.ds[i];
      }
    }
    return f0;
  };

  State x{rho, S};
  if (scheme == Scheme::WongZakaiODE) {
    const double wdot = noise.slope(t);
    const auto k1 = field(x, wdot);
    const auto k2 = field(detail::axpy(x, 0.5 * h, k1), wdot);
    const auto k3 = field(detail::axpy(x, 0.5 * h, k2), wdot);
    const auto k4 = field(detail::axpy(x, h, k3), wdot);
    for (size_t i = 0; i < rho.size(); ++i) {
      rho[i] += h / 6.0 * (k1.drho[i] + 2.0 * k2.drho[i] + 2.0 * k3.drho[i] + k4.drho[i]);
      S[i] += h / 6.0 * (k1.ds[i] + 2.0 * k2.ds[i] + 2.0 * k3.ds[i] + k4.ds[i]);
    }
    return;
  }

  const double dw = noise.increment(t, h);
  const auto drift0 = detail::hamiltonian_field(g, spec.h0, x.rho, x.S, th, tht);
  const auto noise0 = detail::hamiltonian_field(g, spec.h1, x.rho, x.S, th, tht);

  if (scheme == Scheme::StratonovichHeun) {
    State pred = x;
    for (size_t i = 0; i < rho.size(); ++i) {
      pred.rho[i] += h * drift0.drho[i] + dw * noise0.drho[i];
      pred.S[i] += h * drift0.ds[i] + dw * noise0.ds[i];
    }
    const auto drift1 = detail::hamiltonian_field(g, spec.h0, pred.rho, pred.S, th, tht);
    const auto noise1 = detail::hamiltonian_field(g, spec.h1, pred.rho, pred.S, th, tht);
    for (size_t i = 0; i < rho.size(); ++i) {
      rho[i] += 0.5 * h * (drift0.drho[i] + drift1.drho[i]) +
                0.5 * dw * (noise0.drho[i] + noise1.drho[i]);
      S[i] += 0.5 * h * (drift0.ds[i] + drift1.ds[i]) +
              0.5 * dw * (noise0.ds[i] + noise1.ds[i]);
    }
    return;
  }

  const auto corr = ito_correction(g, spec, x.rho, x.S);
  for (size_t i = 0; i < rho.size(); ++i) {
    rho[i] += h * drift0.drho[i] + dw * noise0.drho[i] + h * corr.first[i];
    S[i] += h * drift0.ds[i] + dw * noise0.ds[i] + h * corr.second[i];
  }
}

/// Run the flow from (rho0, S0) to t_end or the first stop event.  The
/// step width must tile the horizon; for the Wong-Zakai scheme it must
/// also tile the linearization width so no step straddles a knot, and for
/// the SDE schemes it must be a multiple of the Brownian sample grid so
/// increments are exact path differences.
inline Trajectory integrate(const Graph& g, const HamiltonianSpec& spec,
                            const NodeField& rho0, const NodeField& S0,
                            const FlowConfig& cfg, const NoiseDriver& noise = {}) {
  spec.validate(g.nodes());
  validate_density(rho0);
  if (!is_interior(rho0, cfg.rho_min))
    throw InvalidInput("initial density must be interior above the floor");
  if (static_cast<int>(S0.size()) != g.nodes()) throw InvalidInput("S0 has wrong length");
  if (!(cfg.h > 0.0) || !(cfg.t_end > 0.0)) throw InvalidInput("need h, t_end > 0");
  const double steps_real = cfg.t_end / cfg.h;
  const long steps = std::lround(steps_real);
  if (steps < 1 || std::abs(steps_real - static_cast<double>(steps)) > 1e-9)
    throw InvalidInput("step width must divide the horizon");
  if (noise.wz) {
    const double m = noise.wz->delta / cfg.h;
    if (cfg.scheme == Scheme::WongZakaiODE &&
        (m < 1.0 - 1e-9 || std::abs(m - std::round(m)) > 1e-9))
      throw InvalidInput("wong-zakai scheme needs h to tile the linearization width");
    const double q = cfg.h / noise.wz->base.dt;
    if (cfg.scheme != Scheme::WongZakaiODE &&
        (q < 1.0 - 1e-9 || std::abs(q - std::round(q)) > 1e-9))
      throw InvalidInput("SDE schemes need h to be a multiple of the Brownian grid");
    if (noise.wz->base.t_end() < cfg.t_end - 1e-9)
      throw InvalidInput("noise path is shorter than the horizon");
  }

  Trajectory tr;
  NodeField rho = rho0, S = S0;
  auto energies = [&](const NodeField& r, const NodeField& s) -> std::pair<double, double> {
    try {
      return hamiltonian_value(g, spec, r, s);
    } catch (const Error&) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      return {nan, nan};
    }
  };
  auto store = [&](double t, const NodeField& r, const NodeField& s) {
    tr.t.push_back(t);
    tr.rho.push_back(r);
    tr.S.push_back(s);
    const auto [e0, e1] = energies(r, s);
    tr.h0.push_back(e0);
    tr.h1.push_back(e1);
  };
  store(0.0, rho, S);

  for (long i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * cfg.h;
    const double t_next = static_cast<double>(i + 1) * cfg.h;
    bool boundary_hit = false;
    try {
      step(g, spec, cfg.scheme, rho, S, t, cfg.h, noise);
    } catch (const BoundaryDensity&) {
      // a stage left the interior: report the floor stop at the step end,
      // keeping the last valid state as final
      boundary_hit = true;
    }
    if (boundary_hit) {
      tr.stopped = true;
      tr.tau = t_next;
      tr.reason = StopReason::DensityFloor;
      break;
    }
    if (!all_finite(rho) || !all_finite(S))
      throw IntegrationFailure("non-finite state at t=" + fmt17(t_next), t_next);

    double rmin = rho[0];
    for (double x : rho) rmin = std::min(rmin, x);
    const bool floor_hit = rmin <= cfg.rho_min;
    const bool blowup = max_abs(S) >= cfg.s_max;
    const bool last = (i + 1 == steps);
    if (floor_hit || blowup || last || ((i + 1) % cfg.store_every == 0))
      store(t_next, rho, S);
    if (floor_hit || blowup) {
      tr.stopped = true;
      tr.tau = t_next;
      tr.reason = floor_hit ? StopReason::DensityFloor : StopReason::PotentialBlowup;
      break;
    }
  }
  return tr;
}

/// Pathwise accounting of the drift-energy change along a stored
/// trajectory:
///
///   H0(t) - H0(0) = int {H0,H1} dW  +  int D ds,
///   D = grad H0 . c_ito + 1/2 b^T (Hess H0) b,  b = (dH1/dS, -dH1/drho),
///
/// which is Ito's formula for H0 along the corrected SDE.  residual_euler
/// accumulates the right side exactly as written (left-point Ito sums).
/// residual uses the trapezoid quadrature of the stochastic integral,
/// whose second-order correction cancels the D-sum analytically; this
/// variant tracks the discrete trajectory one order better and is the one
/// reported as max_abs_residual.  Requires a trajectory stored at every
/// step and the path that drove it.
struct AuditReport {
  std::vector<double> t, h0, bracket, drift, residual, residual_euler;
  double max_abs_residual = 0.0;
};

inline AuditReport energy_audit(const Graph& g, const HamiltonianSpec& spec,
                                const Trajectory& tr, const NoiseDriver& noise) {
  const int n = g.nodes();
  AuditReport rep;
  const size_t m = tr.t.size();
  rep.t = tr.t;
  rep.h0 = tr.h0;
  rep.bracket.resize(m);
  rep.drift.resize(m);
  for (size_t k = 0; k < m; ++k) {
    const NodeField& rho = tr.rho[k];
    const NodeField& S = tr.S[k];
    rep.bracket[k] =
        poisson_bracket(g, spec.h0, spec.h1, rho, S, spec.theta, spec.theta_tilde);

    const NodeField h0r = part_grad_rho(g, spec.h0, rho, S, spec.theta, spec.theta_tilde);
    const NodeField h0s = part_grad_S(g, spec.h0, rho, S, spec.theta);
    const NodeField h1r = part_grad_rho(g, spec.h1, rho, S, spec.theta, spec.theta_tilde);
    const NodeField h1s = part_grad_S(g, spec.h1, rho, S, spec.theta);
    const auto corr = ito_correction(g, spec, rho, S);
    const HessianBlocks hb0 = part_hessian(g, spec.h0, rho, S, spec.theta, spec.theta_tilde);

    // b = (h1s, -h1r); the quadratic form splits into the three blocks,
    // with the mixed block d2H0/drho_i dS_j = s_rho(j, i)
    double d = 0.0;
    for (int i = 0; i < n; ++i) d += h0r[i] * corr.first[i] + h0s[i] * corr.second[i];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        d += 0.5 * h1s[i] * hb0.rho_rho(i, j) * h1s[j];
        d -= h1s[i] * hb0.s_rho(j, i) * h1r[j];
        d += 0.5 * h1r[i] * hb0.ss(i, j) * h1r[j];
      }
    rep.drift[k] = d;
  }

  rep.residual.resize(m);
  rep.residual_euler.resize(m);
  rep.residual[0] = rep.residual_euler[0] = 0.0;
  double acc_trap = 0.0, acc_euler = 0.0;
  for (size_t k = 0; k + 1 < m; ++k) {
    const double h = tr.t[k + 1] - tr.t[k];
    const double dw = noise.increment(tr.t[k], h);
    acc_trap += 0.5 * (rep.bracket[k] + rep.bracket[k + 1]) * dw;
    acc_euler += rep.bracket[k] * dw + rep.drift[k] * h;
    rep.residual[k + 1] = tr.h0[k + 1] - tr.h0[0] - acc_trap;
    rep.residual_euler[k + 1] = tr.h0[k + 1] - tr.h0[0] - acc_euler;
  }
  for (double r : rep.residual) rep.max_abs_residual = std::max(rep.max_abs_residual, std::abs(r));
  return rep;
}

}  // namespace gwhf
