#pragma once

// Experiment drivers behind the command-line tool: each one reads the
// effective configuration, runs the requested computation (fanning
// independent seeds / widths / perturbations out to a worker pool), and
// writes bit-stable CSV/JSON artifacts.  Result order is fixed by input
// order, never by completion order, so outputs are identical at any
// thread count.

#include <atomic>
#include <complex>
#include <filesystem>
#include <mutex>
#include <thread>

#include "gwhf/config.hpp"
#include "gwhf/control.hpp"
#include "gwhf/flow.hpp"
#include "gwhf/schrodinger.hpp"

namespace gwhf {

/// Run fn(0..items-1) on a pool; workers pull indices, results must be
/// written to pre-sized slots.  The first exception is rethrown after the
/// pool drains.
template <class F>
inline void parallel_for(int items, int threads, F&& fn) {
  threads = std::max(1, std::min(threads, items));
  if (threads <= 1) {
    for (int i = 0; i < items; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= items) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lk(mu);
          if (!first) first = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first) std::rethrow_exception(first);
}

namespace rundet {

inline Graph config_graph(const Json& j) { return load_graph(need_string(j, "graph.file")); }

inline NodeField config_field(const Json& j, const std::string& path, int n, bool required) {
  if (!required && !find_path(j, path)) return NodeField(n, 0.0);
  NodeField v = need_number_list(j, path);
  if (static_cast<int>(v.size()) != n)
    throw InvalidInput("config: field '" + path + "' must have " + std::to_string(n) +
                       " entries");
  return v;
}

inline EnergyCoeffs config_coeffs(const Json& j, const std::string& base, int n) {
  EnergyCoeffs c;
  c.kinetic = opt_number(j, base + ".kinetic", 0.0);
  c.fisher = opt_number(j, base + ".fisher", 0.0);
  c.linear = opt_number(j, base + ".linear", 0.0);
  c.interaction = opt_number(j, base + ".interaction", 0.0);
  c.entropy = opt_number(j, base + ".entropy", 0.0);
  if (find_path(j, base + ".v")) c.v = config_field(j, base + ".v", n, true);
  if (find_path(j, base + ".w")) c.w = need_matrix(j, base + ".w", n);
  return c;
}

inline HamiltonianSpec config_spec(const Json& j, int n) {
  HamiltonianSpec s;
  s.h0 = config_coeffs(j, "spec.h0", n);
  s.h1 = config_coeffs(j, "spec.h1", n);
  s.theta = theta_kind_from_string(opt_string(j, "spec.theta", "arithmetic"));
  s.theta_tilde = theta_kind_from_string(opt_string(j, "spec.theta_tilde", "logarithmic"));
  return s;
}

inline NlsPreset config_preset(const Json& j, int n) {
  NlsPreset p;
  p.kind = nls_kind_from_string(need_string(j, "preset.kind"));
  p.nodes = n;
  if (find_path(j, "preset.v")) p.v = config_field(j, "preset.v", n, true);
  if (find_path(j, "preset.w")) p.w = need_matrix(j, "preset.w", n);
  if (find_path(j, "preset.sigma_file")) {
    const std::string f = need_string(j, "preset.sigma_file");
    Json arr;
    try {
      arr = Json::parse(read_text_file(f));
    } catch (const Json::exception& e) {
      throw InvalidInput("config: preset.sigma_file '" + f + "' is not a json array: " +
                         e.what());
    }
    Json holder = Json::object();
    holder["sigma"] = arr;
    p.sigma = config_field(holder, "sigma", n, true);
  } else if (find_path(j, "preset.sigma")) {
    p.sigma = config_field(j, "preset.sigma", n, true);
  }
  p.alpha = opt_number(j, "preset.alpha", 1.0);
  return p;
}

inline FlowConfig config_flow(const Json& j) {
  FlowConfig c;
  c.scheme = scheme_from_string(opt_string(j, "numerics.scheme", "heun"));
  c.t_end = opt_number(j, "numerics.T", 1.0);
  if (!(c.t_end > 0.0)) throw InvalidInput("config: field 'numerics.T' must be positive");
  c.h = need_positive(j, "numerics.h");
  c.rho_min = opt_number(j, "numerics.rho_min", c.rho_min);
  c.s_max = opt_number(j, "numerics.s_max", c.s_max);
  c.store_every = static_cast<int>(opt_integer(j, "numerics.store_every", 1));
  if (c.store_every < 1)
    throw InvalidInput("config: field 'numerics.store_every' must be positive");
  return c;
}

struct NoiseSetup {
  bool present = false;
  double delta = 0.0;
  double dt = 0.0;
  std::vector<std::uint64_t> seeds;
};

inline std::vector<std::uint64_t> config_seeds(const Json& j) {
  const bool one = find_path(j, "noise.seed") != nullptr;
  const bool many = find_path(j, "noise.seeds") != nullptr;
  if (one == many)
    throw InvalidInput(
        "config: a stochastic run needs exactly one of 'noise.seed' or 'noise.seeds' "
        "(wall-clock seeding is not available)");
  std::vector<std::uint64_t> seeds;
  if (one) {
    const long long s = need_integer(j, "noise.seed");
    if (s < 0) throw InvalidInput("config: field 'noise.seed' must be non-negative");
    seeds.push_back(static_cast<std::uint64_t>(s));
  } else {
    const Json& arr = need_path(j, "noise.seeds");
    if (!arr.is_array() || arr.empty())
      throw InvalidInput("config: field 'noise.seeds' must be a non-empty array");
    for (const Json& x : arr) {
      if (!x.is_number_integer() || x.get<long long>() < 0)
        throw InvalidInput("config: field 'noise.seeds' must hold non-negative integers");
      seeds.push_back(x.get<std::uint64_t>());
    }
  }
  return seeds;
}

// noise.dt defaults to the linearization width itself (knots = samples);
// finer SDE stepping needs an explicit grid.
inline NoiseSetup config_noise(const Json& j, bool need_delta) {
  NoiseSetup ns;
  if (!find_path(j, "noise")) return ns;
  ns.present = true;
  if (need_delta) ns.delta = need_positive(j, "noise.delta");
  ns.dt = find_path(j, "noise.dt") ? need_positive(j, "noise.dt") : ns.delta;
  ns.seeds = config_seeds(j);
  return ns;
}

inline SolveOptions config_solve_options(const Json& j) {
  SolveOptions o;
  o.gap_abs = opt_number(j, "control.tol_gap", o.gap_abs);
  o.gap_rel = opt_number(j, "control.gap_rel", o.gap_rel);
  o.residual = opt_number(j, "control.residual", o.residual);
  o.max_iterations = opt_integer(j, "control.max_iterations", o.max_iterations);
  o.check_every = opt_integer(j, "control.check_every", o.check_every);
  if (o.max_iterations < 1 || o.check_every < 1)
    throw InvalidInput("config: control iteration budgets must be positive");
  return o;
}

inline std::string seed_suffixed(const std::string& name, std::uint64_t seed, bool multi) {
  if (!multi) return name;
  const std::string tag = "-s" + std::to_string(seed);
  const size_t dot = name.find_last_of('.');
  return dot == std::string::npos ? name + tag
                                  : name.substr(0, dot) + tag + name.substr(dot);
}

inline double min_density(const Trajectory& tr) {
  double m = std::numeric_limits<double>::infinity();
  for (const NodeField& r : tr.rho)
    for (double v : r) m = std::min(m, v);
  return m;
}

}  // namespace rundet

/// simulate / nls: integrate one trajectory per seed (or one deterministic
/// trajectory), write per-seed trajectory CSVs, an ensemble summary JSON,
/// and optionally the sampled noise paths.  Returns 4 when any trajectory
/// stopped before the horizon and the run demands global existence.
inline int run_simulate(const RunConfig& rc, bool nls_mode) {
  const Json& j = rc.doc;
  const Graph g = rundet::config_graph(j);
  const int n = g.nodes();
  const HamiltonianSpec spec =
      nls_mode ? preset_spec(rundet::config_preset(j, n)) : rundet::config_spec(j, n);
  const NodeField rho0 = rundet::config_field(j, "state.rho0", n, true);
  const NodeField S0 = rundet::config_field(j, "state.S0", n, false);
  const FlowConfig fc = rundet::config_flow(j);
  const rundet::NoiseSetup ns = rundet::config_noise(j, true);

  const int runs = ns.present ? static_cast<int>(ns.seeds.size()) : 1;
  const bool multi = runs > 1;
  std::vector<Trajectory> trs(runs);
  parallel_for(runs, rc.threads, [&](int q) {
    NoiseDriver drv;
    WongZakaiPath wz;
    if (ns.present) {
      wz = WongZakaiPath(sample_wiener(ns.seeds[q], fc.t_end, ns.dt), ns.delta);
      drv.wz = &wz;
    }
    trs[q] = integrate(g, spec, rho0, S0, fc, drv);
  });

  const std::string traj_name = opt_string(j, "output.trajectory", "trajectory.csv");
  Json results = Json::array();
  bool any_stopped = false;
  for (int q = 0; q < runs; ++q) {
    const Trajectory& tr = trs[q];
    any_stopped = any_stopped || tr.stopped;

    Csv csv(rc.hash);
    std::vector<std::string> cols{"t"};
    for (int i = 1; i <= n; ++i) cols.push_back("rho_" + std::to_string(i));
    for (int i = 1; i <= n; ++i) cols.push_back("S_" + std::to_string(i));
    if (nls_mode) {
      for (int i = 1; i <= n; ++i) cols.push_back("abs_u_" + std::to_string(i));
      for (int i = 1; i <= n; ++i) cols.push_back("arg_u_" + std::to_string(i));
    }
    cols.push_back("H0");
    cols.push_back("H1");
    cols.push_back("stopped");
    csv.header(cols);
    for (size_t k = 0; k < tr.t.size(); ++k) {
      std::vector<double> row{tr.t[k]};
      for (double v : tr.rho[k]) row.push_back(v);
      for (double v : tr.S[k]) row.push_back(v);
      if (nls_mode) {
        const WaveFunction u = madelung_inverse(tr.rho[k], tr.S[k]);
        for (const std::complex<double>& c : u) row.push_back(std::abs(c));
        for (const std::complex<double>& c : u) row.push_back(std::arg(c));
      }
      row.push_back(tr.h0[k]);
      row.push_back(tr.h1[k]);
      row.push_back(k + 1 == tr.t.size() && tr.stopped ? 1.0 : 0.0);
      csv.row(row);
    }
    const std::uint64_t seed = ns.present ? ns.seeds[q] : 0;
    write_text_file(rc.artifact(rundet::seed_suffixed(traj_name, seed, multi)), csv.buf);

    Json entry = Json::object();
    if (ns.present) entry["seed"] = ns.seeds[q];
    entry["stopped"] = tr.stopped;
    entry["reason"] = to_string(tr.reason);
    entry["tau"] = tr.stopped ? Json(tr.tau) : Json();
    entry["final_h0"] = tr.h0.back();
    entry["final_h1"] = tr.h1.back();
    entry["min_rho"] = rundet::min_density(tr);
    results.push_back(entry);
  }

  if (find_path(j, "output.noise")) {
    if (!ns.present)
      throw InvalidInput("config: 'output.noise' needs a noise section to export");
    const std::string noise_name = need_string(j, "output.noise");
    for (int q = 0; q < runs; ++q) {
      const WienerPath wp = sample_wiener(ns.seeds[q], fc.t_end, ns.dt);
      const WongZakaiPath wz(wp, ns.delta);
      Csv csv(rc.hash);
      csv.header({"t", "W", "W_delta", "slope"});
      for (size_t k = 0; k < wp.w.size(); ++k) {
        const double t = static_cast<double>(k) * wp.dt;
        csv.row({t, wp.w[k], wz.value(t), wz.slope(t)});
      }
      write_text_file(rc.artifact(rundet::seed_suffixed(noise_name, ns.seeds[q], multi)),
                      csv.buf);
    }
  }

  Json summary = Json::object();
  summary["command"] = nls_mode ? "nls" : "simulate";
  summary["config"] = rc.hash;
  summary["runs"] = results;
  write_text_file(rc.artifact(opt_string(j, "output.summary", "summary.json")),
                  emit_json(summary));

  if (opt_bool(j, "require_global", false) && any_stopped) return 4;
  return 0;
}

/// control: solve one transport problem, write solution.json and paths.csv.
inline int run_control(const RunConfig& rc) {
  const Json& j = rc.doc;
  ControlProblem p(rundet::config_graph(j));
  const int n = p.graph.nodes();
  p.rho_a = rundet::config_field(j, "control.rho_a", n, true);
  p.rho_b = rundet::config_field(j, "control.rho_b", n, true);
  p.variant = control_variant_from_string(opt_string(j, "control.variant", "additive"));
  p.kind = theta_kind_from_string(opt_string(j, "control.mean", "arithmetic"));
  if (find_path(j, "control.sigma")) p.sigma = rundet::config_field(j, "control.sigma", n, true);
  p.epsilon = opt_number(j, "control.epsilon", 0.0);
  const long long M = need_integer(j, "control.M");
  if (M < 1) throw InvalidInput("config: field 'control.M' must be positive");
  p.intervals = static_cast<int>(M);

  WongZakaiPath wz;
  const rundet::NoiseSetup ns = rundet::config_noise(j, true);
  if (ns.present) {
    if (ns.seeds.size() != 1)
      throw InvalidInput("config: control takes a single 'noise.seed'");
    wz = WongZakaiPath(sample_wiener(ns.seeds[0], 1.0, ns.dt), ns.delta);
    p.wz = &wz;
  } else if (p.variant == ControlVariant::SpecialMultiplicative || !p.sigma.empty()) {
    throw InvalidInput("config: this control variant is stochastic -- add a noise section");
  }

  const ControlSolution sol = solve(p, rundet::config_solve_options(j));

  Json out = Json::object();
  out["command"] = "control";
  out["config"] = rc.hash;
  out["variant"] = to_string(p.variant);
  out["intervals"] = p.intervals;
  out["action"] = sol.action;
  out["gap"] = sol.gap;
  out["residual"] = sol.residual;
  out["iterations"] = sol.iterations;
  out["rho"] = sol.rho;
  out["m"] = sol.m;
  out["S"] = sol.S;
  write_text_file(rc.artifact(opt_string(j, "output.solution", "solution.json")),
                  emit_json(out));

  const int ne = p.graph.edge_count();
  Csv csv(rc.hash);
  std::vector<std::string> cols{"t"};
  for (int i = 1; i <= n; ++i) cols.push_back("rho_" + std::to_string(i));
  for (int e = 1; e <= ne; ++e) cols.push_back("m_" + std::to_string(e));
  for (int i = 1; i <= n; ++i) cols.push_back("S_" + std::to_string(i));
  csv.header(cols);
  for (int k = 0; k <= p.intervals; ++k) {
    std::vector<double> row{static_cast<double>(k) * p.h()};
    for (double v : sol.rho[k]) row.push_back(v);
    if (k < p.intervals) {
      for (double v : sol.m[k]) row.push_back(v);
      for (double v : sol.S[k]) row.push_back(v);
      csv.row(row);
    } else {
      row.resize(static_cast<size_t>(1 + n + ne + n), 0.0);
      csv.row(row, static_cast<size_t>(1 + n));  // final slice has no interval data
    }
  }
  write_text_file(rc.artifact(opt_string(j, "output.paths", "paths.csv")), csv.buf);
  return 0;
}

/// wz-study: for each seed, integrate a fine Stratonovich reference and the
/// piecewise-linear-noise ODE at every width in study.deltas; report the
/// seed-averaged final-density gap per width plus a monotone-decrease flag.
inline int run_wz_study(const RunConfig& rc) {
  const Json& j = rc.doc;
  const Graph g = rundet::config_graph(j);
  const int n = g.nodes();
  const HamiltonianSpec spec = find_path(j, "preset")
                                   ? preset_spec(rundet::config_preset(j, n))
                                   : rundet::config_spec(j, n);
  const NodeField rho0 = rundet::config_field(j, "state.rho0", n, true);
  const NodeField S0 = rundet::config_field(j, "state.S0", n, false);
  const double T = opt_number(j, "numerics.T", 1.0);
  if (!(T > 0.0)) throw InvalidInput("config: field 'numerics.T' must be positive");

  const std::vector<double> deltas = need_number_list(j, "study.deltas");
  if (deltas.empty()) throw InvalidInput("config: field 'study.deltas' must be non-empty");
  for (size_t q = 0; q < deltas.size(); ++q) {
    if (!(deltas[q] > 0.0))
      throw InvalidInput("config: field 'study.deltas' must hold positive widths");
    if (q > 0 && !(deltas[q] < deltas[q - 1]))
      throw InvalidInput("config: field 'study.deltas' must be strictly decreasing");
  }
  const double h_ref = need_positive(j, "study.h_ref");
  const double h_wz = opt_number(j, "study.h_wz", 0.0);

  if (!find_path(j, "noise")) throw InvalidInput("config: missing field 'noise'");
  const double dt = need_positive(j, "noise.dt");
  const std::vector<std::uint64_t> seeds = rundet::config_seeds(j);
  auto tiles = [](double big, double small) {
    const double q = big / small;
    return std::abs(q - std::round(q)) <= 1e-9 && q >= 1.0 - 1e-9;
  };
  if (!tiles(h_ref, dt) && !tiles(dt, h_ref))
    throw InvalidInput("config: 'study.h_ref' and 'noise.dt' must be commensurate");
  for (double d : deltas)
    if (!tiles(d, dt))
      throw InvalidInput("config: every entry of 'study.deltas' must be a multiple of 'noise.dt'");

  const int ns = static_cast<int>(seeds.size());
  const int nd = static_cast<int>(deltas.size());
  std::vector<std::vector<double>> errs(ns, std::vector<double>(nd, 0.0));
  parallel_for(ns, rc.threads, [&](int q) {
    const WienerPath wp = sample_wiener(seeds[q], T, dt);
    FlowConfig ref_cfg;
    ref_cfg.scheme = Scheme::StratonovichHeun;
    ref_cfg.t_end = T;
    ref_cfg.h = h_ref;
    ref_cfg.store_every = 1 << 30;
    const WongZakaiPath ref_wz(wp, dt);
    const Trajectory ref = integrate(g, spec, rho0, S0, ref_cfg, NoiseDriver{&ref_wz});

    for (int d = 0; d < nd; ++d) {
      const WongZakaiPath wz(wp, deltas[d]);
      FlowConfig cfg;
      cfg.scheme = Scheme::WongZakaiODE;
      cfg.t_end = T;
      cfg.h = h_wz > 0.0 ? h_wz : deltas[d] / 8.0;
      cfg.store_every = 1 << 30;
      const Trajectory tr = integrate(g, spec, rho0, S0, cfg, NoiseDriver{&wz});
      double err = 0.0;
      for (int i = 0; i < n; ++i)
        err = std::max(err, std::abs(tr.final_rho()[i] - ref.final_rho()[i]));
      errs[q][d] = err;
    }
  });

  std::vector<double> mean(nd, 0.0);
  for (int d = 0; d < nd; ++d) {
    for (int q = 0; q < ns; ++q) mean[d] += errs[q][d];
    mean[d] /= static_cast<double>(ns);
  }
  bool monotone = true;
  for (int d = 1; d < nd; ++d)
    if (!(mean[d] < mean[d - 1])) monotone = false;

  Csv csv(rc.hash);
  csv.header({"delta", "error"});
  for (int d = 0; d < nd; ++d) csv.row({deltas[d], mean[d]});
  write_text_file(rc.artifact(opt_string(j, "output.table", "table.csv")), csv.buf);

  Json summary = Json::object();
  summary["command"] = "wz-study";
  summary["config"] = rc.hash;
  summary["seeds"] = seeds;
  summary["deltas"] = deltas;
  summary["errors"] = mean;
  summary["monotone"] = monotone;
  write_text_file(rc.artifact(opt_string(j, "output.summary", "summary.json")),
                  emit_json(summary));
  return 0;
}

/// gamma-study: solve the perturbed problem at each listed epsilon (and the
/// unperturbed one), reporting actions, deviations, and a decrease flag.
inline int run_gamma_study(const RunConfig& rc) {
  const Json& j = rc.doc;
  ControlProblem p(rundet::config_graph(j));
  const int n = p.graph.nodes();
  p.rho_a = rundet::config_field(j, "control.rho_a", n, true);
  p.rho_b = rundet::config_field(j, "control.rho_b", n, true);
  const long long M = need_integer(j, "control.M");
  if (M < 1) throw InvalidInput("config: field 'control.M' must be positive");
  p.intervals = static_cast<int>(M);

  const std::vector<double> eps = need_number_list(j, "study.epsilons");
  if (eps.empty()) throw InvalidInput("config: field 'study.epsilons' must be non-empty");
  for (double e : eps)
    if (!(e > 0.0))
      throw InvalidInput("config: field 'study.epsilons' must hold positive values");

  const rundet::NoiseSetup ns = rundet::config_noise(j, true);
  if (!ns.present) throw InvalidInput("config: missing field 'noise'");
  if (ns.seeds.size() != 1)
    throw InvalidInput("config: gamma-study takes a single 'noise.seed'");
  const WongZakaiPath wz(sample_wiener(ns.seeds[0], 1.0, ns.dt), ns.delta);
  p.wz = &wz;

  const SolveOptions opt = rundet::config_solve_options(j);
  const int ne = static_cast<int>(eps.size());
  std::vector<double> actions(ne + 1, 0.0);  // slot 0 = unperturbed
  parallel_for(ne + 1, rc.threads, [&](int q) {
    actions[q] = solve_special(p, q == 0 ? 0.0 : eps[q - 1], opt).action;
  });

  std::vector<double> diffs(ne, 0.0);
  for (int q = 0; q < ne; ++q) diffs[q] = std::abs(actions[q + 1] - actions[0]);
  bool decreasing = true;
  for (int q = 1; q < ne; ++q)
    if (!(diffs[q] < diffs[q - 1])) decreasing = false;

  Csv csv(rc.hash);
  csv.header({"epsilon", "action", "abs_diff"});
  for (int q = 0; q < ne; ++q) csv.row({eps[q], actions[q + 1], diffs[q]});
  write_text_file(rc.artifact(opt_string(j, "output.table", "table.csv")), csv.buf);

  Json summary = Json::object();
  summary["command"] = "gamma-study";
  summary["config"] = rc.hash;
  summary["action0"] = actions[0];
  summary["epsilons"] = eps;
  summary["actions"] = std::vector<double>(actions.begin() + 1, actions.end());
  summary["abs_diffs"] = diffs;
  summary["decreasing"] = decreasing;
  write_text_file(rc.artifact(opt_string(j, "output.summary", "summary.json")),
                  emit_json(summary));
  return 0;
}

/// components: positive-theta connectivity of a density on the graph.
inline int run_components(const RunConfig& rc) {
  const Json& j = rc.doc;
  const Graph g = rundet::config_graph(j);
  const NodeField rho = rundet::config_field(j, "state.rho0", g.nodes(), true);
  validate_density(rho);
  const double tol = opt_number(j, "components.tol", 0.0);
  if (tol < 0.0) throw InvalidInput("config: field 'components.tol' must be non-negative");
  const ThetaKind kind =
      theta_kind_from_string(opt_string(j, "components.mean", "arithmetic"));
  const std::vector<std::vector<int>> comps = theta_connected_components(g, rho, kind, tol);

  Json out = Json::object();
  out["command"] = "components";
  out["config"] = rc.hash;
  out["count"] = comps.size();
  out["components"] = comps;
  write_text_file(rc.artifact(opt_string(j, "output.components", "components.json")),
                  emit_json(out));
  return 0;
}

/// Dispatch on the command name; finalizes the config hash first.
inline int run_command(RunConfig& rc) {
  rc.finalize();
  if (!rc.out_dir.empty() && rc.out_dir != ".") {
    std::error_code ec;
    std::filesystem::create_directories(rc.out_dir, ec);
    if (ec) throw InvalidInput("cannot create output directory '" + rc.out_dir + "'");
  }
  if (rc.command == "simulate") return run_simulate(rc, false);
  if (rc.command == "nls") return run_simulate(rc, true);
  if (rc.command == "control") return run_control(rc);
  if (rc.command == "wz-study") return run_wz_study(rc);
  if (rc.command == "gamma-study") return run_gamma_study(rc);
  if (rc.command == "components") return run_components(rc);
  throw InvalidInput("unknown command '" + rc.command + "'");
}

}  // namespace gwhf
