// Command-line front end: flag parsing, config merging, error mapping.
// All real work happens in the library's run drivers.
//
// Exit codes: 0 ok, 2 config error, 4 stopped before the horizon
// (simulate/nls with --require-global), 3 numerical failure.  Every
// failure prints a single machine-readable JSON object to stderr.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gwhf/run.hpp"

using gwhf::Json;

namespace {

int fail_json(int code, const std::string& kind, const std::string& message,
              const Json& extra = Json::object()) {
  Json e = Json::object();
  e["code"] = code;
  e["kind"] = kind;
  e["message"] = message;
  for (auto it = extra.begin(); it != extra.end(); ++it) e[it.key()] = it.value();
  Json wrap = Json::object();
  wrap["error"] = e;
  std::fprintf(stderr, "%s", gwhf::emit_json(wrap).c_str());
  return code;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  size_t start = 0;
  while (start <= text.size()) {
    const size_t comma = text.find(',', start);
    const std::string tok =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw gwhf::InvalidInput("flag " + flag + ": '" + tok + "' is not a number");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw gwhf::InvalidInput("flag " + flag + " needs a number list");
  return out;
}

Json& section(Json& cfg, const char* name) {
  if (!cfg.contains(name) || !cfg[name].is_object()) cfg[name] = Json::object();
  return cfg[name];
}

void merge_file(Json& cfg, const std::string& path) {
  const Json doc = gwhf::load_config(path);
  if (!doc.is_object()) throw gwhf::InvalidInput("config '" + path + "' must be a table");
  for (auto it = doc.begin(); it != doc.end(); ++it) cfg[it.key()] = it.value();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic Hamiltonian flows and optimal-transport control on weighted graphs"};
  app.require_subcommand(1);

  std::string config_path, spec_path, out_dir = ".";
  long long seed = 0;
  int threads = 1;
  std::string graph_path, scheme, preset_kind, sigma_file, variant;
  std::string out_name, summary_name, noise_name, paths_name;
  std::string rho_a_text, rho_b_text, sigma_text, rho_text;
  double dt = 0.0, t_end = 0.0, wz_delta = 0.0, wz_dt = 0.0, epsilon = 0.0, tol_gap = 0.0,
         comp_tol = 0.0;
  long long intervals = 0, store_every = 0;
  bool require_global = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file, TOML or JSON");
    sub->add_option("--seed", seed, "master seed (overrides noise.seed)");
    sub->add_option("--out-dir", out_dir, "directory receiving the artifacts");
    sub->add_option("--threads", threads, "worker pool size")->check(CLI::PositiveNumber);
  };
  auto add_flow = [&](CLI::App* sub) {
    sub->add_option("--graph", graph_path, "graph file (json)");
    sub->add_option("--spec", spec_path, "file whose sections are merged into the config");
    sub->add_option("--scheme", scheme, "integrator: wz-ode|heun|ito-euler");
    sub->add_option("--dt", dt, "integrator step");
    sub->add_option("--T", t_end, "horizon");
    sub->add_option("--wz-delta", wz_delta, "noise linearization width");
    sub->add_option("--wz-dt", wz_dt, "Brownian sample grid");
    sub->add_option("--store-every", store_every, "state storage stride");
    sub->add_option("--out", out_name, "trajectory csv name");
    sub->add_option("--summary-out", summary_name, "summary json name");
    sub->add_option("--noise-out", noise_name, "noise path csv name");
    sub->add_flag("--require-global", require_global,
                  "exit 4 if any trajectory stops before the horizon");
  };

  CLI::App* c_sim = app.add_subcommand("simulate", "integrate the stochastic flow");
  add_common(c_sim);
  add_flow(c_sim);

  CLI::App* c_nls = app.add_subcommand("nls", "integrate a wavefunction preset");
  add_common(c_nls);
  add_flow(c_nls);
  c_nls->add_option("--preset", preset_kind, "common-noise|logarithmic|dispersion");
  c_nls->add_option("--sigma", sigma_file, "json file with the noise potential");

  CLI::App* c_ctl = app.add_subcommand("control", "solve a transport control problem");
  add_common(c_ctl);
  c_ctl->add_option("--graph", graph_path, "graph file (json)");
  c_ctl->add_option("--rho-a", rho_a_text, "initial density, comma separated");
  c_ctl->add_option("--rho-b", rho_b_text, "final density, comma separated");
  c_ctl->add_option("--sigma-potential", sigma_text, "noise potential, comma separated");
  c_ctl->add_option("--epsilon", epsilon, "special-variant perturbation scale");
  c_ctl->add_option("--variant", variant, "additive|special");
  c_ctl->add_option("--M", intervals, "time grid intervals");
  c_ctl->add_option("--wz-delta", wz_delta, "noise linearization width");
  c_ctl->add_option("--wz-dt", wz_dt, "Brownian sample grid");
  c_ctl->add_option("--tol-gap", tol_gap, "absolute duality-gap target");
  c_ctl->add_option("--out", out_name, "solution json name");
  c_ctl->add_option("--paths-out", paths_name, "path csv name");

  CLI::App* c_wz = app.add_subcommand("wz-study", "noise-width convergence table");
  add_common(c_wz);
  c_wz->add_option("--graph", graph_path, "graph file (json)");
  c_wz->add_option("--spec", spec_path, "file whose sections are merged into the config");
  c_wz->add_option("--out", out_name, "table csv name");

  CLI::App* c_gamma = app.add_subcommand("gamma-study", "vanishing-perturbation table");
  add_common(c_gamma);
  c_gamma->add_option("--graph", graph_path, "graph file (json)");
  c_gamma->add_option("--out", out_name, "table csv name");

  CLI::App* c_comp = app.add_subcommand("components", "positive-theta connectivity");
  add_common(c_comp);
  c_comp->add_option("--graph", graph_path, "graph file (json)");
  c_comp->add_option("--rho", rho_text, "density, comma separated");
  c_comp->add_option("--tol", comp_tol, "theta threshold");
  c_comp->add_option("--out", out_name, "components json name");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail_json(2, "usage", e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  auto given = [&](const std::string& name) {
    const CLI::Option* o = sub->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };

  try {
    gwhf::RunConfig rc;
    rc.out_dir = out_dir;
    rc.threads = threads;
    Json& cfg = rc.doc;
    if (given("--config")) merge_file(cfg, config_path);
    if (given("--spec")) merge_file(cfg, spec_path);

    if (cfg.contains("command")) {
      if (!cfg["command"].is_string() || cfg["command"].get<std::string>() != command)
        throw gwhf::InvalidInput("config: field 'command' disagrees with the subcommand '" +
                                 command + "'");
    }
    cfg["command"] = command;
    rc.command = command;

    if (given("--graph")) section(cfg, "graph")["file"] = graph_path;
    if (given("--seed")) {
      if (seed < 0) throw gwhf::InvalidInput("flag --seed must be non-negative");
      Json& noise = section(cfg, "noise");
      noise.erase("seeds");
      noise["seed"] = seed;
    }
    if (given("--scheme")) section(cfg, "numerics")["scheme"] = scheme;
    if (given("--dt")) section(cfg, "numerics")["h"] = dt;
    if (given("--T")) section(cfg, "numerics")["T"] = t_end;
    if (given("--store-every")) section(cfg, "numerics")["store_every"] = store_every;
    if (given("--wz-delta")) section(cfg, "noise")["delta"] = wz_delta;
    if (given("--wz-dt")) section(cfg, "noise")["dt"] = wz_dt;
    if (given("--require-global")) cfg["require_global"] = true;
    if (given("--preset")) section(cfg, "preset")["kind"] = preset_kind;
    if (given("--sigma")) section(cfg, "preset")["sigma_file"] = sigma_file;
    if (given("--rho-a")) section(cfg, "control")["rho_a"] = parse_list(rho_a_text, "--rho-a");
    if (given("--rho-b")) section(cfg, "control")["rho_b"] = parse_list(rho_b_text, "--rho-b");
    if (given("--sigma-potential"))
      section(cfg, "control")["sigma"] = parse_list(sigma_text, "--sigma-potential");
    if (given("--epsilon")) section(cfg, "control")["epsilon"] = epsilon;
    if (given("--variant")) section(cfg, "control")["variant"] = variant;
    if (given("--M")) section(cfg, "control")["M"] = intervals;
    if (given("--tol-gap")) section(cfg, "control")["tol_gap"] = tol_gap;
    if (given("--rho")) section(cfg, "state")["rho0"] = parse_list(rho_text, "--rho");
    if (given("--tol")) section(cfg, "components")["tol"] = comp_tol;
    if (given("--out")) {
      const char* key = command == "control" ? "solution"
                        : command == "components" ? "components"
                        : command == "wz-study" || command == "gamma-study" ? "table"
                                                                            : "trajectory";
      section(cfg, "output")[key] = out_name;
    }
    if (given("--summary-out")) section(cfg, "output")["summary"] = summary_name;
    if (given("--noise-out")) section(cfg, "output")["noise"] = noise_name;
    if (given("--paths-out")) section(cfg, "output")["paths"] = paths_name;

    const int code = gwhf::run_command(rc);
    if (code == 4)
      return fail_json(4, "stopped", "a trajectory stopped before the horizon");
    return code;
  } catch (const gwhf::SolveFailure& e) {
    Json extra = Json::object();
    extra["gap"] = e.gap;
    extra["residual"] = e.residual;
    extra["iterations"] = e.iterations;
    return fail_json(3, "solver", e.what(), extra);
  } catch (const gwhf::IntegrationFailure& e) {
    return fail_json(3, "integration", e.what());
  } catch (const gwhf::InvalidInput& e) {
    return fail_json(2, "config", e.what());
  } catch (const gwhf::ConfigError& e) {
    return fail_json(2, "config", e.what());
  } catch (const gwhf::Error& e) {
    return fail_json(3, "error", e.what());
  } catch (const std::exception& e) {
    return fail_json(3, "internal", e.what());
  }
}
