// mflimits command line front end. Talks to the library only through the C API.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mflimits/mflimits.h"

namespace {

int exit_code(mfl_status st) {
  switch (st) {
    case MFL_OK: return 0;
    case MFL_CONFIG:
    case MFL_IO:
    case MFL_STOPPED: return 2;
    default: return 1;
  }
}

int fail(mfl_session* s, mfl_status st, const char* what) {
  std::fprintf(stderr, "mflimits %s: %s error: %s\n", what, mfl_status_name(st), s ? mfl_session_last_error(s) : "");
  return exit_code(st);
}

void log_line(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stationary mean field games on the circle: equilibria, social cost, targets and N-player trigger "
               "simulations"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file, preset;
  std::vector<std::string> sets;
  bool quiet = false;
  // flag name -> config key; values are forwarded verbatim
  const std::vector<std::pair<std::string, std::string>> mirrored = {
      {"--n-cells", "n_cells"},       {"--potential-cos", "potential_cos"}, {"--coupling", "coupling"},
      {"--coupling-cos", "coupling_cos"}, {"--coupling-weight", "coupling_weight"},
      {"--coupling-offset", "coupling_offset"}, {"--N", "N"}, {"--T", "T"}, {"--delta", "delta"},
      {"--epsilon", "epsilon"},       {"--margin", "margin"},        {"--dt", "dt"},
      {"--horizon", "horizon"},       {"--burn-in", "burn_in"},      {"--n-runs", "n_runs"},
      {"--deviation-runs", "deviation_runs"}, {"--check-interval", "check_interval"},
      {"--payoff-stride", "payoff_stride"}, {"--record-stride", "record_stride"}, {"--threads", "threads"},
      {"--seed", "seed"},             {"--sweep-N", "sweep_N"},      {"--sweep-runs", "sweep_runs"},
      {"--output-dir", "output_dir"}};
  std::map<std::string, std::string> values;
  app.add_option("--config", config_file, "key = value configuration file");
  app.add_option("--preset", preset, "paper-instance or flat");
  app.add_option("--set", sets, "extra key=value overrides");
  app.add_flag("-q,--quiet", quiet, "no progress output");
  for (const auto& [flag, key] : mirrored) {
    app.add_option(flag, values[key], "config key " + key);
  }

  std::map<std::string, CLI::App*> stages;
  stages["mfg"] = app.add_subcommand("mfg", "ergodic constant, MFG equilibrium and payoff band ends");
  stages["planner"] = app.add_subcommand("planner", "social planner: e_min and the optimal stationary pair");
  auto* pen = app.add_subcommand("penalized", "penalised planner for a given n, or the selected n");
  std::string pen_n;
  pen->add_option("--n", pen_n, "penalisation (default: selected automatically)");
  stages["penalized"] = pen;
  auto* tgt = app.add_subcommand("target", "stationary pair (m_hat, alpha_hat) with payoff e");
  std::string tgt_e;
  tgt->add_option("--e", tgt_e, "target payoff (default: midpoint of the band)");
  stages["target"] = tgt;
  stages["calibrate"] = app.add_subcommand("calibrate", "trigger tolerance delta for epsilon");
  stages["simulate"] = app.add_subcommand("simulate", "all-conform N-player simulation");
  stages["deviate"] = app.add_subcommand("deviate", "deviation suite");
  stages["sweep"] = app.add_subcommand("sweep-n", "e^N convergence table");
  auto* pipe = app.add_subcommand("pipeline", "every stage, with a hashed manifest");
  auto* self = app.add_subcommand("selftest", "fast built-in checks");
  double tolerance = 1e-10;
  self->add_option("--corrupt-tolerance", tolerance, "HJB tolerance for the solver checks (harness self-check)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (self->parsed()) {
    int pass = 0;
    const char* summary = nullptr;
    const mfl_status st = mfl_selftest(tolerance, &pass, &summary);
    if (st != MFL_OK) return fail(nullptr, st, "selftest");
    std::fputs(summary, stdout);
    return pass ? 0 : 1;
  }

  mfl_session* s = nullptr;
  mfl_status st = config_file.empty() ? mfl_session_create(preset.empty() ? nullptr : preset.c_str(), &s)
                                      : mfl_session_create_from_file(config_file.c_str(), &s);
  if (st != MFL_OK) {
    std::fprintf(stderr, "mflimits: cannot create session (%s)\n", mfl_status_name(st));
    return exit_code(st);
  }
  auto set = [&](const std::string& key, const std::string& value) {
    const mfl_status r = mfl_session_set(s, key.c_str(), value.c_str());
    if (r != MFL_OK) {
      std::fprintf(stderr, "mflimits: %s\n", mfl_session_last_error(s));
      std::exit(exit_code(r));
    }
  };
  if (!config_file.empty() && !preset.empty()) set("preset", preset);
  if (const char* env = std::getenv("MFL_OUTPUT_DIR"); env && *env) set("output_dir", env);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "mflimits: --set expects key=value, got '%s'\n", kv.c_str());
      return 2;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [flag, key] : mirrored) {
    if (app.count(flag) > 0) set(key, values[key]);
  }
  if (!pen_n.empty()) set("n_penalization", pen_n);
  if (!tgt_e.empty()) set("e", tgt_e);
  if (!quiet) mfl_session_set_logger(s, log_line, nullptr);

  int rc = 0;
  if (pipe->parsed()) {
    st = mfl_run_pipeline(s);
    if (st != MFL_OK) {
      rc = fail(s, st, "pipeline");
    } else {
      std::puts(mfl_session_result_json(s));
    }
  } else {
    for (const auto& [name, cmd] : stages) {
      if (!cmd->parsed()) continue;
      st = mfl_run_stage(s, name.c_str());
      if (st != MFL_OK) {
        rc = fail(s, st, name.c_str());
        break;
      }
      std::puts(mfl_session_result_json(s));
      const std::string dir = mfl_session_get(s, "output_dir");
      st = mfl_write_stage(s, name.c_str(), dir.c_str());
      if (st != MFL_OK) rc = fail(s, st, name.c_str());
    }
  }
  mfl_session_destroy(s);
  return rc;
}
