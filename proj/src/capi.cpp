#include "mflimits/mflimits.h"

#include <filesystem>
#include <memory>
#include <string>

#include "mflimits/errors.hpp"
#include "mflimits/experiment.hpp"
#include "mflimits/serialize.hpp"

struct mfl_session {
  mfl::ExperimentConfig cfg;
  std::unique_ptr<mfl::Experiment> ex;
  std::string error;
  std::string result;
  std::string config_text;
  mfl_log_fn log = nullptr;
  void* log_user = nullptr;

  mfl::Experiment& experiment() {
    if (!ex) {
      ex = std::make_unique<mfl::Experiment>(cfg);
      if (log) {
        ex->set_logger([fn = log, user = log_user](const std::string& m) { fn(m.c_str(), user); });
      }
    }
    return *ex;
  }
};

namespace {

template <class Fn>
mfl_status guarded(mfl_session* s, Fn&& fn) {
  try {
    fn();
    if (s) s->error.clear();
    return MFL_OK;
  } catch (const mfl::PipelineStop& e) {
    if (s) s->error = e.what();
    return MFL_STOPPED;
  } catch (const mfl::InvariantError& e) {
    if (s) s->error = e.what();
    return MFL_INVARIANT;
  } catch (const mfl::ConfigError& e) {
    if (s) s->error = e.what();
    return MFL_CONFIG;
  } catch (const mfl::SolverError& e) {
    if (s) s->error = e.what();
    return MFL_SOLVER;
  } catch (const std::filesystem::filesystem_error& e) {
    if (s) s->error = e.what();
    return MFL_IO;
  } catch (const std::exception& e) {
    if (s) s->error = e.what();
    return MFL_INTERNAL;
  } catch (...) {
    if (s) s->error = "unknown error";
    return MFL_INTERNAL;
  }
}

mfl_status create(mfl::ExperimentConfig cfg, mfl_session** out) {
  if (!out) return MFL_CONFIG;
  *out = nullptr;
  auto s = std::make_unique<mfl_session>();
  s->cfg = std::move(cfg);
  *out = s.release();
  return MFL_OK;
}

nlohmann::json stage_json(mfl::Experiment& ex, const std::string& stage) {
  if (stage == "mfg") return ex.mfg_json();
  if (stage == "planner") return ex.planner_json();
  if (stage == "penalized") return ex.penalized_json();
  if (stage == "target") return ex.target_json();
  if (stage == "calibrate") return ex.calibrate_json();
  if (stage == "simulate") return ex.simulate_json();
  if (stage == "deviate") return ex.deviate_json();
  if (stage == "sweep") return ex.sweep_json();
  throw mfl::ConfigError("unknown stage '" + stage + "'");
}

}  // namespace

extern "C" {

const char* mfl_version(void) { return "1.0.0"; }

const char* mfl_status_name(mfl_status status) {
  switch (status) {
    case MFL_OK: return "ok";
    case MFL_INVARIANT: return "invariant";
    case MFL_CONFIG: return "config";
    case MFL_SOLVER: return "solver";
    case MFL_IO: return "io";
    case MFL_STOPPED: return "stopped";
    case MFL_INTERNAL: return "internal";
  }
  return "unknown";
}

mfl_status mfl_session_create(const char* preset, mfl_session** out) {
  if (out) *out = nullptr;
  mfl::ExperimentConfig cfg;
  const mfl_status st = guarded(nullptr, [&] { cfg = mfl::ExperimentConfig::preset_config(preset ? preset : "paper-instance"); });
  if (st != MFL_OK) return st;
  return create(std::move(cfg), out);
}

mfl_status mfl_session_create_from_text(const char* config_text, mfl_session** out) {
  if (out) *out = nullptr;
  if (!config_text) return MFL_CONFIG;
  mfl::ExperimentConfig cfg;
  const mfl_status st = guarded(nullptr, [&] { cfg = mfl::ExperimentConfig::parse(config_text); });
  if (st != MFL_OK) return st;
  return create(std::move(cfg), out);
}

mfl_status mfl_session_create_from_file(const char* path, mfl_session** out) {
  if (out) *out = nullptr;
  if (!path) return MFL_CONFIG;
  if (!std::filesystem::exists(path)) return MFL_IO;
  mfl::ExperimentConfig cfg;
  const mfl_status st = guarded(nullptr, [&] { cfg = mfl::ExperimentConfig::load(path); });
  if (st != MFL_OK) return st;
  return create(std::move(cfg), out);
}

void mfl_session_destroy(mfl_session* session) { delete session; }

mfl_status mfl_session_set(mfl_session* s, const char* key, const char* value) {
  if (!s) return MFL_CONFIG;
  if (!key || !value) {
    s->error = "mfl_session_set: key and value must be non-null";
    return MFL_CONFIG;
  }
  return guarded(s, [&] {
    auto next = s->cfg;
    next.set(key, value);
    next.validate();
    s->cfg = std::move(next);
    s->ex.reset();
  });
}

void mfl_session_set_logger(mfl_session* s, mfl_log_fn fn, void* user) {
  if (!s) return;
  s->log = fn;
  s->log_user = user;
  s->ex.reset();
}

const char* mfl_session_last_error(const mfl_session* s) { return s ? s->error.c_str() : "null session"; }
const char* mfl_session_result_json(const mfl_session* s) { return s ? s->result.c_str() : ""; }

const char* mfl_session_config_text(mfl_session* s) {
  if (!s) return "";
  s->config_text = s->cfg.to_text();
  return s->config_text.c_str();
}

const char* mfl_session_get(mfl_session* s, const char* key) {
  if (!s || !key) return "";
  const std::string text = s->cfg.to_text();
  const std::string prefix = std::string(key) + " = ";
  s->config_text.clear();
  for (std::size_t at = 0; at < text.size();) {
    const auto end = text.find('\n', at);
    const std::string line = text.substr(at, end - at);
    if (line.rfind(prefix, 0) == 0) {
      s->config_text = line.substr(prefix.size());
      break;
    }
    at = end + 1;
  }
  return s->config_text.c_str();
}

mfl_status mfl_run_stage(mfl_session* s, const char* stage) {
  if (!s) return MFL_CONFIG;
  if (!stage) {
    s->error = "mfl_run_stage: stage must be non-null";
    return MFL_CONFIG;
  }
  return guarded(s, [&] { s->result = stage_json(s->experiment(), stage).dump(2); });
}

mfl_status mfl_run_mfg(mfl_session* s) { return mfl_run_stage(s, "mfg"); }
mfl_status mfl_run_planner(mfl_session* s) { return mfl_run_stage(s, "planner"); }
mfl_status mfl_run_penalized(mfl_session* s) { return mfl_run_stage(s, "penalized"); }
mfl_status mfl_run_target(mfl_session* s) { return mfl_run_stage(s, "target"); }
mfl_status mfl_run_calibrate(mfl_session* s) { return mfl_run_stage(s, "calibrate"); }
mfl_status mfl_run_simulate(mfl_session* s) { return mfl_run_stage(s, "simulate"); }
mfl_status mfl_run_deviate(mfl_session* s) { return mfl_run_stage(s, "deviate"); }
mfl_status mfl_run_sweep(mfl_session* s) { return mfl_run_stage(s, "sweep"); }

mfl_status mfl_write_stage(mfl_session* s, const char* stage, const char* dir) {
  if (!s) return MFL_CONFIG;
  if (!stage || !dir) {
    s->error = "mfl_write_stage: stage and dir must be non-null";
    return MFL_CONFIG;
  }
  return guarded(s, [&] {
    const auto files = mfl::write_stage(s->experiment(), stage, dir);
    s->result = nlohmann::json{{"stage", stage}, {"dir", dir}, {"files", files}}.dump(2);
  });
}

mfl_status mfl_run_pipeline(mfl_session* s) {
  if (!s) return MFL_CONFIG;
  return guarded(s, [&] {
    std::function<void(const std::string&)> log;
    if (s->log) log = [fn = s->log, user = s->log_user](const std::string& m) { fn(m.c_str(), user); };
    const auto rep = mfl::run_pipeline(s->cfg, log);
    nlohmann::json files = nlohmann::json::array();
    for (const auto& a : rep.artifacts) files.push_back({{"file", a.file}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    s->result = nlohmann::json{{"status", rep.status},
                               {"stages", rep.stages},
                               {"output_dir", s->cfg.output_dir},
                               {"artifacts", files},
                               {"summary", rep.summary}}
                    .dump(2);
  });
}

mfl_status mfl_verify_manifest(const char* dir, int* n_bad) {
  if (!dir || !n_bad) return MFL_CONFIG;
  if (!std::filesystem::exists(std::filesystem::path(dir) / "manifest.json")) return MFL_IO;
  return guarded(nullptr, [&] { *n_bad = static_cast<int>(mfl::verify_manifest(dir).size()); });
}

mfl_status mfl_selftest(double hjb_tolerance, int* pass, const char** summary) {
  thread_local std::string text;
  if (!(hjb_tolerance > 0.0)) return MFL_CONFIG;
  return guarded(nullptr, [&] {
    mfl::SelftestOptions o;
    o.hjb_tolerance = hjb_tolerance;
    const auto rep = mfl::selftest(o);
    text = rep.summary();
    if (pass) *pass = rep.pass() ? 1 : 0;
    if (summary) *summary = text.c_str();
  });
}

double mfl_project_to_torus(double x) { return mfl::project_to_torus(x); }

mfl_status mfl_wasserstein1_circle(const double* mu, const double* nu, int n, double* out) {
  if (!mu || !nu || !out) return MFL_CONFIG;
  return guarded(nullptr, [&] {
    const mfl::TorusGrid g(n);
    const mfl::ProbabilityGrid a(g, std::vector<double>(mu, mu + n));
    const mfl::ProbabilityGrid b(g, std::vector<double>(nu, nu + n));
    *out = mfl::wasserstein1_circle(a, b);
  });
}

}  // extern "C"
