#include "mflimits/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <openssl/evp.h>

#include "mflimits/errors.hpp"
#include "mflimits/serialize.hpp"

namespace mfl {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || !std::isfinite(out)) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

long parse_long(const std::string& key, const std::string& v) {
  long out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  const long x = parse_long(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
    throw ConfigError("config: '" + key + "' is out of range");
  }
  return static_cast<int>(x);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + std::to_string(v[i]);
  return out;
}

std::optional<double> parse_auto(const std::string& key, const std::string& v, const char* word) {
  if (v == word) return std::nullopt;
  return parse_double(key, v);
}

}  // namespace

ExperimentConfig ExperimentConfig::preset_config(const std::string& name) {
  ExperimentConfig c;
  if (name == "paper-instance") return c;
  if (name == "flat") {
    c.preset = "flat";
    c.potential_cos.clear();
    c.coupling = "linear";
    c.coupling_cos.clear();
    c.coupling_weight = 1.0;
    return c;
  }
  throw ConfigError("config: unknown preset '" + name + "' (expected paper-instance or flat)");
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "preset") *this = preset_config(v);
  else if (key == "n_cells") n_cells = parse_int(key, v);
  else if (key == "potential_const") potential_const = parse_double(key, v);
  else if (key == "potential_cos") potential_cos = parse_doubles(key, v);
  else if (key == "potential_sin") potential_sin = parse_doubles(key, v);
  else if (key == "coupling") coupling = v;
  else if (key == "coupling_const") coupling_const = parse_double(key, v);
  else if (key == "coupling_cos") coupling_cos = parse_doubles(key, v);
  else if (key == "coupling_sin") coupling_sin = parse_doubles(key, v);
  else if (key == "coupling_weight") coupling_weight = parse_double(key, v);
  else if (key == "coupling_offset") coupling_offset = parse_auto(key, v, "auto");
  else if (key == "e") e = parse_auto(key, v, "midpoint");
  else if (key == "N") N = parse_int(key, v);
  else if (key == "T") T = parse_double(key, v);
  else if (key == "delta") delta = parse_auto(key, v, "auto");
  else if (key == "epsilon") epsilon = parse_double(key, v);
  else if (key == "n_penalization") n_penalization = parse_auto(key, v, "auto");
  else if (key == "margin") margin = parse_double(key, v);
  else if (key == "dt") dt = parse_double(key, v);
  else if (key == "horizon") horizon = parse_double(key, v);
  else if (key == "burn_in") burn_in = parse_double(key, v);
  else if (key == "n_runs") n_runs = parse_int(key, v);
  else if (key == "deviation_runs") deviation_runs = parse_int(key, v);
  else if (key == "check_interval") check_interval = parse_double(key, v);
  else if (key == "payoff_stride") payoff_stride = parse_int(key, v);
  else if (key == "record_stride") record_stride = parse_long(key, v);
  else if (key == "threads") threads = parse_int(key, v);
  else if (key == "seed") {
    const long s = parse_long(key, v);
    if (s < 0) throw ConfigError("config: seed must be nonnegative");
    seed = static_cast<std::uint64_t>(s);
  } else if (key == "sweep_N") {
    sweep_N.clear();
    for (const auto& s : split_list(v)) sweep_N.push_back(parse_int(key, s));
  } else if (key == "sweep_runs") sweep_runs = parse_int(key, v);
  else if (key == "output_dir") output_dir = v;
  else throw ConfigError("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  ExperimentConfig c;
  for (const auto& [k, v] : entries) {
    if (k == "preset") c.set(k, v);
  }
  for (const auto& [k, v] : entries) {
    if (k != "preset") c.set(k, v);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_text_file(path));
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  auto opt = [](const std::optional<double>& v, const char* word) { return v ? format_double(*v) : std::string(word); };
  o << "preset = " << preset << '\n'
    << "n_cells = " << n_cells << '\n'
    << "potential_const = " << format_double(potential_const) << '\n'
    << "potential_cos = " << join(potential_cos) << '\n'
    << "potential_sin = " << join(potential_sin) << '\n'
    << "coupling = " << coupling << '\n'
    << "coupling_const = " << format_double(coupling_const) << '\n'
    << "coupling_cos = " << join(coupling_cos) << '\n'
    << "coupling_sin = " << join(coupling_sin) << '\n'
    << "coupling_weight = " << format_double(coupling_weight) << '\n'
    << "coupling_offset = " << opt(coupling_offset, "auto") << '\n'
    << "e = " << opt(e, "midpoint") << '\n'
    << "N = " << N << '\n'
    << "T = " << format_double(T) << '\n'
    << "delta = " << opt(delta, "auto") << '\n'
    << "epsilon = " << format_double(epsilon) << '\n'
    << "n_penalization = " << opt(n_penalization, "auto") << '\n'
    << "margin = " << format_double(margin) << '\n'
    << "dt = " << format_double(dt) << '\n'
    << "horizon = " << format_double(horizon) << '\n'
    << "burn_in = " << format_double(burn_in) << '\n'
    << "n_runs = " << n_runs << '\n'
    << "deviation_runs = " << deviation_runs << '\n'
    << "check_interval = " << format_double(check_interval) << '\n'
    << "payoff_stride = " << payoff_stride << '\n'
    << "record_stride = " << record_stride << '\n'
    << "threads = " << threads << '\n'
    << "seed = " << seed << '\n'
    << "sweep_N = " << join(sweep_N) << '\n'
    << "sweep_runs = " << sweep_runs << '\n'
    << "output_dir = " << output_dir << '\n';
  return o.str();
}

void ExperimentConfig::validate() const {
  if (n_cells < TorusGrid::kMinCells) throw ConfigError("config: n_cells must be at least 8");
  if (coupling != "convolution" && coupling != "linear") {
    throw ConfigError("config: coupling must be 'convolution' or 'linear'");
  }
  if (coupling == "convolution" && !coupling_sin.empty()) {
    throw ConfigError("config: a convolution kernel must be even (coupling_sin must be empty)");
  }
  if (coupling_offset && *coupling_offset < 0.0) throw ConfigError("config: coupling_offset must be >= 0");
  if (N < 2) throw ConfigError("config: N must be at least 2");
  if (!(T > 0.0)) throw ConfigError("config: T must be positive");
  if (delta && !(*delta > 0.0)) throw ConfigError("config: delta must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("config: epsilon must be positive");
  if (n_penalization && !(*n_penalization > 0.0)) throw ConfigError("config: n_penalization must be positive");
  if (!(margin >= 0.0)) throw ConfigError("config: margin must be >= 0");
  if (deviation_runs < 1) throw ConfigError("config: deviation_runs must be positive");
  if (!(check_interval > 0.0)) throw ConfigError("config: check_interval must be positive");
  if (sweep_runs < 0) throw ConfigError("config: sweep_runs must be >= 0");
  for (std::size_t i = 0; i < sweep_N.size(); ++i) {
    if (sweep_N[i] < 2) throw ConfigError("config: sweep_N entries must be at least 2");
    if (i && sweep_N[i] <= sweep_N[i - 1]) throw ConfigError("config: sweep_N must be ascending");
  }
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  sim_config(N, n_runs).validate();
}

SimConfig ExperimentConfig::sim_config(int N_players, int runs) const {
  SimConfig s;
  s.N = N_players;
  s.dt = dt;
  s.horizon = horizon;
  s.burn_in = burn_in;
  s.n_runs = runs;
  s.seed = seed;
  s.payoff_stride = payoff_stride;
  s.record_stride = record_stride;
  s.threads = threads;
  return s;
}

std::string deviation_csv(const DeviationReport& report) {
  std::string out = "policy,payoff,stderr,p_trigger,eN,bound,pass\n";
  for (const auto& r : report.rows) {
    out += r.policy + ',' + format_double(r.payoff) + ',' + format_double(r.stderr_) + ',' +
           format_double(r.p_trigger) + ',' + format_double(report.eN) + ',' + format_double(r.bound) + ',' +
           (r.pass ? "1" : "0") + '\n';
  }
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "N,eN,gap,predicted_bias,mc_eN,mc_stderr,simulated,simulated_stderr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.N) + ',' + format_double(r.eN) + ',' + format_double(r.gap) + ',' +
           format_double(r.predicted_bias) + ',' + format_double(r.mc_eN) + ',' + format_double(r.mc_stderr) + ',' +
           (std::isnan(r.simulated) ? std::string("") : format_double(r.simulated)) + ',' +
           (std::isnan(r.simulated) ? std::string("") : format_double(r.simulated_stderr)) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Lagrangian make_lagrangian(const ExperimentConfig& c) {
  const TorusGrid g(c.n_cells);
  TrigSeries l{c.potential_const, c.potential_cos, c.potential_sin};
  return Lagrangian(l.sample(g));
}

CouplingFunctional make_coupling(const ExperimentConfig& c) {
  const TorusGrid g(c.n_cells);
  if (c.coupling == "linear") {
    TrigSeries s{c.coupling_const, c.coupling_cos, c.coupling_sin};
    GridField f = s.sample(g);
    for (int i = 0; i < g.size(); ++i) f[i] *= c.coupling_weight;
    return CouplingFunctional::linear(std::move(f), c.coupling_offset);
  }
  TrigSeries k{c.coupling_const, c.coupling_cos, {}};
  return CouplingFunctional::convolution(g, k, c.coupling_weight, c.coupling_offset);
}

}  // namespace

struct Experiment::State {
  ExperimentConfig cfg;
  Lagrangian L;
  CouplingFunctional F;
  std::function<void(const std::string&)> log;

  std::optional<MfgEquilibrium> mfg;
  std::optional<PlannerSolution> planner;
  std::optional<double> e_target;
  std::optional<PenalizedSolution> penalized;
  std::vector<SelectionRow> rows;
  std::optional<TargetPair> target;
  std::optional<EnResult> eN;
  std::optional<Calibration> calibration;
  std::optional<double> delta;
  std::optional<SimReport> simulate;
  std::optional<DeviationReport> deviate;
  std::optional<std::vector<SweepRow>> sweep;

  explicit State(ExperimentConfig c) : cfg(std::move(c)), L(make_lagrangian(cfg)), F(make_coupling(cfg)) {}

  void note(const std::string& msg) const {
    if (log) log(msg);
  }
};

Experiment::Experiment(ExperimentConfig cfg) {
  cfg.validate();
  s_ = std::make_unique<State>(std::move(cfg));
}

Experiment::~Experiment() = default;

const ExperimentConfig& Experiment::config() const noexcept { return s_->cfg; }
const Lagrangian& Experiment::lagrangian() const noexcept { return s_->L; }
const CouplingFunctional& Experiment::coupling() const noexcept { return s_->F; }
void Experiment::set_logger(std::function<void(const std::string&)> log) { s_->log = std::move(log); }

const MfgEquilibrium& Experiment::mfg() {
  if (!s_->mfg) {
    s_->note("mfg: solving the ergodic HJB");
    s_->mfg = solve_mfg(s_->L, s_->F);
  }
  return *s_->mfg;
}

const PlannerSolution& Experiment::planner() {
  if (!s_->planner) {
    s_->note("planner: fixed point with multistart");
    s_->planner = solve_planner(s_->L, s_->F);
  }
  return *s_->planner;
}

double Experiment::target_payoff() {
  if (!s_->e_target) {
    const double e_min = planner().value();
    const double e_max = mfg().e_max;
    if (s_->F.is_constant() || !(e_max - e_min > 1e-9)) {
      throw PipelineStop("empty payoff band: e_min = " + format_double(e_min) + " and e_max = " +
                         format_double(e_max) + " coincide because F is constant; every stationary profile has "
                         "the same payoff, so there is no target to construct");
    }
    const double e = s_->cfg.e.value_or(0.5 * (e_min + e_max));
    if (!(e >= e_min - 1e-9 && e < e_max)) {
      throw ConfigError("target payoff e = " + format_double(e) + " lies outside [e_min, e_max) = [" +
                        format_double(e_min) + ", " + format_double(e_max) + ")");
    }
    s_->e_target = e;
  }
  return *s_->e_target;
}

const PenalizedSolution& Experiment::penalized() {
  if (!s_->penalized) {
    const double e = target_payoff();
    if (s_->cfg.n_penalization) {
      s_->note("penalized: n = " + format_double(*s_->cfg.n_penalization));
      s_->penalized = solve_penalized(*s_->cfg.n_penalization, s_->L, s_->F);
    } else {
      s_->note("penalized: walking the n ladder");
      SelectionOptions so;
      so.margin = s_->cfg.margin;
      auto sel = select_penalization(e, s_->cfg.N, mfg().lambda0, mfg().e_max, s_->L, s_->F, planner(), so);
      s_->rows = std::move(sel.rows);
      s_->target = std::move(sel.target);
      s_->eN = std::move(sel.eN);
      s_->penalized = std::move(sel.penalized);
    }
  }
  return *s_->penalized;
}

const std::vector<SelectionRow>& Experiment::selection_rows() {
  penalized();
  return s_->rows;
}

const TargetPair& Experiment::target() {
  if (!s_->target) {
    const auto& pen = penalized();
    if (!s_->target) {
      s_->note("target: bisection on the homotopy");
      s_->target = build_target(target_payoff(), s_->L, s_->F, planner(), pen);
    }
  }
  return *s_->target;
}

const EnResult& Experiment::eN() {
  if (!s_->eN) s_->eN = compute_eN(s_->cfg.N, target(), s_->F);
  return *s_->eN;
}

double Experiment::delta() {
  if (!s_->delta) {
    if (s_->cfg.delta) {
      s_->delta = *s_->cfg.delta;
    } else {
      s_->note("calibrate: sampling perturbations of m_hat");
      s_->calibration = calibrate_delta(s_->cfg.epsilon, target(), s_->L);
      s_->delta = s_->calibration->delta;
    }
  }
  return *s_->delta;
}

const Calibration* Experiment::calibration() {
  delta();
  return s_->calibration ? &*s_->calibration : nullptr;
}

namespace {

TriggerParams trigger_params(Experiment& ex) {
  return TriggerParams{ex.config().T, ex.delta(), ex.target().alpha_hat, ex.penalized().alpha, ex.target().m_hat,
                       ex.config().check_interval};
}

}  // namespace

const SimReport& Experiment::simulate() {
  if (!s_->simulate) {
    const auto params = trigger_params(*this);
    const auto cfg = s_->cfg.sim_config(s_->cfg.N, s_->cfg.n_runs);
    s_->note("simulate: " + std::to_string(cfg.n_runs) + " runs of " + std::to_string(cfg.N) + " players");
    s_->simulate = estimate_payoffs(cfg, s_->L, s_->F, params, DeviationPolicy::conform(s_->L.grid()),
                                    penalized().m, [this](const RunRecord& r) {
                                      s_->note("  run " + std::to_string(r.run) + " payoff " +
                                               format_double(r.players[0].payoff));
                                    });
  }
  return *s_->simulate;
}

const DeviationReport& Experiment::deviate() {
  if (!s_->deviate) {
    const auto& conform = simulate();
    DeviationReport rep;
    rep.eN = eN().eN;
    rep.epsilon = s_->cfg.epsilon;

    DeviationRow c{"conform", conform.players[0].mean, conform.players[0].stderr_, conform.p_trigger};
    bool all = true;
    double worst = 0.0;
    for (const auto& p : conform.players) {
      const double slack = std::abs(p.mean - rep.eN) - (rep.epsilon + 3.0 * p.stderr_);
      worst = std::max(worst, std::abs(p.mean - rep.eN));
      all = all && slack <= 0.0;
    }
    c.bound = worst;
    c.pass = all;
    rep.rows.push_back(c);
    rep.reports.push_back(conform);

    const TorusGrid& g = s_->L.grid();
    const auto params = trigger_params(*this);
    const auto cfg = s_->cfg.sim_config(s_->cfg.N, s_->cfg.deviation_runs);
    for (const auto& dev : {DeviationPolicy::selfish(GridDrift::minus_gradient(mfg().u0)), DeviationPolicy::lazy(g),
                            DeviationPolicy::planner(planner().alpha)}) {
      s_->note("deviate: " + dev.name);
      auto r = estimate_payoffs(cfg, s_->L, s_->F, params, dev, penalized().m);
      DeviationRow row{dev.name, r.players[0].mean, r.players[0].stderr_, r.p_trigger};
      row.bound = rep.eN - rep.epsilon - 3.0 * row.stderr_;
      row.pass = row.payoff >= row.bound;
      rep.rows.push_back(row);
      rep.reports.push_back(std::move(r));
    }
    s_->deviate = std::move(rep);
  }
  return *s_->deviate;
}

const std::vector<SweepRow>& Experiment::sweep() {
  if (!s_->sweep) {
    const auto& t = target();
    const double single = expected_empirical_F(s_->F, t.m_hat, 1);
    const double e = target_payoff();
    std::vector<SweepRow> rows;
    for (int N : s_->cfg.sweep_N) {
      s_->note("sweep: N = " + std::to_string(N));
      SweepRow r;
      r.N = N;
      r.eN = compute_eN(N, t, s_->F).eN;
      r.gap = std::abs(r.eN - e);
      r.predicted_bias = (single - t.F_value) / (N - 1);
      const auto mc = compute_eN(N, t, s_->F, EnMethod::MonteCarlo, 40000, s_->cfg.seed + static_cast<unsigned>(N));
      r.mc_eN = mc.eN;
      r.mc_stderr = mc.stderr_;
      r.simulated = std::numeric_limits<double>::quiet_NaN();
      if (s_->cfg.sweep_runs > 0) {
        auto cfg = s_->cfg.sim_config(N, s_->cfg.sweep_runs);
        cfg.record_stride = 0;
        auto rep = estimate_payoffs(cfg, s_->L, s_->F, trigger_params(*this), DeviationPolicy::conform(t.m_hat.grid()),
                                    penalized().m);
        double mean = 0.0, se2 = 0.0;
        for (const auto& p : rep.players) {
          mean += p.mean;
          se2 += p.stderr_ * p.stderr_;
        }
        r.simulated = mean / N;
        r.simulated_stderr = std::sqrt(se2) / N;
      }
      rows.push_back(r);
    }
    s_->sweep = std::move(rows);
  }
  return *s_->sweep;
}

// ---------------------------------------------------------------------------

nlohmann::json Experiment::mfg_json() {
  const auto& m = mfg();
  return {{"lambda0", m.lambda0},          {"F_mu0", m.F_mu0},
          {"e_mfg", m.e_mfg},              {"e_max", m.e_max},
          {"e_max_certified", m.e_max_certified}, {"e_max_method", m.e_max_method},
          {"hjb_residual", m.hjb_residual}, {"fp_residual", m.fp_residual},
          {"hjb_iterations", m.hjb_iterations}, {"lagrangian_offset", s_->L.offset()},
          {"coupling_offset", s_->F.offset()}};
}

namespace {

nlohmann::json fixed_points_json(const CoupledSolution& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : s.fixed_points) {
    arr.push_back({{"start", f.start},
                   {"iterations", f.iterations},
                   {"converged", f.converged},
                   {"polished", f.polished},
                   {"w1_gap", f.w1_gap},
                   {"objective", f.objective},
                   {"F_value", f.F_value}});
  }
  return arr;
}

}  // namespace

nlohmann::json Experiment::planner_json() {
  const auto& p = planner();
  const auto& m = mfg();
  return {{"e_min", p.value()},
          {"kinetic", p.kinetic},
          {"F_value", p.F_value},
          {"lambda", p.lambda},
          {"hjb_residual", p.hjb_residual},
          {"fp_residual", p.fp_residual},
          {"max_drift", p.alpha.max_abs()},
          {"e_mfg", m.e_mfg},
          {"e_max", m.e_max},
          {"gap_mfg_minus_min", m.e_mfg - p.value()},
          {"fixed_points", fixed_points_json(p)}};
}

nlohmann::json Experiment::penalized_json() {
  const auto& p = penalized();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : selection_rows()) {
    rows.push_back({{"n", r.n},
                    {"penalized_value", r.penalized_value},
                    {"bracketed", r.bracketed},
                    {"eN", r.eN},
                    {"bound", r.bound},
                    {"satisfied", r.satisfied}});
  }
  return {{"n", p.penalization()},
          {"selected", !s_->cfg.n_penalization.has_value()},
          {"value", p.value()},
          {"kinetic", p.kinetic},
          {"F_value", p.F_value},
          {"objective", p.objective},
          {"max_drift", p.alpha.max_abs()},
          {"drift_cap_exceeded", !p.alpha.within_cap(kDriftCap)},
          {"hjb_residual", p.hjb_residual},
          {"fp_residual", p.fp_residual},
          {"E_F_empirical_N_minus_1", expected_empirical_F(s_->F, p.m, s_->cfg.N - 1)},
          {"selection", rows},
          {"fixed_points", fixed_points_json(p)}};
}

nlohmann::json Experiment::target_json() {
  const auto& t = target();
  const auto& en = eN();
  const auto od = optimal_stationary_drift(t.m_hat, s_->L);
  double reproduce = 0.0;
  for (int i = 0; i < t.alpha_hat.size(); ++i) reproduce = std::max(reproduce, std::abs(od.alpha[i] - t.alpha_hat[i]));
  const auto check = homotopy_at(s_->L, s_->F, planner(), penalized(), t.lambda_star);
  return {{"e", t.e},
          {"lambda_star", t.lambda_star},
          {"value", t.value},
          {"value_recomputed", check.value()},
          {"kinetic", t.kinetic},
          {"F_value", t.F_value},
          {"bisections", t.bisections},
          {"penalization", t.penalization},
          {"max_drift", t.alpha_hat.max_abs()},
          {"drift_cap_exceeded", !t.alpha_hat.within_cap(kDriftCap)},
          {"min_density", t.m_hat.min()},
          {"optimal_drift_reproduction", reproduce},
          {"N", en.N},
          {"eN", en.eN},
          {"eN_method", en.method},
          {"w1_uniform_m_hat", wasserstein1_circle(ProbabilityGrid::uniform(t.m_hat.grid()), t.m_hat)}};
}

nlohmann::json Experiment::calibrate_json() {
  const double d = delta();
  const Calibration* c = calibration();
  nlohmann::json j = {{"delta", d}, {"source", c ? "calibrated" : "config"}, {"epsilon", s_->cfg.epsilon}};
  if (c) {
    j["base_cost"] = c->base_cost;
    j["samples"] = c->samples.size();
    j["holdout"] = c->holdout.size();
    j["holdout_checked"] = c->holdout_checked;
    j["holdout_violations"] = c->holdout_violations;
    j["heuristic"] = c->heuristic;
  }
  return j;
}

namespace {

nlohmann::json sim_json(const SimReport& r, double eN) {
  double mean = 0.0, max_w1 = 0.0, max_pw1 = -1.0;
  for (const auto& p : r.players) mean += p.mean;
  mean /= static_cast<double>(r.players.size());
  for (const auto& run : r.runs) {
    for (const auto& p : run.players) {
      max_w1 = std::max(max_w1, p.occupation_w1);
      max_pw1 = std::max(max_pw1, p.punished_w1);
    }
  }
  nlohmann::json thetas = nlohmann::json::array();
  for (const auto& run : r.runs) thetas.push_back(run.theta < kNever ? nlohmann::json(run.theta) : nlohmann::json());
  return {{"policy", r.policy},
          {"n_runs", r.players.empty() ? 0 : r.players[0].n_runs},
          {"player1_payoff", r.players[0].mean},
          {"player1_stderr", r.players[0].stderr_},
          {"mean_payoff_all_players", mean},
          {"eN", eN},
          {"p_trigger", r.p_trigger},
          {"max_occupation_w1", max_w1},
          {"max_punished_w1", max_pw1},
          {"theta", thetas}};
}

}  // namespace

nlohmann::json Experiment::simulate_json() {
  auto j = sim_json(simulate(), eN().eN);
  j["delta"] = delta();
  j["T"] = s_->cfg.T;
  return j;
}

nlohmann::json Experiment::deviate_json() {
  const auto& d = deviate();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < d.rows.size(); ++k) {
    const auto& r = d.rows[k];
    auto j = sim_json(d.reports[k], d.eN);
    j["bound"] = r.bound;
    j["pass"] = r.pass;
    rows.push_back(j);
  }
  return {{"eN", d.eN}, {"epsilon", d.epsilon}, {"rows", rows}};
}

nlohmann::json Experiment::sweep_json() {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : sweep()) {
    rows.push_back({{"N", r.N},
                    {"eN", r.eN},
                    {"gap", r.gap},
                    {"predicted_bias", r.predicted_bias},
                    {"mc_eN", r.mc_eN},
                    {"mc_stderr", r.mc_stderr}});
  }
  return {{"e", target_payoff()}, {"rows", rows}};
}

// ---------------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw InvariantError("SHA-256 computation failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

namespace {

std::string runs_jsonl(const SimReport& r) { return run_records_jsonl(r); }

std::string calibration_csv(const Calibration& c) {
  std::string out = "set,s,spike,w1,cost\n";
  auto rows = [&](const char* name, const std::vector<CalibrationSample>& v) {
    for (const auto& s : v) {
      out += std::string(name) + ',' + format_double(s.s) + ',' + (s.spike ? "1" : "0") + ',' + format_double(s.w1) +
             ',' + format_double(s.cost) + '\n';
    }
  };
  rows("sample", c.samples);
  rows("holdout", c.holdout);
  return out;
}

std::string selection_csv(const std::vector<SelectionRow>& rows) {
  std::string out = "n,penalized_value,bracketed,eN,bound,satisfied\n";
  for (const auto& r : rows) {
    out += format_double(r.n) + ',' + format_double(r.penalized_value) + ',' + (r.bracketed ? "1" : "0") + ',' +
           format_double(r.eN) + ',' + format_double(r.bound) + ',' + (r.satisfied ? "1" : "0") + '\n';
  }
  return out;
}

void put(std::vector<std::string>& names, const std::filesystem::path& dir, const std::string& name,
         const std::string& text) {
  write_text_file(dir / name, text);
  names.push_back(name);
}

}  // namespace

std::vector<std::string> write_stage(Experiment& ex, const std::string& stage, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> n;
  put(n, dir, "config.txt", ex.config().to_text());
  if (stage == "mfg") {
    const auto& m = ex.mfg();
    put(n, dir, "mfg.json", ex.mfg_json().dump(2) + '\n');
    put(n, dir, "u0.csv", to_csv(m.u0));
    put(n, dir, "mu0.csv", to_csv(m.mu0));
  } else if (stage == "planner") {
    const auto& p = ex.planner();
    put(n, dir, "planner.json", ex.planner_json().dump(2) + '\n');
    put(n, dir, "u_tilde.csv", to_csv(p.u));
    put(n, dir, "m_tilde.csv", to_csv(p.m));
    put(n, dir, "alpha_tilde.csv", to_csv(p.alpha));
  } else if (stage == "penalized") {
    const auto& p = ex.penalized();
    put(n, dir, "penalized.json", ex.penalized_json().dump(2) + '\n');
    put(n, dir, "selection.csv", selection_csv(ex.selection_rows()));
    put(n, dir, "m_n.csv", to_csv(p.m));
    put(n, dir, "alpha_n.csv", to_csv(p.alpha));
  } else if (stage == "target") {
    const auto& t = ex.target();
    put(n, dir, "target.json", ex.target_json().dump(2) + '\n');
    put(n, dir, "m_hat.csv", to_csv(t.m_hat));
    put(n, dir, "alpha_hat.csv", to_csv(t.alpha_hat));
    put(n, dir, "homotopy.csv",
        curve_csv(homotopy_curve(ex.lagrangian(), ex.coupling(), ex.planner(), ex.penalized())));
  } else if (stage == "calibrate") {
    put(n, dir, "calibrate.json", ex.calibrate_json().dump(2) + '\n');
    if (const auto* c = ex.calibration()) put(n, dir, "calibration_samples.csv", calibration_csv(*c));
  } else if (stage == "simulate") {
    const auto& r = ex.simulate();
    put(n, dir, "simulate.json", ex.simulate_json().dump(2) + '\n');
    put(n, dir, "simulate_payoffs.csv", payoff_csv(r));
    put(n, dir, "simulate_runs.jsonl", runs_jsonl(r));
    if (!r.recording.empty()) put(n, dir, "recording.csv", recording_csv(r.recording));
  } else if (stage == "deviate") {
    const auto& d = ex.deviate();
    put(n, dir, "deviate.json", ex.deviate_json().dump(2) + '\n');
    put(n, dir, "deviation.csv", deviation_csv(d));
    for (std::size_t k = 1; k < d.reports.size(); ++k) {
      put(n, dir, "deviate_" + d.reports[k].policy + "_runs.jsonl", runs_jsonl(d.reports[k]));
    }
  } else if (stage == "sweep") {
    put(n, dir, "sweep.json", ex.sweep_json().dump(2) + '\n');
    put(n, dir, "sweep_n.csv", sweep_csv(ex.sweep()));
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  return n;
}

namespace {

template <class E>
[[noreturn]] void rethrow_with_stage(const std::string& stage, const E& err) {
  throw E("stage " + stage + ": " + err.what());
}

}  // namespace

PipelineReport run_pipeline(const ExperimentConfig& cfg, std::function<void(const std::string&)> log) {
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  Experiment ex(cfg);
  if (log) ex.set_logger(log);

  PipelineReport rep;
  rep.status = "complete";
  std::vector<std::string> files;

  for (const char* stage : {"mfg", "planner", "penalized", "target", "calibrate", "simulate", "deviate", "sweep"}) {
    if (log) log(std::string("== ") + stage);
    try {
      auto names = write_stage(ex, stage, dir);
      files.insert(files.end(), names.begin(), names.end());
      rep.stages.emplace_back(stage);
    } catch (const PipelineStop& stop) {
      rep.status = std::string("stopped at ") + stage + ": " + stop.what();
      break;
    } catch (const SolverError& err) {
      throw SolverError("stage " + std::string(stage) + ": " + err.what(), err.residual_history());
    } catch (const InvariantError& err) {
      rethrow_with_stage(stage, err);
    } catch (const ConfigError& err) {
      rethrow_with_stage(stage, err);
    }
  }

  nlohmann::json summary = {{"status", rep.status}, {"stages", rep.stages}};
  for (const auto& st : rep.stages) {
    if (st == "mfg") summary["mfg"] = ex.mfg_json();
    if (st == "planner") summary["planner"] = ex.planner_json();
    if (st == "penalized") summary["penalized"] = ex.penalized_json();
    if (st == "target") summary["target"] = ex.target_json();
    if (st == "calibrate") summary["calibrate"] = ex.calibrate_json();
    if (st == "simulate") summary["simulate"] = ex.simulate_json();
    if (st == "deviate") summary["deviate"] = ex.deviate_json();
    if (st == "sweep") summary["sweep"] = ex.sweep_json();
  }
  rep.summary = summary;
  put(files, dir, "report.json", summary.dump(2) + '\n');

  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& f : files) {
    const std::string text = read_text_file(dir / f);
    Artifact a{f, sha256_hex(text), text.size()};
    manifest.push_back({{"file", a.file}, {"sha256", a.sha256}, {"bytes", a.bytes}});
    rep.artifacts.push_back(std::move(a));
  }
  write_text_file(dir / "manifest.json", nlohmann::json{{"files", manifest}}.dump(2) + '\n');
  return rep;
}

std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
  const auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  std::vector<std::string> bad;
  for (const auto& f : j.at("files")) {
    const auto name = f.at("file").get<std::string>();
    const auto path = dir / name;
    if (!std::filesystem::exists(path) || sha256_hex(read_text_file(path)) != f.at("sha256").get<std::string>()) {
      bad.push_back(name);
    }
  }
  return bad;
}

}  // namespace mfl
