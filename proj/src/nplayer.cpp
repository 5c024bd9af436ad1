#include "mflimits/nplayer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/random/normal_distribution.hpp>
#include <json.hpp>

#include "mflimits/errors.hpp"
#include "mflimits/serialize.hpp"

namespace mfl {

void TriggerParams::validate() const {
  if (!(T > 0.0)) throw ConfigError("trigger: T must be positive");
  if (!(delta > 0.0)) throw ConfigError("trigger: delta must be positive");
  if (!(check_interval > 0.0)) throw ConfigError("trigger: check interval must be positive");
  if (!(conform.grid() == punish.grid()) || !(conform.grid() == m_hat.grid())) {
    throw ConfigError("trigger: conform, punish and m_hat must share a grid");
  }
}

DeviationPolicy DeviationPolicy::conform(const TorusGrid& g) { return {DeviationKind::Conform, GridDrift(g), "conform"}; }
DeviationPolicy DeviationPolicy::selfish(GridDrift d) { return {DeviationKind::Selfish, std::move(d), "selfish"}; }
DeviationPolicy DeviationPolicy::lazy(const TorusGrid& g) { return {DeviationKind::Lazy, GridDrift(g), "lazy"}; }
DeviationPolicy DeviationPolicy::planner(GridDrift d) { return {DeviationKind::Planner, std::move(d), "planner"}; }
DeviationPolicy DeviationPolicy::custom(GridDrift d, std::string name) {
  return {DeviationKind::Custom, std::move(d), std::move(name)};
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t master, std::uint64_t run, std::uint64_t player) noexcept {
  return splitmix64(splitmix64(splitmix64(master) ^ run) ^ (player * 0xd1342543de82ef95ULL + 1));
}

void SimConfig::validate() const {
  if (N < 2) throw ConfigError("simulation: N must be at least 2");
  if (!(dt > 0.0 && dt <= 1e-2)) throw ConfigError("simulation: dt must lie in (0, 1e-2]");
  if (!(horizon > burn_in && burn_in >= 0.0)) throw ConfigError("simulation: need 0 <= burn_in < horizon");
  if (n_runs < 1) throw ConfigError("simulation: need at least one run");
  if (payoff_stride < 1) throw ConfigError("simulation: payoff stride must be positive");
  if (record_stride < 0) throw ConfigError("simulation: record stride must be nonnegative");
  if (threads < 1) throw ConfigError("simulation: need at least one thread");
}

PathState initial_state(int N, const ProbabilityGrid& initial, double dt, std::uint64_t master, std::uint64_t run) {
  const TorusGrid& g = initial.grid();
  PathState s;
  s.dt = dt;
  s.positions.resize(N);
  s.occupation.assign(static_cast<std::size_t>(N) * g.size(), 0.0);
  s.punished_occupation.assign(static_cast<std::size_t>(N) * g.size(), 0.0);
  std::vector<double> w(initial.density().begin(), initial.density().end());
  for (int j = 0; j < N; ++j) {
    const auto id = stream_seed(master, run, static_cast<std::uint64_t>(j));
    s.stream_ids.push_back(id);
    s.rng.emplace_back(id);
    std::discrete_distribution<int> pick(w.begin(), w.end());
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const int c = pick(s.rng.back());
    s.positions[j] = project_to_torus((c + U(s.rng.back())) * g.h());
  }
  return s;
}

double player_drift(const PathState& s, int j, const TriggerParams& p, const DeviationPolicy& dev, double x) noexcept {
  if (j == 0 && dev.kind != DeviationKind::Conform) return dev.drift.interpolate(x);
  const bool punishing = s.theta < kNever && s.t() > s.theta;
  return punishing ? p.punish.interpolate(x) : p.conform.interpolate(x);
}

namespace {

long steps_for(double t, double dt) { return std::lround(t / dt); }

bool check_due(long step, double dt, const TriggerParams& p) {
  if (step <= 0) return false;
  const long every = std::max(1L, steps_for(p.check_interval, dt));
  return step >= steps_for(p.T, dt) && step % every == 0;
}

}  // namespace

void check_trigger(PathState& s, const TriggerParams& p, std::vector<double>& scratch) {
  if (s.theta < kNever) return;
  const int n = p.m_hat.size();
  for (int j = 0; j < s.players(); ++j) {
    const std::span<const double> occ(s.occupation.data() + static_cast<std::size_t>(j) * n, n);
    if (wasserstein1_circle_weights(occ, p.m_hat, scratch) >= p.delta) {
      s.theta = s.t();
      return;
    }
  }
}

namespace {

// One synchronous step. When cost is given, L(a, x) * dt at the pre-step
// state is added to cost[j] with the drift actually used.
void advance(PathState& s, const TriggerParams& p, const DeviationPolicy& dev, std::vector<double>& scratch,
             const Lagrangian* L, double* cost) {
  const TorusGrid& g = p.m_hat.grid();
  const int n = g.size();
  if (check_due(s.step, s.dt, p)) check_trigger(s, p, scratch);
  const bool punishing = s.theta < kNever && s.t() > s.theta;
  const GridDrift& others = punishing ? p.punish : p.conform;
  const double sq = std::sqrt(s.dt);
  // ziggurat sampler: stateless, so each player draws only from its own stream
  boost::random::normal_distribution<double> Z(0.0, 1.0);
  for (int j = 0; j < s.players(); ++j) {
    const double x = s.positions[j];
    const int c = g.nearest_cell(x);
    double* occ = s.occupation.data() + static_cast<std::size_t>(j) * n;
    occ[c] += s.dt;
    if (punishing) s.punished_occupation[static_cast<std::size_t>(j) * n + c] += s.dt;
    const double a = (j == 0 && dev.kind != DeviationKind::Conform) ? dev.drift.interpolate(x) : others.interpolate(x);
    if (cost) cost[j] += L->running_cost_at(a, x) * s.dt;
    s.positions[j] = project_to_torus(x + a * s.dt + sq * Z(s.rng[j]));
  }
  ++s.step;
}

}  // namespace

void step(PathState& s, const TriggerParams& p, const DeviationPolicy& dev, std::vector<double>& scratch) {
  advance(s, p, dev, scratch, nullptr, nullptr);
}

namespace {

struct RunContext {
  const SimConfig& cfg;
  const Lagrangian& L;
  const TriggerParams& params;
  const DeviationPolicy& dev;
  const ProbabilityGrid& punish_law;
  const PointCloudCoupling& pc;
};

RunRecord simulate_run(const RunContext& ctx, int r, std::vector<RecordedPoint>* recording) {
  const SimConfig& cfg = ctx.cfg;
  const int n = ctx.params.m_hat.size();
  const int N = cfg.N;
  const long total = steps_for(cfg.horizon, cfg.dt);
  const long burn = steps_for(cfg.burn_in, cfg.dt);
  const double window = (total - burn) * cfg.dt;
  std::vector<double> scratch, loo(N), run_cost(N, 0.0), run_F(N, 0.0);
  std::vector<std::complex<double>> ws;

  PathState s = initial_state(N, ctx.params.m_hat, cfg.dt, cfg.seed, static_cast<std::uint64_t>(r));
  while (s.step < total) {
    if (recording && s.step % cfg.record_stride == 0) {
      for (int j = 0; j < N; ++j) recording->push_back({s.t(), j, s.positions[j]});
    }
    const bool counted = s.step >= burn;
    if (counted && (s.step - burn) % cfg.payoff_stride == 0) {
      ctx.pc.leave_one_out(s.positions, loo, ws);
      const double wgt = std::min<long>(cfg.payoff_stride, total - s.step) * cfg.dt;
      for (int j = 0; j < N; ++j) run_F[j] += loo[j] * wgt;
    }
    advance(s, ctx.params, ctx.dev, scratch, &ctx.L, counted ? run_cost.data() : nullptr);
  }

  RunRecord rec;
  rec.run = r;
  rec.theta = s.theta;
  for (int j = 0; j < N; ++j) {
    PlayerRun pr;
    pr.running_cost = run_cost[j] / window;
    pr.coupling = run_F[j] / window;
    pr.payoff = pr.running_cost + pr.coupling;
    const std::span<const double> occ(s.occupation.data() + static_cast<std::size_t>(j) * n, n);
    pr.occupation_w1 = wasserstein1_circle_weights(occ, ctx.params.m_hat, scratch);
    const std::span<const double> pocc(s.punished_occupation.data() + static_cast<std::size_t>(j) * n, n);
    double ptime = 0.0;
    for (double v : pocc) ptime += v;
    if (ptime > 0.0) pr.punished_w1 = wasserstein1_circle_weights(pocc, ctx.punish_law, scratch);
    rec.players.push_back(pr);
  }
  return rec;
}

}  // namespace

SimReport estimate_payoffs(const SimConfig& cfg, const Lagrangian& L, const CouplingFunctional& F,
                           const TriggerParams& params, const DeviationPolicy& dev,
                           const ProbabilityGrid& punish_law, const std::function<void(const RunRecord&)>& on_run) {
  cfg.validate();
  params.validate();
  if (!(L.grid() == params.m_hat.grid()) || !(F.grid() == params.m_hat.grid())) {
    throw ConfigError("simulation: Lagrangian, coupling and trigger data must share a grid");
  }
  const PointCloudCoupling pc(F);
  const RunContext ctx{cfg, L, params, dev, punish_law, pc};

  SimReport rep;
  rep.policy = dev.name;
  rep.runs.resize(cfg.n_runs);
  std::atomic<int> next{0};
  std::mutex report_mutex;
  std::exception_ptr failure;
  auto worker = [&] {
    for (int r = next++; r < cfg.n_runs; r = next++) {
      try {
        const bool record = (r == 0 && cfg.record_stride > 0);
        rep.runs[r] = simulate_run(ctx, r, record ? &rep.recording : nullptr);
        if (on_run) {
          std::lock_guard lock(report_mutex);
          on_run(rep.runs[r]);
        }
      } catch (...) {
        std::lock_guard lock(report_mutex);
        if (!failure) failure = std::current_exception();
        next = cfg.n_runs;
      }
    }
  };
  const int threads = std::clamp(cfg.threads, 1, cfg.n_runs);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < threads; ++k) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  // aggregation in run order, so results do not depend on the schedule
  const int N = cfg.N;
  int triggered = 0;
  std::vector<double> sum(N, 0.0), sum2(N, 0.0);
  for (const auto& rec : rep.runs) {
    if (rec.theta < cfg.horizon) ++triggered;
    for (int j = 0; j < N; ++j) {
      sum[j] += rec.players[j].payoff;
      sum2[j] += rec.players[j].payoff * rec.players[j].payoff;
    }
  }
  rep.p_trigger = static_cast<double>(triggered) / cfg.n_runs;
  for (int j = 0; j < N; ++j) {
    PayoffEstimate e;
    e.n_runs = cfg.n_runs;
    e.horizon = cfg.horizon;
    e.burn_in = cfg.burn_in;
    e.p_trigger = rep.p_trigger;
    e.mean = sum[j] / cfg.n_runs;
    if (cfg.n_runs > 1) {
      const double var = std::max(0.0, (sum2[j] - cfg.n_runs * e.mean * e.mean) / (cfg.n_runs - 1));
      e.stderr_ = std::sqrt(var / cfg.n_runs);
    }
    rep.players.push_back(e);
  }
  return rep;
}

double replay_theta(const std::vector<RecordedPoint>& path, int N, double dt, const TriggerParams& params) {
  params.validate();
  const TorusGrid& g = params.m_hat.grid();
  const int n = g.size();
  if (path.size() % static_cast<std::size_t>(N) != 0) throw ConfigError("replay: path length is not a multiple of N");
  PathState s;
  s.dt = dt;
  s.positions.assign(N, 0.0);
  s.occupation.assign(static_cast<std::size_t>(N) * n, 0.0);
  std::vector<double> scratch;
  const std::size_t steps = path.size() / N;
  for (std::size_t k = 0; k < steps; ++k) {
    s.step = static_cast<long>(k);
    if (check_due(s.step, dt, params)) check_trigger(s, params, scratch);
    for (int j = 0; j < N; ++j) {
      const auto& pt = path[k * N + j];
      if (pt.player != j) throw ConfigError("replay: players out of order");
      s.occupation[static_cast<std::size_t>(j) * n + g.nearest_cell(pt.position)] += dt;
    }
  }
  return s.theta;
}

std::string recording_csv(const std::vector<RecordedPoint>& path) {
  std::string out = "t,player,position\n";
  for (const auto& p : path) {
    out += format_double(p.t) + ',' + std::to_string(p.player) + ',' + format_double(p.position) + '\n';
  }
  return out;
}

std::vector<RecordedPoint> recording_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("t,player,position", 0) != 0) {
    throw ConfigError("recording CSV must start with 't,player,position'");
  }
  std::vector<RecordedPoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw ConfigError("recording CSV: malformed row");
    out.push_back({std::stod(line.substr(0, a)), std::stoi(line.substr(a + 1, b - a - 1)),
                   std::strtod(line.c_str() + b + 1, nullptr)});
  }
  return out;
}

std::string run_records_jsonl(const SimReport& report) {
  std::string out;
  for (const auto& r : report.runs) {
    for (std::size_t j = 0; j < r.players.size(); ++j) {
      nlohmann::json row = {{"run", r.run},
                            {"player", j},
                            {"payoff", r.players[j].payoff},
                            {"theta", r.theta < kNever ? nlohmann::json(r.theta) : nlohmann::json(nullptr)}};
      out += row.dump() + '\n';
    }
  }
  return out;
}

std::string payoff_csv(const SimReport& report) {
  std::string out = "player,mean,stderr,n_runs,horizon,burn_in,p_trigger\n";
  for (std::size_t j = 0; j < report.players.size(); ++j) {
    const auto& e = report.players[j];
    out += std::to_string(j) + ',' + format_double(e.mean) + ',' + format_double(e.stderr_) + ',' +
           std::to_string(e.n_runs) + ',' + format_double(e.horizon) + ',' + format_double(e.burn_in) + ',' +
           format_double(e.p_trigger) + '\n';
  }
  return out;
}

}  // namespace mfl
