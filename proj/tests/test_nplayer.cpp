#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <json.hpp>

#include "mflimits/ergodic.hpp"
#include "mflimits/errors.hpp"
#include "mflimits/nplayer.hpp"

using namespace mfl;

namespace {

constexpr double kPi = std::numbers::pi;

GridField cosine(const TorusGrid& g, double amp, double phase = 0.0) {
  GridField f(g);
  for (int i = 0; i < g.size(); ++i) f[i] = amp * std::cos(2 * kPi * g.node(i) + phase);
  return f;
}

// Gradient drifts -D phi with Gibbs invariant laws; conform pulls towards
// x = 1/2, punish towards x = 0.
struct Setup {
  TorusGrid g;
  Lagrangian L;
  CouplingFunctional F;
  GridDrift conform, punish;
  ProbabilityGrid m_hat, punish_law;

  explicit Setup(int n)
      : g(n),
        L(cosine(g, 0.5)),
        F(CouplingFunctional::convolution(g, TrigSeries{0.0, {1.0}, {}}, 0.5)),
        conform(GridDrift::minus_gradient(cosine(g, -0.6))),
        punish(GridDrift::minus_gradient(cosine(g, 0.6))),
        m_hat(solve_invariant_measure(conform).mu),
        punish_law(solve_invariant_measure(punish).mu) {}

  TriggerParams params(double T, double delta) const { return TriggerParams{T, delta, conform, punish, m_hat, 1.0}; }
};

SimConfig small_config(int N, double horizon, double burn_in, int runs) {
  SimConfig c;
  c.N = N;
  c.horizon = horizon;
  c.burn_in = burn_in;
  c.n_runs = runs;
  c.seed = 42;
  return c;
}

}  // namespace

TEST_CASE("stream seeds are distinct") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t r = 0; r < 100; ++r)
    for (std::uint64_t j = 0; j < 100; ++j) seen.insert(stream_seed(1, r, j));
  CHECK(seen.size() == 10000);
  CHECK(stream_seed(1, 0, 0) != stream_seed(2, 0, 0));
  CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("Brownian increments") {
  const TorusGrid g(16);
  const GridDrift zero(g);
  const auto uni = ProbabilityGrid::uniform(g);
  const TriggerParams p{1e9, 1.0, zero, zero, uni, 1.0};
  const auto dev = DeviationPolicy::conform(g);
  std::vector<double> scratch;

  SUBCASE("per-step variance dt over 1e5 steps") {
    auto s = initial_state(4, uni, 1e-3, 7, 0);
    double sum = 0.0, sum2 = 0.0;
    long count = 0;
    for (int k = 0; k < 100000; ++k) {
      const auto before = s.positions;
      step(s, p, dev, scratch);
      for (int j = 0; j < 4; ++j) {
        const double d = torus_displacement(before[j], s.positions[j]);
        sum += d;
        sum2 += d * d;
        ++count;
      }
    }
    const double mean = sum / count;
    const double var = sum2 / count - mean * mean;
    CHECK(std::abs(var / 1e-3 - 1.0) <= 0.05);
    CHECK(std::abs(mean) <= 5.0 * std::sqrt(1e-3 / count));
  }
  SUBCASE("unwrapped displacement has variance t") {
    const int N = 20000;
    auto s = initial_state(N, uni, 1e-3, 11, 0);
    std::vector<double> total(N, 0.0);
    for (int k = 0; k < 1000; ++k) {
      const auto before = s.positions;
      step(s, p, dev, scratch);
      for (int j = 0; j < N; ++j) total[j] += torus_displacement(before[j], s.positions[j]);
    }
    double v = 0.0;
    for (double d : total) v += d * d;
    CHECK(std::abs(v / N - 1.0) <= 0.05);
  }
}

TEST_CASE("initial positions follow the initial law") {
  const Setup S(32);
  const auto s = initial_state(20000, S.m_hat, 1e-3, 3, 0);
  CHECK(wasserstein1_circle(empirical_measure(S.g, s.positions), S.m_hat) <= 0.01);
  for (double x : s.positions) {
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
  }
}

TEST_CASE("trigger timing") {
  const Setup S(64);
  std::vector<double> scratch;
  const auto dev = DeviationPolicy::lazy(S.g);

  SUBCASE("never before T, at T with a tiny delta, then absorbing") {
    const auto p = S.params(2.0, 1e-9);
    auto s = initial_state(3, S.m_hat, 1e-3, 5, 0);
    while (s.t() < 2.0 - 1e-9) {
      step(s, p, dev, scratch);
      if (s.step < 2000) REQUIRE(s.theta == kNever);
    }
    CHECK(s.theta == kNever);
    step(s, p, dev, scratch);
    CHECK(s.theta == doctest::Approx(2.0).epsilon(1e-12));
    const double theta = s.theta;
    for (int k = 0; k < 500; ++k) step(s, p, dev, scratch);
    CHECK(s.theta == theta);
    // after theta the others punish; the deviator keeps its own drift
    for (int j = 1; j < 3; ++j) {
      const double x = s.positions[j];
      CHECK(player_drift(s, j, p, dev, x) == S.punish.interpolate(x));
    }
    CHECK(player_drift(s, 0, p, dev, 0.3) == 0.0);
    double pocc = 0.0;
    for (double v : s.punished_occupation) pocc += v;
    CHECK(pocc > 0.0);
  }
  SUBCASE("a delta beyond the diameter never fires") {
    const auto p = S.params(1.0, 0.6);
    auto s = initial_state(3, S.m_hat, 1e-3, 5, 0);
    for (int k = 0; k < 5000; ++k) step(s, p, dev, scratch);
    CHECK(s.theta == kNever);
    for (int j = 0; j < 3; ++j) CHECK(player_drift(s, j, p, DeviationPolicy::conform(S.g), 0.3) ==
                                      S.conform.interpolate(0.3));
  }
  SUBCASE("a lazy deviator is caught") {
    const double w = wasserstein1_circle(ProbabilityGrid::uniform(S.g), S.m_hat);
    REQUIRE(w > 0.05);
    auto cfg = small_config(3, 60.0, 10.0, 2);
    const auto rep = estimate_payoffs(cfg, S.L, S.F, S.params(30.0, 0.5 * w), dev, S.punish_law);
    CHECK(rep.p_trigger == 1.0);
    for (const auto& r : rep.runs) CHECK(r.theta >= 30.0);
  }
}

TEST_CASE("replay reproduces theta") {
  const Setup S(64);
  for (double delta : {1e-9, 0.05, 0.6}) {
    auto cfg = small_config(3, 20.0, 1.0, 1);
    cfg.record_stride = 1;
    const auto p = S.params(2.0, delta);
    const auto rep = estimate_payoffs(cfg, S.L, S.F, p, DeviationPolicy::conform(S.g), S.punish_law);
    REQUIRE(rep.recording.size() == 3u * 20000u);
    const double theta = rep.runs[0].theta;
    CHECK(replay_theta(rep.recording, 3, cfg.dt, p) == theta);
    const auto back = recording_from_csv(recording_csv(rep.recording));
    CHECK(replay_theta(back, 3, cfg.dt, p) == theta);
    if (delta < 1e-6) CHECK(theta == doctest::Approx(2.0));
    if (delta > 0.5) CHECK(theta == kNever);
  }
}

TEST_CASE("seeds, threads and symmetry") {
  const Setup S(32);
  const auto p = S.params(1e6, 1.0);
  const auto dev = DeviationPolicy::conform(S.g);

  auto cfg = small_config(4, 20.0, 2.0, 6);
  const auto a = estimate_payoffs(cfg, S.L, S.F, p, dev, S.punish_law);
  const auto b = estimate_payoffs(cfg, S.L, S.F, p, dev, S.punish_law);
  cfg.threads = 3;
  const auto c = estimate_payoffs(cfg, S.L, S.F, p, dev, S.punish_law);
  for (int j = 0; j < 4; ++j) {
    CHECK(a.players[j].mean == b.players[j].mean);
    CHECK(a.players[j].mean == c.players[j].mean);
    CHECK(a.players[j].stderr_ == c.players[j].stderr_);
  }
  CHECK(payoff_csv(a) == payoff_csv(c));
  CHECK(run_records_jsonl(a) == run_records_jsonl(c));
  cfg.seed = 43;
  const auto d = estimate_payoffs(cfg, S.L, S.F, p, dev, S.punish_law);
  CHECK(d.players[0].mean != a.players[0].mean);

  SUBCASE("exchangeable players") {
    auto sym = small_config(4, 40.0, 5.0, 16);
    const auto r = estimate_payoffs(sym, S.L, S.F, p, dev, S.punish_law);
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) {
        const auto& x = r.players[i];
        const auto& y = r.players[j];
        CHECK(std::abs(x.mean - y.mean) <= 4.0 * std::hypot(x.stderr_, y.stderr_));
      }
  }
}

TEST_CASE("long-run behaviour") {
  SUBCASE("running cost is at least the ergodic value") {
    const Setup S(64);
    const double lambda0 = solve_ergodic_hjb(S.L, GridField(S.g)).lambda;
    auto cfg = small_config(2, 200.0, 20.0, 1);
    const auto rep = estimate_payoffs(cfg, S.L, S.F, S.params(1e6, 1.0), DeviationPolicy::conform(S.g), S.punish_law);
    for (const auto& pr : rep.runs[0].players) CHECK(pr.running_cost >= -lambda0 - 0.05);
  }
  SUBCASE("occupation measures approach m_hat") {
    const Setup S(128);
    auto cfg = small_config(2, 2000.0, 200.0, 1);
    cfg.payoff_stride = 100;
    const auto rep = estimate_payoffs(cfg, S.L, S.F, S.params(1e6, 1.0), DeviationPolicy::conform(S.g), S.punish_law);
    for (const auto& pr : rep.runs[0].players) CHECK(pr.occupation_w1 <= 0.05);
  }
  SUBCASE("punished marginals approach the punishing law") {
    const Setup S(64);
    auto cfg = small_config(3, 402.0, 2.0, 1);
    cfg.payoff_stride = 100;
    const auto rep =
        estimate_payoffs(cfg, S.L, S.F, S.params(2.0, 1e-9), DeviationPolicy::conform(S.g), S.punish_law);
    REQUIRE(rep.runs[0].theta == doctest::Approx(2.0));
    for (const auto& pr : rep.runs[0].players) {
      CHECK(pr.punished_w1 >= 0.0);
      CHECK(pr.punished_w1 <= 0.05);
    }
  }
}

TEST_CASE("configuration errors") {
  const Setup S(32);
  const auto p = S.params(10.0, 0.1);
  const auto dev = DeviationPolicy::conform(S.g);
  auto bad = [&](auto mutate) {
    auto c = small_config(2, 10.0, 1.0, 1);
    mutate(c);
    CHECK_THROWS_AS(estimate_payoffs(c, S.L, S.F, p, dev, S.punish_law), ConfigError);
  };
  bad([](SimConfig& c) { c.N = 1; });
  bad([](SimConfig& c) { c.dt = 0.05; });
  bad([](SimConfig& c) { c.burn_in = 10.0; });
  bad([](SimConfig& c) { c.n_runs = 0; });
  bad([](SimConfig& c) { c.payoff_stride = 0; });
  bad([](SimConfig& c) { c.threads = 0; });
  CHECK_THROWS_AS(S.params(0.0, 0.1).validate(), ConfigError);
  CHECK_THROWS_AS(S.params(1.0, 0.0).validate(), ConfigError);
  const Setup other(64);
  CHECK_THROWS_AS(estimate_payoffs(small_config(2, 10.0, 1.0, 1), other.L, other.F, p, dev, S.punish_law),
                  ConfigError);
  CHECK_THROWS_AS(recording_from_csv("x,y\n"), ConfigError);
}

TEST_CASE("report formats") {
  const Setup S(32);
  auto cfg = small_config(3, 5.0, 1.0, 2);
  const auto rep = estimate_payoffs(cfg, S.L, S.F, S.params(2.0, 1e-9), DeviationPolicy::conform(S.g), S.punish_law);
  const auto csv = payoff_csv(rep);
  CHECK(csv.rfind("player,mean,stderr,n_runs,horizon,burn_in,p_trigger\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  const auto jsonl = run_records_jsonl(rep);
  CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 6);
  const auto first = nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  CHECK(first["theta"].get<double>() == doctest::Approx(2.0));
}
