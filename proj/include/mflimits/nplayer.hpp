#pragma once

// N-player stationary game on the circle under trigger strategies.
//
// Every player moves by dX = a dt + dB (Euler-Maruyama). Players 2..N play
// the conforming drift until the trigger time theta and the punishing drift
// afterwards; player 1 plays a deviation policy. theta is the first check
// time >= T at which some player's running occupation measure is at W1
// distance >= delta from m_hat.

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "mflimits/coupling.hpp"
#include "mflimits/lagrangian.hpp"
#include "mflimits/torus.hpp"

namespace mfl {

constexpr double kNever = std::numeric_limits<double>::infinity();

struct TriggerParams {
  double T = 200.0;
  double delta = 0.01;
  GridDrift conform;
  GridDrift punish;
  ProbabilityGrid m_hat;
  double check_interval = 1.0;

  void validate() const;
};

enum class DeviationKind { Conform, Selfish, Lazy, Planner, Custom };

struct DeviationPolicy {
  DeviationKind kind = DeviationKind::Conform;
  GridDrift drift;  ///< ignored for Conform
  std::string name = "conform";

  static DeviationPolicy conform(const TorusGrid& g);
  static DeviationPolicy selfish(GridDrift minus_du0);
  static DeviationPolicy lazy(const TorusGrid& g);
  static DeviationPolicy planner(GridDrift alpha_tilde);
  static DeviationPolicy custom(GridDrift drift, std::string name);
};

/// splitmix64 finaliser.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
/// Independent stream seed for (run, player) under a master seed.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t run, std::uint64_t player) noexcept;

struct PathState {
  long step = 0;  ///< t = step * dt
  double dt = 1e-3;
  std::vector<double> positions;
  /// occupation[j * n_cells + c]: time player j spent nearest to cell c.
  std::vector<double> occupation;
  /// Same, restricted to times after theta.
  std::vector<double> punished_occupation;
  double theta = kNever;
  std::vector<std::mt19937_64> rng;
  std::vector<std::uint64_t> stream_ids;

  double t() const noexcept { return static_cast<double>(step) * dt; }
  int players() const noexcept { return static_cast<int>(positions.size()); }
};

/// Initial positions drawn iid from `initial` (cell by probability, then
/// uniform inside the cell), one stream per player.
PathState initial_state(int N, const ProbabilityGrid& initial, double dt, std::uint64_t master, std::uint64_t run);

/// Drift currently prescribed to player j.
double player_drift(const PathState& s, int j, const TriggerParams& p, const DeviationPolicy& dev, double x) noexcept;

/// Trigger evaluation at the current time; sets theta if it fires.
void check_trigger(PathState& s, const TriggerParams& p, std::vector<double>& scratch);

/// One synchronous Euler-Maruyama step of all players (trigger check at the
/// start of the step when due, occupations weighted by dt).
void step(PathState& s, const TriggerParams& p, const DeviationPolicy& dev, std::vector<double>& scratch);

struct SimConfig {
  int N = 32;
  double dt = 1e-3;
  double horizon = 2000.0;
  double burn_in = 200.0;
  int n_runs = 64;
  std::uint64_t seed = 1;
  /// F(empirical of others) is sampled every `payoff_stride` steps.
  int payoff_stride = 10;
  /// Record positions every `record_stride` steps for run 0 (0 disables).
  long record_stride = 0;
  /// Runs are distributed over this many threads; results do not depend on it.
  int threads = 1;

  void validate() const;
};

struct PayoffEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  int n_runs = 0;
  double horizon = 0.0;
  double burn_in = 0.0;
  double p_trigger = 0.0;
};

struct PlayerRun {
  double payoff = 0.0;       ///< time average of L + F(others)
  double running_cost = 0.0;  ///< time average of L alone
  double coupling = 0.0;      ///< time average of F(others)
  double occupation_w1 = 0.0;  ///< W1(occupation over [0, horizon], m_hat)
  double punished_w1 = -1.0;  ///< W1(occupation after theta, punish law); -1 if not triggered
};

struct RunRecord {
  int run = 0;
  double theta = kNever;
  std::vector<PlayerRun> players;
};

struct RecordedPoint {
  double t;
  int player;
  double position;
};

struct SimReport {
  std::string policy;
  std::vector<PayoffEstimate> players;
  std::vector<RunRecord> runs;
  double p_trigger = 0.0;
  std::vector<RecordedPoint> recording;  ///< run 0, if requested
};

/// Independent runs with per-run, per-player streams derived from the master
/// seed. `punish_law` is the invariant measure of the punishing drift, used
/// only for the punished-phase diagnostics. on_run is called once per
/// finished run (in completion order when threads > 1).
SimReport estimate_payoffs(const SimConfig& cfg, const Lagrangian& L, const CouplingFunctional& F,
                           const TriggerParams& params, const DeviationPolicy& dev,
                           const ProbabilityGrid& punish_law,
                           const std::function<void(const RunRecord&)>& on_run = {});

/// Re-derives theta from recorded positions (record_stride must be 1).
double replay_theta(const std::vector<RecordedPoint>& path, int N, double dt, const TriggerParams& params);

std::string recording_csv(const std::vector<RecordedPoint>& path);
std::vector<RecordedPoint> recording_from_csv(const std::string& text);

std::string run_records_jsonl(const SimReport& report);
std::string payoff_csv(const SimReport& report);

}  // namespace mfl
