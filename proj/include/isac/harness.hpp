#ifndef ISAC_HARNESS_HPP
#define ISAC_HARNESS_HPP

#include "isac/agent.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isac {

struct RunConfig {
  std::string env = "pendulum";
  Variant variant = Variant::isac;
  std::int64_t total_steps = 100'000;
  std::int64_t unit_steps = 1000;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  int eval_episodes = 5;
  int smoothing_window = 20;
  int final_units = 50; // N_f, units averaged for the target score
  int jobs = 1;
  SacConfig sac;
  ReplayConfig replay;

  void validate() const;
};

/// Defaults for the named environment: 100 units of 1000 steps for the
/// pendulum, 400 units of 500 steps for the reacher.
RunConfig default_run_config(const std::string &env);

struct EvalRecord {
  std::uint64_t seed = 0;
  int unit = 0; // 1-based
  std::int64_t env_steps = 0;
  double eval_return = 0.0;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<EvalRecord> records;
  bool failed = false;
  std::string error;
  std::int64_t env_steps = 0; // steps actually executed
  std::int64_t episodes = 0;
  std::uint64_t sdp_calls = 0;
  double prioritized_fraction = 0.0;
  Rng final_train_rng;
  std::optional<SacAgent> agent;
};

/// Called after every evaluation; returning false stops the run early.
using RunObserver = std::function<bool(const EvalRecord &)>;

struct RunOptions {
  bool evaluate = true;
  bool keep_agent = false;
  RunObserver observer;
};

/// Trains one agent for config.total_steps environment steps, evaluating the
/// mean policy after every unit. Evaluation uses its own environment and
/// random stream, so it never perturbs training. Numerical faults end the run
/// with failed = true and whatever records were produced.
RunResult run_training(const RunConfig &config, std::uint64_t seed,
                       const RunOptions &options = {});

/// run_training for every configured seed, on up to config.jobs threads.
/// Results are in seed order regardless of scheduling.
std::vector<RunResult> run_seeds(const RunConfig &config,
                                 const RunOptions &options = {});

/// Mean undiscounted return of `policy` over `episodes` episodes.
double evaluate_policy(const std::function<Vector(const Vector &)> &policy,
                       Env &env, int episodes, Rng &rng);
double evaluate_policy(const SacAgent &agent, Env &env, int episodes, Rng &rng);

/// Trailing mean; the first window-1 entries average what is available.
std::vector<double> moving_average(std::span<const double> series, int window);

struct SummaryStats {
  std::vector<std::uint64_t> seeds;
  std::vector<std::int64_t> env_steps; // per unit
  std::vector<double> mean;            // R_n averaged over seeds
  std::vector<double> std_dev;         // population std over seeds
  double max_mean = 0.0;
  double mean_std = 0.0;
  std::optional<double> target;
  std::vector<std::optional<std::int64_t>> steps_to_target; // per seed
  std::optional<double> steps_mean;
  std::optional<double> steps_std;
  bool partial = false;
};

/// Per-seed eval series to summary statistics. Runs whose grids are
/// shorter than the rest, or seeds from `expected_seeds` that are absent,
/// mark the result partial; units are then limited to the common prefix.
SummaryStats aggregate(std::span<const std::vector<EvalRecord>> runs,
                       std::optional<double> target, int smoothing_window,
                       std::span<const std::uint64_t> expected_seeds = {});

/// Mean of the last `final_units` entries of stats.mean.
double target_score(const SummaryStats &stats, int final_units);

/// env_steps of the first unit where the smoothed series reaches `target`.
std::optional<std::int64_t> steps_to_target(std::span<const EvalRecord> records,
                                            double target, int smoothing_window);

/// Median with missing values ordered last (treated as +infinity).
std::optional<double> median_steps(std::span<const std::optional<std::int64_t>> steps);

std::vector<std::vector<EvalRecord>> records_of(std::span<const RunResult> runs);

struct MetricsRow {
  std::string variant;
  std::string env;
  EvalRecord record;
};

/// Columns: variant,env,seed,unit,env_steps,eval_return.
void write_metrics_csv(std::ostream &out, const std::string &variant,
                       const std::string &env, std::span<const RunResult> runs);
std::vector<MetricsRow> read_metrics_csv(std::istream &in);

} // namespace isac

#endif
