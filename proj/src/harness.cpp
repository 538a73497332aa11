#include "isac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace isac {

void RunConfig::validate() const {
  make_env(env);
  if (total_steps <= 0 || unit_steps <= 0)
    throw ConfigError("total_steps and unit_steps must be positive");
  if (total_steps % unit_steps != 0)
    throw ConfigError("total_steps must be divisible by unit_steps");
  if (seeds.empty())
    throw ConfigError("at least one seed is required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw ConfigError("seeds must be distinct");
  if (eval_episodes < 1)
    throw ConfigError("eval_episodes must be at least 1");
  if (smoothing_window < 1)
    throw ConfigError("smoothing_window must be at least 1");
  if (final_units < 1)
    throw ConfigError("final_units must be at least 1");
  if (jobs < 1)
    throw ConfigError("jobs must be at least 1");
  sac.validate();
  replay.validate();
}

RunConfig default_run_config(const std::string &env) {
  RunConfig c;
  c.env = env;
  if (env == "reacher") {
    c.total_steps = 200'000;
    c.unit_steps = 500;
    c.final_units = 100;
  } else if (env != "pendulum") {
    make_env(env); // throws with the list of known names
  }
  return c;
}

double evaluate_policy(const std::function<Vector(const Vector &)> &policy,
                       Env &env, int episodes, Rng &rng) {
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    Vector state = env.reset(rng);
    for (;;) {
      const StepResult r = env.step(policy(state));
      total += r.reward;
      if (r.terminated || r.truncated)
        break;
      state = r.next_state;
    }
  }
  return total / episodes;
}

double evaluate_policy(const SacAgent &agent, Env &env, int episodes, Rng &rng) {
  return evaluate_policy(
      [&](const Vector &s) { return policy_mean_action(agent, s); }, env,
      episodes, rng);
}

namespace {

// Flush-to-zero and denormals-are-zero for the current thread.
class DenormalGuard {
public:
  DenormalGuard() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u);
#endif
  }
  ~DenormalGuard() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  DenormalGuard(const DenormalGuard &) = delete;
  DenormalGuard &operator=(const DenormalGuard &) = delete;

private:
  unsigned saved_ = 0;
};

// Evaluation draws from a stream decorrelated from the training seed.
constexpr std::uint64_t eval_stream_salt = 0x9E3779B97F4A7C15ULL;

Vector random_action(const EnvSpec &spec, Rng &rng) {
  Vector a(spec.act_dim);
  for (Index i = 0; i < spec.act_dim; ++i) {
    std::uniform_real_distribution<double> u(spec.action_low(i),
                                             spec.action_high(i));
    a(i) = u(rng);
  }
  return a;
}

} // namespace

RunResult run_training(const RunConfig &config, std::uint64_t seed,
                       const RunOptions &options) {
  config.validate();
  const DenormalGuard denormals;
  RunResult result;
  result.seed = seed;
  Rng train_rng(seed);
  Rng eval_rng(seed ^ eval_stream_salt);

  auto env = make_env(config.env);
  auto eval_env = make_env(config.env);
  const EnvSpec &spec = env->spec();
  SacAgent agent = make_agent(spec, config.sac, train_rng);
  ReplayStrategy strategy(config.variant, config.replay);

  try {
    Vector state = env->reset(train_rng);
    double episode_return = 0.0;
    std::size_t episode_step = 0;
    std::int64_t episode_id = 0;
    for (std::int64_t step = 1; step <= config.total_steps; ++step) {
      Vector action = strategy.ready()
                          ? Vector(policy_sample(agent, state, train_rng).action.col(0))
                          : random_action(spec, train_rng);
      action = clip_action(spec, action);
      const StepResult r = env->step(action);

      AugTransition t{state, action, r.reward, r.next_state, r.terminated,
                      std::nullopt, episode_id};
      strategy.store(t);
      episode_return += r.reward;

      TrainContext ctx;
      ctx.progress = static_cast<double>(step) / static_cast<double>(config.total_steps);
      ctx.episode_step = episode_step;
      ctx.episode_length = static_cast<std::size_t>(spec.max_episode_steps);
      train_step(agent, strategy, t, ctx, train_rng);
      ++episode_step;
      result.env_steps = step;

      if (r.terminated || r.truncated) {
        strategy.end_episode(episode_return);
        ++episode_id;
        ++result.episodes;
        episode_return = 0.0;
        episode_step = 0;
        state = env->reset(train_rng);
      } else {
        state = r.next_state;
      }

      if (options.evaluate && step % config.unit_steps == 0) {
        EvalRecord rec;
        rec.seed = seed;
        rec.unit = static_cast<int>(step / config.unit_steps);
        rec.env_steps = step;
        rec.eval_return =
            evaluate_policy(agent, *eval_env, config.eval_episodes, eval_rng);
        result.records.push_back(rec);
        if (options.observer && !options.observer(rec))
          break;
      }
    }
  } catch (const NumericalFault &e) {
    result.failed = true;
    result.error = e.what();
  }

  result.sdp_calls = strategy.sdp_calls();
  result.prioritized_fraction = strategy.prioritized_fraction();
  result.final_train_rng = train_rng;
  if (options.keep_agent)
    result.agent = std::move(agent);
  return result;
}

std::vector<RunResult> run_seeds(const RunConfig &config,
                                 const RunOptions &options) {
  config.validate();
  std::vector<RunResult> results(config.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.seeds.size(); i = next++)
      results[i] = run_training(config, config.seeds[i], options);
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(config.jobs),
                                             config.seeds.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i)
      pool.emplace_back(worker);
  }
  return results;
}

std::vector<double> moving_average(std::span<const double> series, int window) {
  if (window < 1)
    throw ConfigError("moving_average: window must be at least 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const std::size_t n = std::min(i + 1, static_cast<std::size_t>(window));
    double s = 0.0;
    for (std::size_t j = i + 1 - n; j <= i; ++j)
      s += series[j];
    out[i] = s / static_cast<double>(n);
  }
  return out;
}

std::optional<std::int64_t> steps_to_target(std::span<const EvalRecord> records,
                                            double target, int smoothing_window) {
  std::vector<double> series;
  series.reserve(records.size());
  for (const auto &r : records)
    series.push_back(r.eval_return);
  const auto smooth = moving_average(series, smoothing_window);
  for (std::size_t i = 0; i < smooth.size(); ++i)
    if (smooth[i] >= target)
      return records[i].env_steps;
  return std::nullopt;
}

SummaryStats aggregate(std::span<const std::vector<EvalRecord>> runs,
                       std::optional<double> target, int smoothing_window,
                       std::span<const std::uint64_t> expected_seeds) {
  SummaryStats s;
  if (runs.empty())
    throw ConfigError("aggregate: no runs given");
  std::size_t units = runs.front().size();
  std::size_t longest = 0;
  for (const auto &r : runs) {
    units = std::min(units, r.size());
    longest = std::max(longest, r.size());
    s.seeds.push_back(r.empty() ? 0 : r.front().seed);
  }
  s.partial = units != longest;
  for (std::uint64_t want : expected_seeds)
    if (std::find(s.seeds.begin(), s.seeds.end(), want) == s.seeds.end())
      s.partial = true;

  const double w = static_cast<double>(runs.size());
  for (std::size_t n = 0; n < units; ++n) {
    const std::int64_t steps = runs.front()[n].env_steps;
    double sum = 0.0;
    for (const auto &r : runs) {
      if (r[n].env_steps != steps)
        throw ConfigError("aggregate: runs have different unit grids");
      sum += r[n].eval_return;
    }
    const double mean = sum / w;
    double var = 0.0;
    for (const auto &r : runs)
      var += (r[n].eval_return - mean) * (r[n].eval_return - mean);
    s.env_steps.push_back(steps);
    s.mean.push_back(mean);
    s.std_dev.push_back(std::sqrt(var / w));
  }
  if (units > 0) {
    s.max_mean = *std::max_element(s.mean.begin(), s.mean.end());
    double total = 0.0;
    for (double x : s.std_dev)
      total += x;
    s.mean_std = total / static_cast<double>(units);
  }

  s.target = target;
  if (target) {
    std::vector<double> reached;
    for (const auto &r : runs) {
      auto t = steps_to_target(std::span<const EvalRecord>(r.data(), units),
                               *target, smoothing_window);
      s.steps_to_target.push_back(t);
      if (t)
        reached.push_back(static_cast<double>(*t));
    }
    if (!reached.empty()) {
      double m = 0.0;
      for (double x : reached)
        m += x;
      m /= static_cast<double>(reached.size());
      double v = 0.0;
      for (double x : reached)
        v += (x - m) * (x - m);
      s.steps_mean = m;
      s.steps_std = std::sqrt(v / static_cast<double>(reached.size()));
    }
  }
  return s;
}

double target_score(const SummaryStats &stats, int final_units) {
  if (stats.mean.empty())
    throw ConfigError("target_score: no units to average");
  const std::size_t n = std::min(stats.mean.size(), static_cast<std::size_t>(final_units));
  double s = 0.0;
  for (std::size_t i = stats.mean.size() - n; i < stats.mean.size(); ++i)
    s += stats.mean[i];
  return s / static_cast<double>(n);
}

std::optional<double>
median_steps(std::span<const std::optional<std::int64_t>> steps) {
  if (steps.empty())
    return std::nullopt;
  std::vector<double> v;
  for (const auto &s : steps)
    v.push_back(s ? static_cast<double>(*s) : std::numeric_limits<double>::infinity());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double m = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (!std::isfinite(m))
    return std::nullopt;
  return m;
}

std::vector<std::vector<EvalRecord>> records_of(std::span<const RunResult> runs) {
  std::vector<std::vector<EvalRecord>> out;
  for (const auto &r : runs)
    out.push_back(r.records);
  return out;
}

void write_metrics_csv(std::ostream &out, const std::string &variant,
                       const std::string &env, std::span<const RunResult> runs) {
  out << "variant,env,seed,unit,env_steps,eval_return\n";
  char buf[64];
  for (const auto &run : runs)
    for (const auto &r : run.records) {
      std::snprintf(buf, sizeof buf, "%.17g", r.eval_return);
      out << variant << ',' << env << ',' << r.seed << ',' << r.unit << ','
          << r.env_steps << ',' << buf << '\n';
    }
}

std::vector<MetricsRow> read_metrics_csv(std::istream &in) {
  std::vector<MetricsRow> rows;
  std::string line;
  if (!std::getline(in, line) ||
      line != "variant,env,seed,unit,env_steps,eval_return")
    throw ConfigError("metrics file has an unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');)
      f.push_back(cell);
    if (f.size() != 6)
      throw ConfigError("metrics line " + std::to_string(lineno) +
                        ": expected 6 columns");
    try {
      MetricsRow row;
      row.variant = f[0];
      row.env = f[1];
      row.record.seed = std::stoull(f[2]);
      row.record.unit = std::stoi(f[3]);
      row.record.env_steps = std::stoll(f[4]);
      row.record.eval_return = std::stod(f[5]);
      rows.push_back(std::move(row));
    } catch (const std::logic_error &) {
      throw ConfigError("metrics line " + std::to_string(lineno) +
                        ": malformed number");
    }
  }
  return rows;
}

} // namespace isac
