#include "isac/commands.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

using namespace isac;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string &detail) {
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

template <class... Args> std::string fmt(const char *f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string &s) { std::cerr << "  .. " << s << std::endl; }

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("isac_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

AugTransition scored(double rho, std::int64_t id) {
  AugTransition t;
  t.state = Vector::Constant(1, static_cast<double>(id));
  t.action = Vector::Zero(1);
  t.next_state = t.state;
  t.rho = rho;
  t.episode_id = id;
  return t;
}

EnvSpec box_spec(Index obs, Index act) {
  EnvSpec s;
  s.obs_dim = obs;
  s.act_dim = act;
  s.action_low = Vector::Constant(act, -2.0);
  s.action_high = Vector::Constant(act, 2.0);
  s.max_episode_steps = 10;
  return s;
}

BatchTensors random_batch(const SacAgent &a, Index k, Rng &rng) {
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  BatchTensors b{Matrix(a.obs_dim, k), Matrix(a.act_dim, k), Vector(k),
                 Matrix(a.obs_dim, k), Vector::Zero(k)};
  for (Index i = 0; i < b.states.size(); ++i) {
    b.states.data()[i] = n(rng);
    b.next_states.data()[i] = n(rng);
  }
  for (Index j = 0; j < k; ++j) {
    for (Index r = 0; r < a.act_dim; ++r)
      b.actions(r, j) = a.head.offset(r) + a.head.scale(r) * u(rng);
    b.rewards(j) = n(rng);
    b.done(j) = j == 0 ? 1.0 : 0.0;
  }
  return b;
}

void gradient_suite() {
  const double fd_step = 1e-5;
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    SacConfig c;
    c.hidden = {12, 12};
    const Index obs = seed % 2 ? 11 : 4, act = seed % 2 ? 2 : 1;
    const SacAgent a = make_agent(box_spec(obs, act), c, rng);
    const BatchTensors b = random_batch(a, 5, rng);
    const Vector y = compute_q_targets(a, b, rng);
    const Vector w = Vector::Random(5).cwiseAbs() + Vector::Constant(5, 0.1);

    const auto cl = critic_loss(a.q1, a.q2, b, y, &w);
    auto l1 = [&](const Mlp<double> &q) { return critic_loss(q, a.q2, b, y, &w).loss; };
    auto l2 = [&](const Mlp<double> &q) { return critic_loss(a.q1, q, b, y, &w).loss; };
    worst = std::max(worst, max_relative_error(cl.grad_q1, finite_diff_grad<double>(l1, a.q1, fd_step)));
    worst = std::max(worst, max_relative_error(cl.grad_q2, finite_diff_grad<double>(l2, a.q2, fd_step)));

    const Matrix noise = standard_normal(act, 5, rng);
    const double alpha = 0.1 + 0.05 * static_cast<double>(seed);
    const auto al = actor_loss(a.policy, a.head, a.q1, a.q2, alpha, b.states, noise);
    auto f = [&](const Mlp<double> &p) {
      return actor_loss(p, a.head, a.q1, a.q2, alpha, b.states, noise).loss;
    };
    worst = std::max(worst, max_relative_error(al.grad, finite_diff_grad<double>(f, a.policy, fd_step)));

    const double la = 0.3 * static_cast<double>(seed) - 1.0, h = fd_step;
    const auto g = alpha_loss(la, al.log_prob, a.target_entropy).grad;
    const double fd = (alpha_loss(la + h, al.log_prob, a.target_entropy).loss -
                       alpha_loss(la - h, al.log_prob, a.target_entropy).loss) /
                      (2 * h);
    worst = std::max(worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1e-8}));
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report(1, worst <= 1e-4 && secs < 10.0,
         fmt("max rel err %.3g over 10 nets x 4 losses, %.2f s", worst, secs));
}

void sdp_oracle() {
  Rng rng(2);
  std::uniform_int_distribution<int> size(1, 16), coarse(-3, 3);
  std::uniform_real_distribution<double> th(-1.0, 1.0), val(-100, 100);
  int mismatches = 0, gate_errors = 0, prioritized = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = size(rng);
    MiniBatch b1, b2;
    for (int i = 0; i < k; ++i) {
      b1.push_back(scored(trial % 2 ? val(rng) : coarse(rng), i));
      b2.push_back(scored(trial % 2 ? val(rng) : coarse(rng), 100 + i));
    }
    const double zeta_th = th(rng);
    double dot = 0, n1 = 0, n2 = 0;
    for (int i = 0; i < k; ++i) {
      dot += *b1[i].rho * *b2[i].rho;
      n1 += *b1[i].rho * *b1[i].rho;
      n2 += *b2[i].rho * *b2[i].rho;
    }
    const double zeta = n1 == 0 || n2 == 0 ? 1.0 : dot / (std::sqrt(n1) * std::sqrt(n2));
    const auto r = sdp_select(b1, b2, zeta_th, rng);
    if (zeta > zeta_th && r.prioritized)
      ++gate_errors;
    if (r.prioritized) {
      ++prioritized;
      std::vector<double> all;
      for (const auto &t : b1)
        all.push_back(*t.rho);
      for (const auto &t : b2)
        all.push_back(*t.rho);
      std::sort(all.begin(), all.end(), std::greater<>());
      all.resize(k);
      auto got = rho_vector(r.batch);
      std::sort(got.begin(), got.end(), std::greater<>());
      mismatches += got != all;
    }
  }
  report(2, mismatches == 0 && gate_errors == 0,
         fmt("%d prioritized instances, %d multiset mismatches, %d gate violations",
             prioritized, mismatches, gate_errors));
}

void moo_contract() {
  Rng rng(3);
  const std::size_t k = 50;
  MiniBatch batch;
  for (std::size_t i = 0; i < k; ++i)
    batch.push_back(scored(static_cast<double>(i), static_cast<std::int64_t>(i)));
  const AugTransition latest = scored(-1.0, -1);
  std::vector<long> hits(k, 0);
  long bad = 0;
  const long trials = 1'000'000;
  for (long t = 0; t < trials; ++t) {
    const std::size_t idx = moo_mix_inplace(batch, latest, rng);
    ++hits[idx];
    const auto present = std::count_if(batch.begin(), batch.end(),
                                       [](const auto &x) { return x.episode_id == -1; });
    bad += batch.size() != k || present != 1;
    batch[idx] = scored(static_cast<double>(idx), static_cast<std::int64_t>(idx));
  }
  double dev = 0;
  for (long h : hits)
    dev = std::max(dev, std::abs(static_cast<double>(h) / trials - 1.0 / k));
  report(3, bad == 0 && dev <= 0.01,
         fmt("%ld contract violations, max |freq - 1/50| = %.2e", bad, dev));
}

void delayed_infusion() {
  ReplayConfig rc;
  rc.xi = 10;
  ReplayStrategy s(Variant::isac, rc);
  Rng rng(4);
  std::uniform_int_distribution<int> len(1, 40);
  std::normal_distribution<double> n;
  std::map<std::int64_t, double> returns;
  std::vector<int> growth;
  bool temp_clean = true;
  for (int ep = 1; ep <= 35; ++ep) {
    double ret = 0;
    const int steps = len(rng);
    for (int i = 0; i < steps; ++i) {
      AugTransition t;
      t.state = Vector::Constant(1, i);
      t.action = Vector::Zero(1);
      t.next_state = t.state;
      t.reward = n(rng);
      t.episode_id = ep;
      ret += t.reward;
      const std::size_t before = s.buffer().size();
      s.store(t);
      if (s.buffer().size() != before)
        growth.push_back(-ep);
    }
    returns[ep] = ret;
    const std::size_t before = s.buffer().size();
    s.end_episode(ret);
    if (s.buffer().size() != before) {
      growth.push_back(ep);
      temp_clean = temp_clean && s.temp().size() == 0;
    }
  }
  std::size_t rho_errors = 0;
  const auto &buf = s.buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    double sum = 0;
    for (std::size_t j = 0; j < buf.size(); ++j)
      if (buf[j].episode_id == buf[i].episode_id)
        sum += buf[j].reward;
    rho_errors += !buf[i].rho || *buf[i].rho != returns[buf[i].episode_id] ||
                  *buf[i].rho != sum;
  }
  const bool pass = growth == std::vector<int>{10, 20, 30} && temp_clean && rho_errors == 0 &&
                    s.temp().episodes_held() == 5;
  std::string events;
  for (int g : growth)
    events += (events.empty() ? "" : ",") + std::to_string(g);
  report(4, pass,
         fmt("growth after episodes {%s}, %zu buffered, %zu rho mismatches", events.c_str(),
             buf.size(), rho_errors));
}

void per_sampler() {
  ReplayBuffer buf(8);
  PerState per(8, 0.6);
  for (int i = 0; i < 8; ++i)
    per_on_insert(per, buf.push(scored(0.0, i)));
  std::vector<std::size_t> slots(8);
  std::iota(slots.begin(), slots.end(), 0);
  std::vector<double> td(8);
  for (int i = 0; i < 8; ++i)
    td[i] = (i + 1) - per_priority_floor;
  per_update_priorities(per, slots, td);

  double z = 0;
  for (int i = 1; i <= 8; ++i)
    z += std::pow(i, 0.6);
  Rng rng(5);
  std::vector<long> hits(8, 0);
  const long draws = 1'000'000;
  for (long d = 0; d < draws; ++d)
    ++hits[per_sample(buf, per, 1, 0.4, rng).slots[0]];
  double dev = 0;
  for (int i = 0; i < 8; ++i)
    dev = std::max(dev, std::abs(static_cast<double>(hits[i]) / draws - std::pow(i + 1, 0.6) / z));

  SumTree tree(1000);
  std::uniform_int_distribution<std::size_t> leaf(0, 999);
  std::uniform_real_distribution<double> v(0, 10);
  for (int i = 0; i < 100'000; ++i)
    tree.set(leaf(rng), v(rng));
  const double drift = std::abs(tree.total() - tree.leaf_sum());
  report(5, dev <= 0.01 && drift <= 1e-9,
         fmt("max |freq - p^0.6/sum| = %.2e, root-leaf drift %.2e", dev, drift));
}

void ere_contract() {
  const std::size_t n = 100'000;
  const double oracle = std::floor(static_cast<double>(n) * std::exp(500.0 * std::log(0.996)));
  const std::size_t ck = ere_window(n, 0.996, 500.0);
  ReplayBuffer buf(n);
  for (std::size_t i = 0; i < n; ++i)
    buf.push(scored(0.0, static_cast<std::int64_t>(i)));
  Rng rng(6);
  std::vector<std::size_t> slots;
  std::size_t outside = 0, drawn = 0;
  while (drawn < 10'000) {
    slots.clear();
    // exponent = update_index * 1000 / K = 500
    ere_sample(buf, 100, 1, 2, 0.996, rng, 5000, &slots);
    for (std::size_t s : slots)
      outside += s < n - ck;
    drawn += slots.size();
  }
  report(6, std::abs(static_cast<double>(ck) - oracle) <= 1.0 && outside == 0,
         fmt("c_k = %zu, direct evaluation %.0f, %zu of %zu samples outside window", ck,
             oracle, outside, drawn));
}

double target_distance(const SacAgent &a) {
  double s = 0;
  for (std::size_t i = 0; i < a.q1.layers.size(); ++i)
    s += (a.q1_target.layers[i].weight - a.q1.layers[i].weight).squaredNorm() +
         (a.q1_target.layers[i].bias - a.q1.layers[i].bias).squaredNorm() +
         (a.q2_target.layers[i].weight - a.q2.layers[i].weight).squaredNorm() +
         (a.q2_target.layers[i].bias - a.q2.layers[i].bias).squaredNorm();
  return std::sqrt(s);
}

void soft_update_check() {
  Rng rng(7);
  SacConfig c;
  c.hidden = {16, 16};
  SacAgent a = make_agent(box_spec(4, 1), c, rng);
  a.q1_target.layers[0].bias(0) = 0.0;
  a.q1.layers[0].bias(0) = 1.0;
  soft_update(a);
  const double scalar = a.q1_target.layers[0].bias(0);

  SacAgent b = make_agent(box_spec(4, 1), c, rng);
  for (auto *net : {&b.q1_target, &b.q2_target})
    for (auto &l : net->layers)
      l.weight += standard_normal(l.weight.rows(), l.weight.cols(), rng);
  const double d0 = target_distance(b);
  for (int i = 0; i < 1000; ++i)
    soft_update(b);
  const double ratio = target_distance(b) / d0, expect = std::pow(0.99, 1000);
  const double rel = std::abs(ratio - expect) / expect;
  report(7, scalar == 0.01 && rel <= 1e-9,
         fmt("scalar step %.17g, shrink %.6e vs %.6e (rel err %.2e)", scalar, ratio, expect, rel));
}

void alpha_sign() {
  int correct = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(800 + trial);
    SacConfig c;
    c.hidden = {16, 16};
    c.initial_log_alpha = std::normal_distribution<double>(0, 1)(rng);
    const SacAgent frozen = make_agent(box_spec(4, 1), c, rng);
    const Matrix states = standard_normal(4, 50, rng);
    const Vector lp = policy_sample(frozen, states, rng).log_prob;
    const double offset = trial % 2 ? 1.0 : -1.0;
    SacAgent a = frozen;
    // place the fixed point 1.0 below (or above) the policy's mean log-prob
    a.target_entropy = -(lp.mean() - offset);
    const double before = a.log_alpha;
    alpha_update(a, lp);
    correct += offset > 0 ? a.log_alpha > before : a.log_alpha < before;
  }
  report(8, correct == 100, fmt("%d/100 trials moved log_alpha the right way", correct));
}

struct Curves {
  std::map<std::uint64_t, std::vector<double>> returns;
};

void learning_and_comparison() {
  const auto start = std::chrono::steady_clock::now();
  RunConfig sac = default_run_config("pendulum");
  sac.variant = Variant::sac;
  std::vector<RunResult> sac_runs;
  for (std::uint64_t seed : sac.seeds) {
    sac_runs.push_back(run_training(sac, seed));
    const auto &r = sac_runs.back();
    progress(fmt("sac seed %llu: final eval %.1f%s", static_cast<unsigned long long>(seed),
                 r.records.empty() ? 0.0 : r.records.back().eval_return,
                 r.failed ? " (failed)" : ""));
  }
  const auto sac_records = records_of(sac_runs);
  const SummaryStats sac_stats = aggregate(sac_records, std::nullopt, sac.smoothing_window);
  const double target = target_score(sac_stats, sac.final_units);
  progress(fmt("R_target from sac final %d units: %.2f", sac.final_units, target));

  RunConfig isac = default_run_config("pendulum");
  isac.variant = Variant::isac;
  isac.replay.zeta_th = 0.5;
  isac.replay.xi = 10;
  const double stop_at = std::max(900.0, target);
  Curves curves;
  RunOptions opts;
  opts.observer = [&](const EvalRecord &rec) {
    auto &v = curves.returns[rec.seed];
    v.push_back(rec.eval_return);
    return moving_average(v, isac.smoothing_window).back() < stop_at;
  };
  std::vector<RunResult> isac_runs;
  for (std::uint64_t seed : isac.seeds) {
    isac_runs.push_back(run_training(isac, seed, opts));
    const auto &r = isac_runs.back();
    progress(fmt("isac seed %llu: %lld steps, last eval %.1f%s",
                 static_cast<unsigned long long>(seed), static_cast<long long>(r.env_steps),
                 r.records.empty() ? 0.0 : r.records.back().eval_return,
                 r.failed ? " (failed)" : ""));
  }

  int reached = 0;
  std::vector<std::optional<std::int64_t>> isac_t, sac_t;
  std::string t900;
  for (const auto &r : isac_runs) {
    const auto s900 = steps_to_target(r.records, 900.0, isac.smoothing_window);
    reached += s900.has_value();
    t900 += (t900.empty() ? "" : ",") + (s900 ? std::to_string(*s900) : std::string("never"));
    isac_t.push_back(steps_to_target(r.records, target, isac.smoothing_window));
  }
  for (const auto &r : sac_runs)
    sac_t.push_back(steps_to_target(r.records, target, sac.smoothing_window));
  const double minutes =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / 60.0;
  report(9, reached >= 4,
         fmt("%d/5 isac seeds reached smoothed 900 (steps: %s), %.1f min total", reached,
             t900.c_str(), minutes));

  const auto mi = median_steps(isac_t), ms = median_steps(sac_t);
  auto show = [](const std::optional<double> &m) {
    return m ? fmt("%.0f", *m) : std::string("never");
  };
  const bool ordered = mi.has_value() && (!ms.has_value() || *mi <= *ms);
  report(10, ordered,
         fmt("R_target %.2f, median T isac %s vs sac %s", target, show(mi).c_str(),
             show(ms).c_str()));
}

void zeta_sweep() {
  const fs::path dir = scratch("sweep");
  std::vector<CliConfig> configs;
  for (double z : {0.1, 0.5, 0.9})
    configs.push_back(resolve_config(json::object(), {{"variant", "isac"},
                                                      {"zeta_th", z},
                                                      {"seeds", {1, 2}},
                                                      {"total_steps", 10000},
                                                      {"unit_steps", 1000},
                                                      {"final_units", 5}}));
  std::ostringstream out, err;
  const int code = cmd_compare(configs, dir.string(), out, err);
  if (code != exit_ok) {
    report(11, false, "cmd_compare exited with " + std::to_string(code) + ": " + err.str());
    return;
  }
  const json j = json::parse(slurp(dir / "compare_summary.json"));
  std::vector<double> frac;
  for (const auto &row : j["rows"])
    frac.push_back(row["prioritized_fraction"].get<double>());
  const std::string svg = slurp(dir / "compare.svg");
  std::size_t curves = 0;
  for (auto p = svg.find("class=\"series\""); p != std::string::npos;
       p = svg.find("class=\"series\"", p + 1))
    ++curves;
  const std::string table = slurp(dir / "compare_table.txt");
  std::size_t table_rows = 0;
  for (const char *label : {"zeta_th=0.1)", "zeta_th=0.5)", "zeta_th=0.9)"})
    table_rows += table.find(label) != std::string::npos;
  const bool monotone = frac.size() == 3 && frac[0] <= frac[1] && frac[1] <= frac[2];
  report(11, monotone && curves == 3 && table_rows == 3,
         fmt("fractions %.4f <= %.4f <= %.4f, %zu curves, %zu table rows", frac[0], frac[1],
             frac[2], curves, table_rows));
}

void determinism() {
  const fs::path dir = scratch("determinism");
  const json over{{"seeds", {3}}, {"total_steps", 4000}, {"unit_steps", 1000}};
  std::ostringstream out, err;
  std::string metrics[2];
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    json o = over;
    o["out_dir"] = (dir / std::to_string(i)).string();
    codes[i] = cmd_train(resolve_config(json::object(), o), out, err);
    metrics[i] = slurp(dir / std::to_string(i) / "metrics.csv");
  }
  report(12, codes[0] == 0 && codes[1] == 0 && !metrics[0].empty() && metrics[0] == metrics[1],
         fmt("two cmd_train runs, metrics %zu bytes, identical: %s", metrics[0].size(),
             metrics[0] == metrics[1] ? "yes" : "no"));
}

} // namespace

int main() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  gradient_suite();
  sdp_oracle();
  moo_contract();
  delayed_infusion();
  per_sampler();
  ere_contract();
  soft_update_check();
  alpha_sign();
  learning_and_comparison();
  zeta_sweep();
  determinism();
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
