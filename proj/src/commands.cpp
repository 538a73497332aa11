#include "isac/commands.hpp"

#include "isac/plot.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace isac {

namespace {

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json optional_json(const std::optional<double> &v) {
  return v ? json(*v) : json(nullptr);
}

std::string steps_cell(const SummaryStats &s) {
  if (!s.target)
    return "-";
  std::size_t reached = 0;
  for (const auto &t : s.steps_to_target)
    reached += t.has_value();
  if (!s.steps_mean)
    return "never";
  std::string cell = fixed(*s.steps_mean, 0) + " +- " + fixed(*s.steps_std, 0);
  if (reached != s.steps_to_target.size())
    cell += " (" + std::to_string(reached) + "/" +
            std::to_string(s.steps_to_target.size()) + " reached)";
  return cell;
}

struct TableRow {
  std::string label;
  const SummaryStats *stats;
};

std::string format_table(const std::vector<TableRow> &rows,
                         std::optional<double> target) {
  std::ostringstream t;
  if (target)
    t << "target score: " << fixed(*target) << "\n";
  t << "| algorithm | R_max | sigma_bar | steps to target (mean +- std) |\n";
  t << "|---|---|---|---|\n";
  for (const auto &r : rows)
    t << "| " << r.label << " | " << fixed(r.stats->max_mean) << " | "
      << fixed(r.stats->mean_std) << " | " << steps_cell(*r.stats) << " |\n";
  return t.str();
}

void require_same_grid(const std::vector<CliConfig> &configs) {
  const auto &a = configs.front().run;
  for (const auto &c : configs) {
    const auto &b = c.run;
    if (b.env != a.env || b.seeds != a.seeds || b.total_steps != a.total_steps ||
        b.unit_steps != a.unit_steps)
      throw ConfigError("compared configurations must share env, seeds, "
                        "total_steps and unit_steps");
  }
}

} // namespace

json summary_to_json(const SummaryStats &s) {
  json j;
  j["seeds"] = s.seeds;
  j["env_steps"] = s.env_steps;
  j["mean_return"] = s.mean;
  j["std_return"] = s.std_dev;
  j["R_max"] = s.max_mean;
  j["sigma_bar"] = s.mean_std;
  j["R_target"] = optional_json(s.target);
  json steps = json::array();
  for (const auto &t : s.steps_to_target)
    steps.push_back(t ? json(*t) : json(nullptr));
  j["steps_to_target"] = steps;
  j["steps_to_target_mean"] = optional_json(s.steps_mean);
  j["steps_to_target_std"] = optional_json(s.steps_std);
  j["steps_to_target_median"] = optional_json(median_steps(s.steps_to_target));
  j["partial"] = s.partial;
  return j;
}

double mean_prioritized_fraction(const ExperimentResult &e) {
  if (e.runs.empty())
    return 0.0;
  double s = 0.0;
  for (const auto &r : e.runs)
    s += r.prioritized_fraction;
  return s / static_cast<double>(e.runs.size());
}

ExperimentResult run_experiment(const CliConfig &config, const std::string &dir,
                                bool checkpoints, std::ostream &log) {
  config.run.validate();
  fs::create_directories(dir);
  write_text(fs::path(dir) / "config.json", to_json(config).dump(2) + "\n");

  ExperimentResult e;
  e.config = config;
  RunOptions options;
  options.keep_agent = checkpoints;
  log << "training " << row_label(config) << " on " << config.run.env << ", "
      << config.run.seeds.size() << " seed(s), " << config.run.total_steps
      << " steps\n";
  e.runs = run_seeds(config.run, options);

  std::ostringstream metrics;
  write_metrics_csv(metrics, to_string(config.run.variant), config.run.env, e.runs);
  write_text(fs::path(dir) / "metrics.csv", metrics.str());

  for (const auto &r : e.runs) {
    if (r.failed) {
      e.any_failed = true;
      log << "seed " << r.seed << " failed after " << r.env_steps
          << " steps: " << r.error << "\n";
    }
    if (checkpoints && r.agent)
      save_checkpoint((fs::path(dir) / ("checkpoint_seed" + std::to_string(r.seed) + ".bin")).string(),
                      *r.agent);
  }
  const auto per_seed = records_of(e.runs);
  e.summary = aggregate(per_seed, std::nullopt, config.run.smoothing_window,
                        config.run.seeds);
  return e;
}

std::string row_label(const CliConfig &config) {
  std::string label = to_string(config.run.variant);
  if (config.run.variant == Variant::isac) {
    char buf[48];
    std::snprintf(buf, sizeof buf, " (zeta_th=%g)", config.run.replay.zeta_th);
    label += buf;
  }
  return label;
}

int cmd_train(const CliConfig &config, std::ostream &out, std::ostream &err) {
  try {
    ExperimentResult e = run_experiment(config, config.out_dir, true, out);
    if (!e.summary.mean.empty()) {
      const double target = target_score(e.summary, config.run.final_units);
      e.summary = aggregate(records_of(e.runs), target,
                            config.run.smoothing_window, config.run.seeds);
    }
    json j = summary_to_json(e.summary);
    j["variant"] = to_string(config.run.variant);
    j["env"] = config.run.env;
    j["zeta_th"] = config.run.replay.zeta_th;
    j["xi"] = config.run.replay.xi;
    j["target_source"] = "self (final " + std::to_string(config.run.final_units) + " units)";
    j["config"] = to_json(config);
    json fractions = json::array();
    for (const auto &r : e.runs)
      fractions.push_back(r.prioritized_fraction);
    j["prioritized_fraction"] = fractions;
    j["prioritized_fraction_mean"] = mean_prioritized_fraction(e);
    json failed = json::array();
    for (const auto &r : e.runs)
      if (r.failed)
        failed.push_back({{"seed", r.seed}, {"error", r.error}});
    j["failed_seeds"] = failed;
    write_text(fs::path(config.out_dir) / "summary.json", j.dump(2) + "\n");

    out << format_table({{row_label(config), &e.summary}}, e.summary.target);
    out << "outputs written to " << config.out_dir << "\n";
    return e.any_failed ? exit_fault : exit_ok;
  } catch (const ConfigError &ex) {
    err << "error: " << ex.what() << "\n";
    return exit_usage;
  } catch (const NumericalFault &ex) {
    err << "numerical fault: " << ex.what() << "\n";
    return exit_fault;
  }
}

int cmd_compare(const std::vector<CliConfig> &configs,
                const std::string &out_dir, std::ostream &out,
                std::ostream &err) {
  try {
    if (configs.size() < 2)
      throw ConfigError("compare needs at least two configurations");
    require_same_grid(configs);
    fs::create_directories(out_dir);

    std::vector<std::string> labels;
    std::map<std::string, int> seen;
    for (const auto &c : configs) {
      std::string l = row_label(c);
      if (int n = ++seen[l]; n > 1)
        l += " #" + std::to_string(n);
      labels.push_back(l);
    }

    std::vector<ExperimentResult> results;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      std::string sub = std::to_string(i) + "_" + to_string(configs[i].run.variant);
      CliConfig c = configs[i];
      c.out_dir = (fs::path(out_dir) / sub).string();
      results.push_back(run_experiment(c, c.out_dir, false, out));
    }

    std::size_t baseline = 0;
    for (std::size_t i = 0; i < configs.size(); ++i)
      if (configs[i].run.variant == Variant::sac) {
        baseline = i;
        break;
      }
    std::optional<double> target;
    if (!results[baseline].summary.mean.empty())
      target = target_score(results[baseline].summary,
                            configs[baseline].run.final_units);

    json rows = json::array();
    std::vector<TableRow> table;
    std::vector<PlotSeries> curves;
    bool any_failed = false;
    for (std::size_t i = 0; i < results.size(); ++i) {
      auto &e = results[i];
      e.summary = aggregate(records_of(e.runs), target,
                            e.config.run.smoothing_window, e.config.run.seeds);
      any_failed = any_failed || e.any_failed;
      json r = summary_to_json(e.summary);
      r["label"] = labels[i];
      r["variant"] = to_string(e.config.run.variant);
      r["zeta_th"] = e.config.run.replay.zeta_th;
      r["xi"] = e.config.run.replay.xi;
      r["prioritized_fraction"] = mean_prioritized_fraction(e);
      r["out_dir"] = e.config.out_dir;
      rows.push_back(r);
      table.push_back({labels[i], &e.summary});
      curves.push_back(make_series(labels[i], e.summary, e.config.run.smoothing_window));
    }

    json j;
    j["env"] = configs.front().run.env;
    j["seeds"] = configs.front().run.seeds;
    j["R_target"] = optional_json(target);
    j["target_source"] = labels[baseline] + " (final " +
                         std::to_string(configs[baseline].run.final_units) + " units)";
    j["rows"] = rows;
    write_text(fs::path(out_dir) / "compare_summary.json", j.dump(2) + "\n");
    const std::string text = format_table(table, target);
    write_text(fs::path(out_dir) / "compare_table.txt", text);
    write_text(fs::path(out_dir) / "compare.svg",
               render_svg(curves, configs.front().run.env + ": evaluation return"));
    out << text;
    out << "outputs written to " << out_dir << "\n";
    return any_failed ? exit_fault : exit_ok;
  } catch (const ConfigError &ex) {
    err << "error: " << ex.what() << "\n";
    return exit_usage;
  } catch (const NumericalFault &ex) {
    err << "numerical fault: " << ex.what() << "\n";
    return exit_fault;
  }
}

namespace {

struct Group {
  std::string label;
  std::string env;
  std::map<std::uint64_t, std::vector<EvalRecord>> by_seed;
};

std::vector<Group> load_groups(const std::vector<std::string> &files) {
  if (files.empty())
    throw ConfigError("no metrics files given");
  std::vector<Group> groups;
  std::map<std::string, std::size_t> index;
  for (const auto &f : files) {
    std::ifstream in(f);
    if (!in)
      throw ConfigError("cannot open metrics file '" + f + "'");
    const auto rows = read_metrics_csv(in);
    if (rows.empty())
      throw ConfigError("metrics file '" + f + "' has no rows");
    for (const auto &row : rows) {
      std::string key = row.variant;
      if (files.size() > 1)
        key += " [" + fs::path(f).parent_path().filename().string() + "]";
      auto [it, inserted] = index.emplace(key, groups.size());
      if (inserted)
        groups.push_back({key, row.env, {}});
      groups[it->second].by_seed[row.record.seed].push_back(row.record);
    }
  }
  return groups;
}

std::vector<std::vector<EvalRecord>> seed_series(const Group &g) {
  std::vector<std::vector<EvalRecord>> out;
  for (const auto &[seed, recs] : g.by_seed)
    out.push_back(recs);
  return out;
}

} // namespace

int cmd_plot(const std::vector<std::string> &metrics_files,
             const std::string &output, int window, std::ostream &out,
             std::ostream &err) {
  try {
    const auto groups = load_groups(metrics_files);
    std::vector<PlotSeries> curves;
    for (const auto &g : groups) {
      const auto stats = aggregate(seed_series(g), std::nullopt, window);
      curves.push_back(make_series(g.label, stats, window));
    }
    write_text(output, render_svg(curves, groups.front().env + ": evaluation return"));
    out << "plot written to " << output << "\n";
    return exit_ok;
  } catch (const ConfigError &ex) {
    err << "error: " << ex.what() << "\n";
    return exit_usage;
  }
}

int cmd_summarize(const std::vector<std::string> &metrics_files,
                  std::optional<double> target, int final_units, int window,
                  const std::string &output, std::ostream &out,
                  std::ostream &err) {
  try {
    const auto groups = load_groups(metrics_files);
    std::vector<SummaryStats> stats;
    for (const auto &g : groups)
      stats.push_back(aggregate(seed_series(g), std::nullopt, window));
    std::string source = "given";
    if (!target) {
      std::size_t baseline = 0;
      for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i].label.rfind("sac", 0) == 0 &&
            (groups[i].label.size() == 3 || groups[i].label[3] == ' ')) {
          baseline = i;
          break;
        }
      target = target_score(stats[baseline], final_units);
      source = groups[baseline].label + " (final " + std::to_string(final_units) + " units)";
    }
    std::vector<TableRow> table;
    json rows = json::array();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      stats[i] = aggregate(seed_series(groups[i]), target, window);
      table.push_back({groups[i].label, &stats[i]});
      json r = summary_to_json(stats[i]);
      r["label"] = groups[i].label;
      rows.push_back(r);
    }
    out << format_table(table, target);
    if (!output.empty()) {
      json j;
      j["R_target"] = *target;
      j["target_source"] = source;
      j["rows"] = rows;
      write_text(output, j.dump(2) + "\n");
    }
    return exit_ok;
  } catch (const ConfigError &ex) {
    err << "error: " << ex.what() << "\n";
    return exit_usage;
  }
}

} // namespace isac
