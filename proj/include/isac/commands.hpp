#ifndef ISAC_COMMANDS_HPP
#define ISAC_COMMANDS_HPP

#include "isac/config.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace isac {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_fault = 2 };

/// Outcome of training one configuration over all its seeds.
struct ExperimentResult {
  CliConfig config;
  std::vector<RunResult> runs;
  SummaryStats summary;
  bool any_failed = false;
};

/// Runs every seed of `config` and writes config.json, metrics.csv and
/// checkpoint_seed<N>.bin into `dir`.
ExperimentResult run_experiment(const CliConfig &config, const std::string &dir,
                                bool checkpoints, std::ostream &log);

double mean_prioritized_fraction(const ExperimentResult &e);

nlohmann::json summary_to_json(const SummaryStats &s);

/// Train all seeds of one configuration; also writes summary.json and
/// prints the summary table.
int cmd_train(const CliConfig &config, std::ostream &out, std::ostream &err);

/// Row label used in comparison tables, e.g. "isac (zeta_th=0.5)".
std::string row_label(const CliConfig &config);

/// Runs each configuration on the shared seed set and writes a combined
/// table (compare_table.txt), compare_summary.json and compare.svg into
/// `out_dir`. The target score comes from the first "sac" row, or the first
/// row when there is none.
int cmd_compare(const std::vector<CliConfig> &configs,
                const std::string &out_dir, std::ostream &out,
                std::ostream &err);

/// Renders metrics files into an SVG learning-curve plot.
int cmd_plot(const std::vector<std::string> &metrics_files,
             const std::string &output, int window, std::ostream &out,
             std::ostream &err);

/// Aggregates metrics files into a summary table (and JSON when `output`
/// is non-empty).
int cmd_summarize(const std::vector<std::string> &metrics_files,
                  std::optional<double> target, int final_units, int window,
                  const std::string &output, std::ostream &out,
                  std::ostream &err);

} // namespace isac

#endif
