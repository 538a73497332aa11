// isac_lab: train, compare, summarize and plot SAC-family experiments.

#include "isac/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <optional>
#include <sstream>

using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, sep);)
    if (!part.empty())
      out.push_back(part);
  return out;
}

/// Flags shared by train and compare. Only flags that were given end up in
/// the overrides object.
struct RunFlags {
  std::string env, variant, seeds, out_dir;
  std::int64_t total_steps = 0, unit_steps = 0;
  double zeta_th = 0, lr = 0, gamma = 0;
  int xi = 0, jobs = 0;
  std::size_t batch_size = 0;
  std::map<std::string, CLI::Option *> opts;

  void attach(CLI::App *app) {
    opts["env"] = app->add_option("--env", env, "pendulum or reacher");
    opts["variant"] = app->add_option("--variant", variant, "sac, sac_per, sac_per_ere or isac");
    opts["seeds"] = app->add_option(
        "--seeds", seeds, "number of seeds (1..N) or a comma-separated seed list");
    opts["total_steps"] = app->add_option("--total-steps", total_steps);
    opts["unit_steps"] = app->add_option("--unit-steps", unit_steps);
    opts["zeta_th"] = app->add_option("--zeta-th", zeta_th, "SDP similarity threshold");
    opts["xi"] = app->add_option("--xi", xi, "episodes per delayed infusion");
    opts["batch_size"] = app->add_option("--batch-size", batch_size);
    opts["lr"] = app->add_option("--lr", lr);
    opts["gamma"] = app->add_option("--gamma", gamma);
    opts["out_dir"] = app->add_option("--out-dir", out_dir,
                                      "output directory (default $ISAC_LAB_OUT or isac_out)");
    opts["jobs"] = app->add_option("--jobs", jobs, "worker threads for seeds");
  }

  bool given(const std::string &k) const { return opts.at(k)->count() > 0; }

  json overrides() const {
    json j = json::object();
    if (given("env")) j["env"] = env;
    if (given("variant")) j["variant"] = variant;
    if (given("seeds")) j["seeds"] = parse_seeds(seeds);
    if (given("total_steps")) j["total_steps"] = total_steps;
    if (given("unit_steps")) j["unit_steps"] = unit_steps;
    if (given("zeta_th")) j["zeta_th"] = zeta_th;
    if (given("xi")) j["xi"] = xi;
    if (given("batch_size")) j["batch_size"] = batch_size;
    if (given("lr")) j["lr"] = lr;
    if (given("gamma")) j["gamma"] = gamma;
    if (given("out_dir")) j["out_dir"] = out_dir;
    if (given("jobs")) j["jobs"] = jobs;
    return j;
  }

  static std::vector<std::uint64_t> parse_seeds(const std::string &s) {
    std::vector<std::uint64_t> seeds;
    try {
      if (s.find(',') != std::string::npos) {
        for (const auto &p : split(s, ','))
          seeds.push_back(std::stoull(p));
      } else {
        const auto n = std::stoull(s);
        for (std::uint64_t i = 1; i <= n; ++i)
          seeds.push_back(i);
      }
    } catch (const std::logic_error &) {
      throw isac::ConfigError("--seeds expects a count or a comma-separated list");
    }
    if (seeds.empty())
      throw isac::ConfigError("--seeds must name at least one seed");
    return seeds;
  }
};

} // namespace

int main(int argc, char **argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  CLI::App app{"Soft actor-critic experiments with sampled-data prioritization"};
  app.require_subcommand(1);

  auto *train = app.add_subcommand("train", "train one configuration over its seeds");
  RunFlags train_flags;
  train_flags.attach(train);
  std::string train_config;
  bool print_config = false;
  train->add_option("--config", train_config, "JSON configuration file");
  train->add_flag("--print-config", print_config,
                  "print the resolved configuration and exit");

  auto *compare = app.add_subcommand("compare", "run several configurations on shared seeds");
  RunFlags compare_flags;
  compare_flags.attach(compare);
  std::vector<std::string> compare_configs;
  std::string variants, zetas;
  compare->add_option("--config", compare_configs, "one JSON file per compared row");
  compare->add_option("--variants", variants, "comma-separated variants, one row each");
  compare->add_option("--zeta-ths", zetas, "comma-separated SDP thresholds, one row each");

  auto *plot = app.add_subcommand("plot", "plot learning curves from metrics files");
  std::vector<std::string> plot_files;
  std::string plot_out = "curves.svg";
  int plot_window = 20;
  plot->add_option("metrics", plot_files, "metrics.csv files")->required();
  plot->add_option("-o,--output", plot_out, "output SVG path");
  plot->add_option("--window", plot_window, "moving-average window in units");

  auto *summarize = app.add_subcommand("summarize", "summary statistics from metrics files");
  std::vector<std::string> sum_files;
  std::optional<double> sum_target;
  int sum_final = 50, sum_window = 20;
  std::string sum_out;
  summarize->add_option("metrics", sum_files, "metrics.csv files")->required();
  summarize->add_option("--target", sum_target, "target score (default: sac rows' final window)");
  summarize->add_option("--final-units", sum_final, "units averaged for the target score");
  summarize->add_option("--window", sum_window, "moving-average window in units");
  summarize->add_option("-o,--output", sum_out, "write a JSON summary here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? isac::exit_ok : isac::exit_usage;
  }

  try {
    if (*train) {
      const json file = train_config.empty() ? json::object()
                                             : isac::load_config_file(train_config);
      const auto config = isac::resolve_config(file, train_flags.overrides());
      if (print_config) {
        std::cout << isac::to_json(config).dump(2) << "\n";
        return isac::exit_ok;
      }
      return isac::cmd_train(config, std::cout, std::cerr);
    }
    if (*compare) {
      const json shared = compare_flags.overrides();
      std::vector<json> bases;
      for (const auto &path : compare_configs)
        bases.push_back(isac::load_config_file(path));
      if (bases.empty())
        bases.push_back(json::object());
      std::vector<json> rows;
      for (const auto &b : bases) {
        const auto vs = split(variants, ',');
        const auto zs = split(zetas, ',');
        for (std::size_t i = 0; i < std::max<std::size_t>(vs.size(), 1); ++i)
          for (std::size_t k = 0; k < std::max<std::size_t>(zs.size(), 1); ++k) {
            json r = b;
            if (!vs.empty())
              r["variant"] = vs[i];
            if (!zs.empty())
              r["zeta_th"] = std::stod(zs[k]);
            rows.push_back(r);
          }
      }
      std::vector<isac::CliConfig> configs;
      for (const auto &r : rows)
        configs.push_back(isac::resolve_config(r, shared));
      const std::string out_dir = compare_flags.given("out_dir")
                                      ? compare_flags.out_dir
                                      : isac::default_out_dir();
      return isac::cmd_compare(configs, out_dir, std::cout, std::cerr);
    }
    if (*plot)
      return isac::cmd_plot(plot_files, plot_out, plot_window, std::cout, std::cerr);
    if (*summarize)
      return isac::cmd_summarize(sum_files, sum_target, sum_final, sum_window,
                                 sum_out, std::cout, std::cerr);
  } catch (const isac::ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return isac::exit_usage;
  } catch (const std::invalid_argument &e) {
    std::cerr << "error: bad number in arguments\n";
    return isac::exit_usage;
  }
  return isac::exit_usage;
}
