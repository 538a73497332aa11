#include "isac/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>

namespace isac {

using nlohmann::json;

std::string default_out_dir() {
  if (const char *env = std::getenv("ISAC_LAB_OUT"); env && *env)
    return env;
  return "isac_out";
}

json load_config_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path + "'");
  try {
    json j = json::parse(in);
    if (!j.is_object())
      throw ConfigError("config file '" + path + "' must hold a JSON object");
    return j;
  } catch (const json::parse_error &e) {
    throw ConfigError("config file '" + path + "': " + e.what());
  }
}

namespace {

using Setter = std::function<void(CliConfig &, const json &)>;

template <typename T> T as(const json &v, const std::string &key) {
  try {
    return v.get<T>();
  } catch (const json::exception &) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

const std::map<std::string, Setter> &setters() {
  static const std::map<std::string, Setter> table = {
      {"env", [](CliConfig &c, const json &v) { c.run.env = as<std::string>(v, "env"); }},
      {"variant", [](CliConfig &c, const json &v) {
         c.run.variant = parse_variant(as<std::string>(v, "variant"));
       }},
      {"total_steps", [](CliConfig &c, const json &v) {
         c.run.total_steps = as<std::int64_t>(v, "total_steps");
       }},
      {"unit_steps", [](CliConfig &c, const json &v) {
         c.run.unit_steps = as<std::int64_t>(v, "unit_steps");
       }},
      {"seeds", [](CliConfig &c, const json &v) {
         c.run.seeds = as<std::vector<std::uint64_t>>(v, "seeds");
       }},
      {"eval_episodes", [](CliConfig &c, const json &v) {
         c.run.eval_episodes = as<int>(v, "eval_episodes");
       }},
      {"smoothing_window", [](CliConfig &c, const json &v) {
         c.run.smoothing_window = as<int>(v, "smoothing_window");
       }},
      {"final_units", [](CliConfig &c, const json &v) {
         c.run.final_units = as<int>(v, "final_units");
       }},
      {"jobs", [](CliConfig &c, const json &v) { c.run.jobs = as<int>(v, "jobs"); }},
      {"out_dir", [](CliConfig &c, const json &v) {
         c.out_dir = as<std::string>(v, "out_dir");
       }},
      {"lr", [](CliConfig &c, const json &v) { c.run.sac.lr = as<double>(v, "lr"); }},
      {"gamma", [](CliConfig &c, const json &v) { c.run.sac.gamma = as<double>(v, "gamma"); }},
      {"soft_update_factor", [](CliConfig &c, const json &v) {
         c.run.sac.soft_update_factor = as<double>(v, "soft_update_factor");
       }},
      {"batch_size", [](CliConfig &c, const json &v) {
         c.run.sac.batch_size = as<std::size_t>(v, "batch_size");
       }},
      {"gradient_steps", [](CliConfig &c, const json &v) {
         c.run.sac.gradient_steps = as<int>(v, "gradient_steps");
       }},
      {"hidden", [](CliConfig &c, const json &v) {
         c.run.sac.hidden = as<std::vector<Index>>(v, "hidden");
       }},
      {"activation", [](CliConfig &c, const json &v) {
         c.run.sac.activation = parse_activation(as<std::string>(v, "activation"));
       }},
      {"target_entropy", [](CliConfig &c, const json &v) {
         if (v.is_null())
           c.run.sac.target_entropy.reset();
         else
           c.run.sac.target_entropy = as<double>(v, "target_entropy");
       }},
      {"log_std_min", [](CliConfig &c, const json &v) {
         c.run.sac.log_std_min = as<double>(v, "log_std_min");
       }},
      {"log_std_max", [](CliConfig &c, const json &v) {
         c.run.sac.log_std_max = as<double>(v, "log_std_max");
       }},
      {"initial_log_alpha", [](CliConfig &c, const json &v) {
         c.run.sac.initial_log_alpha = as<double>(v, "initial_log_alpha");
       }},
      {"buffer_size", [](CliConfig &c, const json &v) {
         c.run.replay.capacity = as<std::size_t>(v, "buffer_size");
       }},
      {"warmup", [](CliConfig &c, const json &v) {
         c.run.replay.warmup = as<std::size_t>(v, "warmup");
       }},
      {"zeta_th", [](CliConfig &c, const json &v) {
         c.run.replay.zeta_th = as<double>(v, "zeta_th");
       }},
      {"xi", [](CliConfig &c, const json &v) { c.run.replay.xi = as<int>(v, "xi"); }},
      {"beta1", [](CliConfig &c, const json &v) {
         c.run.replay.beta1 = as<double>(v, "beta1");
       }},
      {"beta2", [](CliConfig &c, const json &v) {
         c.run.replay.beta2_initial = as<double>(v, "beta2");
       }},
      {"eta0", [](CliConfig &c, const json &v) { c.run.replay.eta0 = as<double>(v, "eta0"); }},
      {"eta1", [](CliConfig &c, const json &v) { c.run.replay.eta1 = as<double>(v, "eta1"); }},
      {"ere_c_min", [](CliConfig &c, const json &v) {
         c.run.replay.ere_c_min = as<std::size_t>(v, "ere_c_min");
       }},
  };
  return table;
}

void check_keys(const json &j, const char *origin) {
  if (j.is_null())
    return;
  if (!j.is_object())
    throw ConfigError(std::string(origin) + " must be a JSON object");
  for (const auto &[key, _] : j.items())
    if (!setters().count(key))
      throw ConfigError("unknown config key '" + key + "' in " + origin);
}

} // namespace

CliConfig resolve_config(const json &file_values, const json &overrides) {
  check_keys(file_values, "config file");
  check_keys(overrides, "overrides");
  json merged = file_values.is_null() ? json::object() : file_values;
  if (!overrides.is_null())
    for (const auto &[key, value] : overrides.items())
      merged[key] = value;

  const std::string env =
      merged.contains("env") ? as<std::string>(merged["env"], "env") : "pendulum";
  CliConfig c;
  c.run = default_run_config(env);
  c.out_dir = default_out_dir();
  for (const auto &[key, value] : merged.items())
    setters().at(key)(c, value);
  c.run.validate();
  return c;
}

json to_json(const CliConfig &c) {
  const auto &r = c.run;
  json j;
  j["env"] = r.env;
  j["variant"] = to_string(r.variant);
  j["total_steps"] = r.total_steps;
  j["unit_steps"] = r.unit_steps;
  j["seeds"] = r.seeds;
  j["eval_episodes"] = r.eval_episodes;
  j["smoothing_window"] = r.smoothing_window;
  j["final_units"] = r.final_units;
  j["jobs"] = r.jobs;
  j["out_dir"] = c.out_dir;
  j["lr"] = r.sac.lr;
  j["gamma"] = r.sac.gamma;
  j["soft_update_factor"] = r.sac.soft_update_factor;
  j["batch_size"] = r.sac.batch_size;
  j["gradient_steps"] = r.sac.gradient_steps;
  j["hidden"] = r.sac.hidden;
  j["activation"] = to_string(r.sac.activation);
  j["target_entropy"] =
      r.sac.target_entropy ? json(*r.sac.target_entropy) : json(nullptr);
  j["log_std_min"] = r.sac.log_std_min;
  j["log_std_max"] = r.sac.log_std_max;
  j["initial_log_alpha"] = r.sac.initial_log_alpha;
  j["buffer_size"] = r.replay.capacity;
  j["warmup"] = r.replay.warmup;
  j["zeta_th"] = r.replay.zeta_th;
  j["xi"] = r.replay.xi;
  j["beta1"] = r.replay.beta1;
  j["beta2"] = r.replay.beta2_initial;
  j["eta0"] = r.replay.eta0;
  j["eta1"] = r.replay.eta1;
  j["ere_c_min"] = r.replay.ere_c_min;
  return j;
}

} // namespace isac
