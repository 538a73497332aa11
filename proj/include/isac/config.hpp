#ifndef ISAC_CONFIG_HPP
#define ISAC_CONFIG_HPP

#include "isac/harness.hpp"

#include <json.hpp>

#include <string>

namespace isac {

/// A fully resolved experiment: run settings plus where outputs go.
struct CliConfig {
  RunConfig run;
  std::string out_dir;
};

/// Output directory used when none is configured: $ISAC_LAB_OUT, else
/// "isac_out".
std::string default_out_dir();

/// Reads a JSON object from `path`. Errors name the path.
nlohmann::json load_config_file(const std::string &path);

/// Builds a configuration from defaults, then `file_values`, then
/// `overrides` (later wins). Environment-specific defaults follow the
/// resolved "env" key. Unknown keys are rejected by name.
CliConfig resolve_config(const nlohmann::json &file_values,
                         const nlohmann::json &overrides);

/// Canonical form: every key, sorted. resolve_config(to_json(c), {}) == c.
nlohmann::json to_json(const CliConfig &config);

} // namespace isac

#endif
