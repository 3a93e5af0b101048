#pragma once

// Flat key=value experiment configuration.
//
//   # comment            blank lines and text after '#' are ignored
//   key = value          one per line; keys may not repeat
//
// Unset keys take defaults; lambda, alpha_c, delta and snapshot_interval
// have defaults derived from other keys (see resolve_config).

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "fedcascade/agent.hpp"
#include "fedcascade/bundle.hpp"
#include "fedcascade/environment.hpp"
#include "fedcascade/runner.hpp"

namespace fedcascade {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kConfigKeys[] = {
    "lambda",      "alpha_c",          "alpha_d",    "delta",        "R",
    "K",           "protocol",         "horizon",    "items_per_round",
    "num_users",   "num_clusters",     "dim",        "theta_mode",   "clip_weights",
    "num_runs",    "base_seed",        "snapshot_interval",          "output",
    "embeddings",  "user_sample_seed", "beta_scale", "server_order",
};

inline std::string to_string(ThetaMode m) {
  return m == ThetaMode::kOrthogonal ? "orthogonal" : "random_normalized";
}

inline std::string to_string(ServerOrder o) {
  return o == ServerOrder::kUploadFirst ? "upload_first" : "literal";
}

// Raw key/value pairs in file order.
struct ConfigEntries {
  std::map<std::string, std::string> values;
  std::map<std::string, std::size_t> line_of;
};

inline ConfigEntries parse_config_entries(std::istream& in, const std::string& source) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  ConfigEntries out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool known = false;
    for (const char* k : kConfigKeys) known = known || key == k;
    if (!known) throw ConfigError(where + ": unknown config key '" + key + "'");
    if (out.values.count(key)) throw ConfigError(where + ": duplicate config key '" + key + "'");
    if (value.empty()) throw ConfigError(where + ": empty value for '" + key + "'");
    out.values[key] = value;
    out.line_of[key] = lineno;
  }
  return out;
}

// Every setting with its explicit or defaulted value.
struct CliConfig {
  SyntheticConfig synthetic;
  AlgorithmParams params;
  std::size_t num_runs = 1;
  std::uint64_t base_seed = 0;
  std::uint64_t snapshot_interval = 0;
  std::string output = "results.csv";
  std::string embeddings;
  std::uint64_t user_sample_seed = 0;
  std::vector<std::string> warnings;
};

namespace config_detail {

template <typename T>
T number(const ConfigEntries& e, const std::string& key) {
  const std::string& s = e.values.at(key);
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("invalid value '" + s + "' for '" + key + "' (line " +
                      std::to_string(e.line_of.at(key)) + ")");
  return v;
}

inline bool boolean(const ConfigEntries& e, const std::string& key) {
  const std::string& s = e.values.at(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("invalid value '" + s + "' for '" + key + "' (expected true or false)");
}

}  // namespace config_detail

// Applies defaults and validates. Error messages name the offending key.
inline CliConfig resolve_config(const ConfigEntries& e) {
  using config_detail::boolean;
  using config_detail::number;
  auto has = [&](const char* k) { return e.values.count(k) > 0; };
  CliConfig c;
  SyntheticConfig& s = c.synthetic;
  AlgorithmParams& p = c.params;

  if (has("num_users")) s.num_users = number<std::size_t>(e, "num_users");
  if (has("num_clusters")) s.num_clusters = number<std::size_t>(e, "num_clusters");
  if (has("dim")) s.dim = number<std::size_t>(e, "dim");
  if (has("items_per_round")) s.items_per_round = number<std::size_t>(e, "items_per_round");
  if (has("K")) s.K = number<std::size_t>(e, "K");
  if (has("horizon")) s.horizon = number<std::uint64_t>(e, "horizon");
  if (has("theta_mode")) {
    const std::string& m = e.values.at("theta_mode");
    if (m == "orthogonal")
      s.theta_mode = ThetaMode::kOrthogonal;
    else if (m == "random_normalized")
      s.theta_mode = ThetaMode::kRandomNormalized;
    else
      throw ConfigError("invalid value '" + m + "' for 'theta_mode' (orthogonal|random_normalized)");
  }
  if (has("clip_weights")) s.clip_weights = boolean(e, "clip_weights");
  if (has("embeddings")) c.embeddings = e.values.at("embeddings");
  if (has("user_sample_seed")) c.user_sample_seed = number<std::uint64_t>(e, "user_sample_seed");

  Protocol protocol = Protocol::kFedC3UcbH;
  if (has("protocol")) {
    try {
      protocol = parse_protocol(e.values.at("protocol"));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("invalid value for 'protocol': ") + ex.what());
    }
  }
  p = AlgorithmParams::defaults_for(s.num_users, s.K, s.dim, s.horizon, protocol);
  p.lambda = 1.0;
  if (has("lambda")) {
    p.lambda = number<double>(e, "lambda");
  } else if (protocol == Protocol::kForceComm) {
    p.lambda = static_cast<double>(s.K) + 1.0;
    c.warnings.push_back("force_comm requires lambda > K; lambda raised to " +
                         format_double(p.lambda));
  }
  if (has("alpha_c")) p.alpha_c = number<double>(e, "alpha_c");
  if (has("alpha_d")) p.alpha_d = number<double>(e, "alpha_d");
  if (has("delta")) p.delta = number<double>(e, "delta");
  if (has("R")) p.R = number<double>(e, "R");
  if (has("beta_scale")) p.beta_scale = number<double>(e, "beta_scale");
  if (has("server_order")) {
    const std::string& o = e.values.at("server_order");
    if (o == "upload_first")
      p.server_order = ServerOrder::kUploadFirst;
    else if (o == "literal")
      p.server_order = ServerOrder::kLiteral;
    else
      throw ConfigError("invalid value '" + o + "' for 'server_order' (upload_first|literal)");
  }
  if (has("num_runs")) c.num_runs = number<std::size_t>(e, "num_runs");
  if (has("base_seed")) c.base_seed = number<std::uint64_t>(e, "base_seed");
  c.snapshot_interval = has("snapshot_interval") ? number<std::uint64_t>(e, "snapshot_interval")
                                                 : default_snapshot_interval(s.horizon);
  if (has("output")) c.output = e.values.at("output");

  if (!(p.lambda > 0.0)) throw ConfigError("lambda must be > 0");
  if (!(p.alpha_c > 0.0)) throw ConfigError("alpha_c must be > 0");
  if (!(p.alpha_d > 0.0)) throw ConfigError("alpha_d must be > 0");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw ConfigError("delta must be in (0,1)");
  if (!(p.R > 0.0)) throw ConfigError("R must be > 0");
  if (!(p.beta_scale >= 0.0)) throw ConfigError("beta_scale must be >= 0");
  if (s.K == 0) throw ConfigError("K must be >= 1");
  if (s.K > s.items_per_round) throw ConfigError("K must not exceed items_per_round");
  if (s.num_users == 0) throw ConfigError("num_users must be >= 1");
  if (c.num_runs == 0) throw ConfigError("num_runs must be >= 1");
  if (c.snapshot_interval == 0) throw ConfigError("snapshot_interval must be >= 1");
  if (protocol == Protocol::kForceComm && !(p.lambda > static_cast<double>(s.K)))
    throw ConfigError("lambda must exceed K under force_comm (lambda=" + format_double(p.lambda) +
                      ", K=" + std::to_string(s.K) + ")");
  if (c.embeddings.empty()) {
    if (s.num_clusters == 0) throw ConfigError("num_clusters must be >= 1");
    if (s.num_clusters > s.num_users) throw ConfigError("num_clusters must not exceed num_users");
    if (s.dim == 0) throw ConfigError("dim must be >= 1");
    if (s.theta_mode == ThetaMode::kOrthogonal && s.num_clusters > s.dim)
      throw ConfigError("num_clusters must not exceed dim when theta_mode=orthogonal");
  }
  return c;
}

inline CliConfig parse_config(std::istream& in, const std::string& source = "<config>") {
  return resolve_config(parse_config_entries(in, source));
}

inline CliConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  return parse_config(in, path);
}

// Fully defaulted config; parsing it back yields the same CliConfig.
inline std::string effective_config(const CliConfig& c) {
  const SyntheticConfig& s = c.synthetic;
  const AlgorithmParams& p = c.params;
  std::ostringstream o;
  o << "# effective configuration\n"
    << "protocol = " << to_string(p.protocol) << '\n'
    << "horizon = " << s.horizon << '\n'
    << "num_users = " << s.num_users << '\n'
    << "num_clusters = " << s.num_clusters << '\n'
    << "dim = " << s.dim << '\n'
    << "items_per_round = " << s.items_per_round << '\n'
    << "K = " << s.K << '\n'
    << "theta_mode = " << to_string(s.theta_mode) << '\n'
    << "clip_weights = " << (s.clip_weights ? "true" : "false") << '\n'
    << "lambda = " << format_double(p.lambda) << '\n'
    << "alpha_c = " << format_double(p.alpha_c) << '\n'
    << "alpha_d = " << format_double(p.alpha_d) << '\n'
    << "delta = " << format_double(p.delta) << '\n'
    << "R = " << format_double(p.R) << '\n'
    << "beta_scale = " << format_double(p.beta_scale) << '\n'
    << "server_order = " << to_string(p.server_order) << '\n'
    << "num_runs = " << c.num_runs << '\n'
    << "base_seed = " << c.base_seed << '\n'
    << "snapshot_interval = " << c.snapshot_interval << '\n'
    << "output = " << c.output << '\n';
  if (!c.embeddings.empty())
    o << "embeddings = " << c.embeddings << '\n' << "user_sample_seed = " << c.user_sample_seed << '\n';
  return o.str();
}

inline ExperimentConfig to_experiment(const CliConfig& c, unsigned jobs = 1) {
  ExperimentConfig x;
  x.env.synthetic = c.synthetic;
  x.env.synthetic.seed = c.base_seed;
  if (!c.embeddings.empty()) {
    x.env.bundle = std::make_shared<EmbeddingBundle>(read_bundle(c.embeddings));
    x.env.user_sample_seed = c.user_sample_seed;
  }
  x.params = c.params;
  x.num_runs = c.num_runs;
  x.base_seed = c.base_seed;
  x.snapshot_interval = c.snapshot_interval;
  x.output_path = c.output;
  x.jobs = jobs;
  return x;
}

}  // namespace fedcascade
