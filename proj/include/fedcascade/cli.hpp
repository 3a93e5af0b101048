#pragma once

// Subcommand bodies for the command-line tool. Each returns a process exit
// code, writes summaries to `out` and failure reasons to `err`.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedcascade/config.hpp"
#include "fedcascade/ingest.hpp"
#include "fedcascade/runner.hpp"

namespace fedcascade {

struct SimulateOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> user_sample_seed;
  std::optional<std::string> output;
  unsigned jobs = 1;
  bool dump_effective_config = false;
};

inline std::string mean_pm(const std::vector<SeriesPoint>& s) {
  if (s.empty()) return "n/a";
  std::ostringstream o;
  o << std::setprecision(6) << s.back().mean << " +- " << s.back().stddev;
  return o.str();
}

inline int cmd_simulate(const SimulateOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    CliConfig cfg = load_config(opt.config_path);
    if (opt.seed) cfg.base_seed = *opt.seed;
    if (opt.user_sample_seed) cfg.user_sample_seed = *opt.user_sample_seed;
    if (opt.output) cfg.output = *opt.output;
    for (const auto& w : cfg.warnings) err << "warning: " << w << '\n';
    if (opt.dump_effective_config) {
      out << effective_config(cfg);
      return 0;
    }
    if (opt.jobs == 0) throw std::invalid_argument("--jobs must be >= 1");
    const ExperimentConfig x = to_experiment(cfg, opt.jobs);
    const AggregateSeries s = run_experiment(x);
    out << "protocol=" << to_string(cfg.params.protocol) << " runs=" << cfg.num_runs
        << " T=" << cfg.synthetic.horizon << " cum_regret=" << mean_pm(s.cum_regret)
        << " cum_comm=" << mean_pm(s.cum_comm) << " cluster_error=" << mean_pm(s.cluster_error)
        << " csv=" << cfg.output << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

struct IngestCliOptions {
  std::string ratings_path;
  std::string out_path;
  IngestOptions ingest;
};

inline int cmd_ingest(const IngestCliOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    const RatingsTable table = load_ratings(opt.ratings_path);
    const IngestResult res = build_bundle(table, opt.ingest);
    for (const auto& w : res.warnings) err << "warning: " << w << '\n';
    write_bundle(res.bundle, opt.out_path);
    out << "items=" << res.bundle.item_ids.size() << " users=" << res.bundle.user_ids.size()
        << " d=" << res.bundle.d << " clusters=" << res.bundle.num_clusters() << '\n';
    out << "singular_values:";
    for (double v : res.bundle.singular_values) out << ' ' << format_double(v);
    out << '\n';
    out << "min_center_distance: " << format_double(res.bundle.min_center_distance) << '\n';
    out << "bundle: " << opt.out_path << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

// Final mean +- stddev per metric, one row per file in argument order.
inline int cmd_report(const std::vector<std::string>& paths, std::ostream& out, std::ostream& err) {
  try {
    if (paths.empty()) throw std::invalid_argument("report needs at least one CSV file");
    std::vector<AggregateSeries> all;
    for (const auto& p : paths) all.push_back(read_csv(p));
    const std::uint64_t h0 = horizon_of(all.front());
    for (std::size_t i = 1; i < all.size(); ++i) {
      const std::uint64_t h = horizon_of(all[i]);
      if (h != h0)
        throw std::invalid_argument("horizon mismatch: " + paths.front() + " has T=" +
                                    std::to_string(h0) + " but " + paths[i] + " has T=" +
                                    std::to_string(h));
    }
    std::size_t width = 4;
    for (const auto& p : paths) width = std::max(width, p.size());
    out << std::left << std::setw(static_cast<int>(width)) << "file" << "  " << std::setw(10) << "T"
        << "  " << std::setw(26) << "cum_regret" << "  " << std::setw(26) << "cum_comm" << "  "
        << "cluster_error" << '\n';
    for (std::size_t i = 0; i < all.size(); ++i)
      out << std::left << std::setw(static_cast<int>(width)) << paths[i] << "  " << std::setw(10)
          << horizon_of(all[i]) << "  " << std::setw(26) << mean_pm(all[i].cum_regret) << "  "
          << std::setw(26) << mean_pm(all[i].cum_comm) << "  " << mean_pm(all[i].cluster_error)
          << '\n';
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fedcascade
