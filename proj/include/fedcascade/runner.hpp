#pragma once

// Replicated experiments: runs over seeds base_seed + i, per-snapshot
// mean / population stddev of each metric, and the CSV round trip.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <thread>
#include <vector>

#include "fedcascade/protocol.hpp"

namespace fedcascade {

struct ExperimentConfig {
  EnvironmentConfig env;
  AlgorithmParams params;
  std::size_t num_runs = 1;
  std::uint64_t base_seed = 0;
  std::uint64_t snapshot_interval = 0;  // 0 picks default_snapshot_interval(T)
  std::string output_path;
  unsigned jobs = 1;

  void validate() const {
    if (num_runs < 1) throw std::invalid_argument("num_runs must be >= 1");
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
  }
};

enum class Metric { kCumRegret, kCumComm, kClusterError };

inline constexpr Metric kAllMetrics[] = {Metric::kCumRegret, Metric::kCumComm,
                                         Metric::kClusterError};

inline std::string to_string(Metric m) {
  switch (m) {
    case Metric::kCumRegret: return "cum_regret";
    case Metric::kCumComm: return "cum_comm";
    case Metric::kClusterError: return "cluster_error";
  }
  return "unknown";
}

inline Metric parse_metric(const std::string& s) {
  for (Metric m : kAllMetrics)
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown metric '" + s + "'");
}

struct SeriesPoint {
  std::uint64_t round = 0;
  double mean = 0.0;
  double stddev = 0.0;
  bool operator==(const SeriesPoint&) const = default;
};

struct AggregateSeries {
  std::vector<SeriesPoint> cum_regret;
  std::vector<SeriesPoint> cum_comm;
  std::vector<SeriesPoint> cluster_error;

  std::vector<SeriesPoint>& operator[](Metric m) {
    switch (m) {
      case Metric::kCumRegret: return cum_regret;
      case Metric::kCumComm: return cum_comm;
      default: return cluster_error;
    }
  }
  const std::vector<SeriesPoint>& operator[](Metric m) const {
    return const_cast<AggregateSeries&>(*this)[m];
  }
  bool empty() const { return cum_regret.empty() && cum_comm.empty() && cluster_error.empty(); }
  bool operator==(const AggregateSeries&) const = default;
};

// One run reduced to its snapshot rows.
struct RunSnapshots {
  std::vector<std::uint64_t> rounds;
  std::vector<double> cum_regret, cum_comm, cluster_error;
};

inline RunSnapshots snapshots_of(const RunResult& r) {
  RunSnapshots s;
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    if (!r.records[i].cluster_error_rate) continue;
    s.rounds.push_back(r.records[i].t);
    s.cum_regret.push_back(r.cumulative_regret[i]);
    s.cum_comm.push_back(static_cast<double>(r.cumulative_comm[i]));
    s.cluster_error.push_back(*r.records[i].cluster_error_rate);
  }
  return s;
}

// Population mean and stddev; the result does not depend on input order.
inline SeriesPoint summarize(std::uint64_t round, std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("summarize: no values");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {round, mean, std::sqrt(ss / n)};
}

inline AggregateSeries aggregate(const std::vector<RunSnapshots>& runs) {
  AggregateSeries out;
  if (runs.empty()) return out;
  const auto& rounds = runs.front().rounds;
  for (const auto& r : runs)
    if (r.rounds != rounds) throw std::invalid_argument("aggregate: runs disagree on snapshot rounds");
  for (std::size_t i = 0; i < rounds.size(); ++i) {
    std::vector<double> reg, comm, err;
    for (const auto& r : runs) {
      reg.push_back(r.cum_regret[i]);
      comm.push_back(r.cum_comm[i]);
      err.push_back(r.cluster_error[i]);
    }
    out.cum_regret.push_back(summarize(rounds[i], std::move(reg)));
    out.cum_comm.push_back(summarize(rounds[i], std::move(comm)));
    out.cluster_error.push_back(summarize(rounds[i], std::move(err)));
  }
  return out;
}

// Replications run on up to cfg.jobs threads; results are reduced in run order.
inline std::vector<RunSnapshots> run_replications(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<RunSnapshots> snaps(cfg.num_runs);
  std::vector<std::exception_ptr> errors(cfg.num_runs);
  auto one = [&](std::size_t i) {
    try {
      snaps[i] = snapshots_of(run(cfg.env, cfg.params, cfg.base_seed + i, cfg.snapshot_interval));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(cfg.jobs, cfg.num_runs);
  if (workers <= 1) {
    for (std::size_t i = 0; i < cfg.num_runs; ++i) one(i);
  } else {
    std::mutex mu;
    std::size_t next = 0;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= cfg.num_runs) return;
            i = next++;
          }
          one(i);
        }
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return snaps;
}

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

inline constexpr const char* kCsvComment =
    "# stddev is the population standard deviation (divide by num_runs)";
inline constexpr const char* kCsvHeader = "metric,round,mean,stddev";

inline void write_csv(const AggregateSeries& s, std::ostream& out) {
  out << kCsvComment << '\n' << kCsvHeader << '\n';
  for (Metric m : kAllMetrics)
    for (const auto& p : s[m])
      out << to_string(m) << ',' << p.round << ',' << format_double(p.mean) << ','
          << format_double(p.stddev) << '\n';
}

inline std::string csv_string(const AggregateSeries& s) {
  std::ostringstream out;
  write_csv(s, out);
  return out.str();
}

inline void write_csv(const AggregateSeries& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(s, out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

class CsvFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace csv_detail {

template <typename T>
T parse_number(const std::string& field, const std::string& where) {
  T v{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size())
    throw CsvFormatError(where + ": bad number '" + field + "'");
  return v;
}

}  // namespace csv_detail

inline AggregateSeries read_csv(std::istream& in, const std::string& source = "<csv>") {
  AggregateSeries s;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno);
    if (!header) {
      if (line != kCsvHeader)
        throw CsvFormatError(where + ": expected header '" + std::string(kCsvHeader) + "'");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw CsvFormatError(where + ": expected 4 fields");
    Metric m;
    try {
      m = parse_metric(f[0]);
    } catch (const std::invalid_argument& e) {
      throw CsvFormatError(where + ": " + e.what());
    }
    SeriesPoint p{csv_detail::parse_number<std::uint64_t>(f[1], where),
                  csv_detail::parse_number<double>(f[2], where),
                  csv_detail::parse_number<double>(f[3], where)};
    auto& series = s[m];
    if (!series.empty() && p.round <= series.back().round)
      throw CsvFormatError(where + ": rounds must ascend within a metric");
    series.push_back(p);
  }
  if (!header) throw CsvFormatError(source + ": missing header '" + std::string(kCsvHeader) + "'");
  return s;
}

inline AggregateSeries read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CSV: " + path);
  return read_csv(in, path);
}

// Largest snapshot round, i.e. the horizon of the run (0 for an empty file).
inline std::uint64_t horizon_of(const AggregateSeries& s) {
  std::uint64_t h = 0;
  for (Metric m : kAllMetrics)
    if (!s[m].empty()) h = std::max(h, s[m].back().round);
  return h;
}

inline AggregateSeries run_experiment(const ExperimentConfig& cfg) {
  AggregateSeries s = aggregate(run_replications(cfg));
  if (!cfg.output_path.empty()) write_csv(s, cfg.output_path);
  return s;
}

}  // namespace fedcascade
