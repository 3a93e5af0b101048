// fedcascade: simulate | ingest | report

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedcascade/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated cascading bandit simulator"};
  app.require_subcommand(1);

  fedcascade::SimulateOptions sim;
  std::uint64_t seed = 0, user_sample_seed = 0;
  std::string output;
  auto* simulate = app.add_subcommand("simulate", "run the experiment described by a config file");
  simulate->add_option("config", sim.config_path, "key=value config file")->required();
  auto* seed_opt = simulate->add_option("--seed", seed, "override base_seed");
  auto* sample_opt =
      simulate->add_option("--user-sample-seed", user_sample_seed, "override user_sample_seed");
  auto* output_opt = simulate->add_option("--output", output, "override the CSV output path");
  simulate->add_option("--jobs", sim.jobs, "concurrent replications")->check(CLI::PositiveNumber);
  simulate->add_flag("--dump-effective-config", sim.dump_effective_config,
                     "print the fully defaulted config and exit");

  fedcascade::IngestCliOptions ing;
  auto* ingest = app.add_subcommand("ingest", "build an embedding bundle from a ratings CSV");
  ingest->add_option("--ratings", ing.ratings_path, "CSV with header user_id,item_id,rating")
      ->required();
  ingest->add_option("--out", ing.out_path, "bundle output path")->required();
  ingest->add_option("--dim", ing.ingest.d, "embedding dimension")->capture_default_str();
  ingest->add_option("--clusters", ing.ingest.J, "number of user clusters")->capture_default_str();
  ingest->add_option("--n-items", ing.ingest.n_items, "most-rated items kept")->capture_default_str();
  ingest->add_option("--n-users", ing.ingest.n_users, "most active users kept")->capture_default_str();
  ingest->add_option("--seed", ing.ingest.seed, "svd / k-means seed")->capture_default_str();

  std::vector<std::string> csvs;
  auto* report = app.add_subcommand("report", "compare final metrics of runner CSV files");
  report->add_option("csv", csvs, "runner CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  if (*simulate) {
    if (*seed_opt) sim.seed = seed;
    if (*sample_opt) sim.user_sample_seed = user_sample_seed;
    if (*output_opt) sim.output = output;
    return fedcascade::cmd_simulate(sim, std::cout, std::cerr);
  }
  if (*ingest) return fedcascade::cmd_ingest(ing, std::cout, std::cerr);
  return fedcascade::cmd_report(csvs, std::cout, std::cerr);
}
