// dsink: command-line front end for the synthetic distillation pipeline.
//
//   dsink --config exp.cfg gen-data
//   dsink --config exp.cfg train-aux
//   dsink --config exp.cfg --seed 3 train --arm dsink
//   dsink --config exp.cfg report
//
// Failures print one line, "error[<kind>]: <message>", and exit with
// 2 (config), 3 (I/O or checksum) or 4 (numerical abort).

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dsink/config.hpp"
#include "dsink/error.hpp"
#include "dsink/pipeline.hpp"

namespace {

int fail(dsink::ErrorKind kind, const std::string& message) {
  std::cerr << "error[" << dsink::to_string(kind) << "]: " << message << '\n';
  return dsink::exit_code(kind);
}

std::string arm_list() {
  std::string s;
  for (const auto& a : dsink::arm_names()) s += (s.empty() ? "" : ", ") + a;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-granularity Sinkhorn distillation on synthetic long-tailed noisy data"};
  app.set_version_flag("--version", dsink::cli::kToolVersion);
  app.require_subcommand(1);

  dsink::cli::GlobalOptions global;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", global.config, "experiment config file (key = value)")->required();
  auto* seed_opt = app.add_option("--seed", seed, "override every seed in the config");
  auto* out_opt = app.add_option("--out-dir", out_dir, "override paths.out_dir");
  app.add_flag("--debug-invariants", global.debug_invariants,
               "check proxy-label marginals on every training batch");

  auto* gen = app.add_subcommand("gen-data", "generate the train and test datasets");
  auto* train_aux = app.add_subcommand("train-aux", "train f_L and f_N and cache their predictions");
  auto* train = app.add_subcommand("train", "train or evaluate one arm");
  std::string arm;
  train->add_option("--arm", arm, "one of: " + arm_list())->required();
  auto* report = app.add_subcommand("report", "summarize the results table");
  std::string results;
  report->add_option("--results", results, "results table (default: from the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(dsink::ErrorKind::kConfig, std::string(e.what()) + " (see --help)");
  }

  try {
    if (*seed_opt) global.seed = seed;
    if (*out_opt) global.out_dir = out_dir;
    dsink::ExperimentConfig cfg = dsink::cli::resolve_config(global);
    std::string manifest_name;
    dsink::cli::RunManifest manifest;
    if (*gen) {
      manifest = dsink::cli::cmd_gen_data(cfg, std::cout);
      manifest_name = "gen-data_seed" + std::to_string(cfg.dataset.seed);
    } else if (*train_aux) {
      manifest = dsink::cli::cmd_train_aux(cfg, std::cout);
      manifest_name = "train-aux_seed" + std::to_string(cfg.aux.seed);
    } else if (*train) {
      cfg.train.arm = dsink::arm_from_string(arm);
      manifest = dsink::cli::cmd_train(cfg, std::cout);
      manifest_name = "train-" + arm + "_seed" + std::to_string(cfg.train.seed);
    } else {
      dsink::cli::cmd_report(results.empty() ? cfg.paths.results_path() : std::filesystem::path(results),
                             std::cout);
      return 0;
    }
    manifest.config_path = global.config;
    dsink::cli::write_manifest(manifest, cfg.paths.out_dir, manifest_name);
  } catch (const dsink::Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(dsink::ErrorKind::kIo, e.what());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
