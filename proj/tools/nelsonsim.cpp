// Command-line front end: one subcommand per pipeline, plus configuration
// validation and a reference-value lookup. Exit code 0 on success, 2 on any
// error (bad configuration, unknown names, hard validation failures).

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nelson/config.hpp"
#include "nelson/oracles.hpp"
#include "nelson/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"nelsonsim: stochastic simulation and verification toolkit for "
               "coupled particle-field models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  bool quiet = false;

  app.add_option("--config", config_path, "JSON configuration file (defaults if omitted)");
  app.add_option("--seed", seed, "override mc.master_seed");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--samples", samples, "override mc.n_samples");
  app.add_flag("--quiet", quiet, "suppress progress output");

  for (const std::string& id : nelson::pipeline_ids())
    app.add_subcommand(id, "run the " + id + " pipeline")->fallthrough();

  bool run_kato = false;
  CLI::App* val = app.add_subcommand("validate", "run configuration checks and report them");
  val->fallthrough();
  val->add_flag("--kato", run_kato, "also run the sampling potential-class diagnostic");

  std::string oracle_name;
  std::vector<double> oracle_args;
  CLI::App* po = app.add_subcommand("print-oracle", "evaluate a reference value by name");
  po->fallthrough();
  po->add_option("--name", oracle_name, "oracle name (omit to list all)");
  po->add_option("--args", oracle_args, "numeric arguments (comma or space separated)")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();

  try {
    if (name == "print-oracle") {
      if (oracle_name.empty()) {
        for (const std::string& n : nelson::oracle::names()) std::cout << n << '\n';
        return 0;
      }
      std::cout << nelson::io::format_double(nelson::oracle::eval(oracle_name, oracle_args))
                << '\n';
      return 0;
    }

    nelson::ExperimentConfig cfg =
        config_path.empty() ? nelson::default_config() : nelson::load_config(config_path);
    if (app.get_option("--seed")->count() > 0) cfg.mc.master_seed = seed;
    if (app.get_option("--samples")->count() > 0) cfg.mc.n_samples = samples;

    if (name == "validate") {
      nelson::ValidationOptions opts;
      opts.run_kato = run_kato;
      const std::vector<nelson::CheckResult> checks = nelson::validate(cfg, opts);
      for (const auto& c : checks)
        std::cout << (c.passed ? "ok   " : (c.hard ? "FAIL " : "warn ")) << c.name << "  ["
                  << nelson::io::format_double(c.value) << "] " << c.message << '\n';
      return nelson::has_hard_failure(checks) ? 2 : 0;
    }

    cfg.experiment = name;
    const nelson::io::RunManifest man = nelson::run_pipeline(cfg, out_dir, quiet);
    if (!quiet) std::cout << man.summary.dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
