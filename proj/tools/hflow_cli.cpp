// Batch experiment runner. Exit codes: 0 ok, 1 validation, 2 numerical,
// 3 statistical acceptance failure.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hflow/hflow.hpp"

namespace {

int report(const std::string& name, const hflow::RunOutcome& r, const std::string& dir) {
  for (const auto& note : r.notes) std::cerr << name << ": " << note << '\n';
  if (r.exit_code != hflow::exit_ok) std::cerr << name << ": " << r.status << ": " << r.message << '\n';
  for (const auto& f : r.files) std::cout << dir << '/' << f << '\n';
  return r.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coalescing Harris flows and their smooth approximations"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HFLOW_VERSION);

  std::string config_path;
  std::string output_dir;
  std::uint64_t seed = 0;
  unsigned workers = 0;

  for (const std::string& name : hflow::subcommands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output-dir", output_dir, "override outputs.directory");
    sub->add_option("--seed", seed, "override monte_carlo.root_seed");
    sub->add_option("-j,--workers", workers, "override monte_carlo.workers");
  }
  CLI::App* replay = app.add_subcommand("replay", "rerun a subcommand from its manifest.json");
  std::string manifest_path;
  replay->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
  replay->add_option("-o,--output-dir", output_dir, "write to a different directory");
  CLI::App* show = app.add_subcommand("show-config", "print the canonical form of a config");
  show->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hflow::exit_validation;
  }

  try {
    if (show->parsed()) {
      std::cout << hflow::serialize(hflow::load_config(config_path));
      return 0;
    }
    std::string name;
    hflow::ExperimentConfig config;
    if (replay->parsed()) {
      const hflow::Manifest m = hflow::read_manifest(manifest_path);
      name = m.subcommand;
      config = m.config;
    } else {
      for (CLI::App* sub : app.get_subcommands()) name = sub->get_name();
      config = hflow::load_config(config_path);
      CLI::App* sub = app.get_subcommand(name);
      if (sub->count("--seed")) config.monte_carlo.root_seed = seed;
      if (sub->count("--workers")) config.monte_carlo.workers = workers;
    }
    if (!output_dir.empty()) config.outputs.directory = output_dir;
    return report(name, hflow::run_subcommand(name, config), config.outputs.directory);
  } catch (const hflow::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return hflow::exit_validation;
  }
}
