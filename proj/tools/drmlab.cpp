#include "drmlab/config.hpp"
#include "drmlab/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace drmlab;
  CLI::App app{"drmlab: domain-specific risk minimization lab"};
  app.allow_extras();
  std::string command;
  std::string config_file;
  bool list_keys = false;
  app.add_option("command", command, "one of: gen-data train eval adapt bound sweep-gamma compare-select corr-matrix repro")
      ->check(CLI::IsMember(commands()));
  app.add_option("--config", config_file, "flat 'key = value' file; flags override it");
  app.add_flag("--list-keys", list_keys, "print every configuration key with its default");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : exit_code(ErrorKind::Config);
  }

  if (list_keys) {
    for (const auto& k : config_keys()) std::cout << k.key << " = " << k.default_value << "    # " << k.help << '\n';
    return 0;
  }
  if (command.empty()) {
    std::cerr << app.help();
    return exit_code(ErrorKind::Config);
  }

  RunConfig cfg;
  cfg.command = command;
  try {
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& extra : app.remaining()) apply_override(cfg, extra);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  }
  return run_experiment(cfg, std::cout);
}
