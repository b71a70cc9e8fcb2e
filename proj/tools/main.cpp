#include <CLI11.hpp>

#include "pointpert/cli.hpp"

int main(int argc, char** argv) {
  namespace pc = pointpert::cli;
  CLI::App app{"Point perturbations of the Laplacian on T^2, T^3 and S^2"};
  app.set_version_flag("--version", pc::kVersion);
  pc::Options opt;
  app.add_option("--config", opt.config, "INI experiment file")->required()->check(CLI::ExistingFile);
  app.add_option("--out", opt.out, "output directory")->capture_default_str();
  app.add_option("--threads", opt.threads, "worker threads for the measure scan")->check(CLI::Range(1u, 256u))->capture_default_str();
  app.add_option("--seed", opt.seed, "seed for the random coupling vector")->capture_default_str();
  app.add_flag("--verbose", opt.verbose, "progress on stderr");
  std::string sub;
  app.add_option("subcommand", sub, "shells | weyl | secular | green | quasimode | measure | all")
      ->required()
      ->check(CLI::IsMember(pc::Runner::subcommands()));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pc::config_error;
  }
  return pc::run(sub, opt);
}
