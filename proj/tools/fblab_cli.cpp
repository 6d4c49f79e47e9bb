#include <CLI11.hpp>

#include "fblab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"fblab: two-phase free boundary minimizers and their regularity diagnostics"};
  app.require_subcommand(1);
  fblab::cli::Invocation inv;
  const std::pair<const char*, const char*> commands[] = {
      {"solve", "minimize J_gamma for gamma > 0"},
      {"continue", "continue in gamma down to 0 and diagnose the result"},
      {"diagnose", "run the regularity diagnostics on a solution CSV"},
      {"oracle", "sample a closed-form or brute-force reference solution"},
      {"sweep", "solve and diagnose over a (p, gamma, q) grid"},
      {"report", "summarize an output directory"},
  };
  std::uint64_t seed = 0;
  std::string out;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    sub->add_flag("--plot", inv.plot, "write SVG plots");
    sub->add_flag("--check", inv.check, "evaluate acceptance checks; exit 4 on failure");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
    sub->add_option("--threads", inv.threads, "worker threads")->check(CLI::PositiveNumber);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fblab::cli::kConfigError;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    inv.command = sub->get_name();
    if (sub->count("--seed")) inv.seed = seed;
    if (sub->count("--out")) inv.out = out;
  }
  return fblab::cli::run(inv);
}
