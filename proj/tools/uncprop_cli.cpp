// uncprop: command-line front end.
//
//   uncprop <synth|train-upstream|train-downstream|evaluate|report> --config PATH
//           [--seed INT] [--mc-samples INT] [--out DIR] [--threads INT]
//
// Exit codes: 0 ok, 1 other failure, 2 config error, 3 missing artifact, 4 NaN/Inf.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "uncprop/commands.hpp"

using namespace uncprop;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> mc_samples;
  std::optional<std::string> out;
  int threads = 0;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "Run configuration (JSON)")->required();
  sub->add_option("--seed", f.seed, "Override the seed of this command's stage");
  sub->add_option("--mc-samples", f.mc_samples, "Monte Carlo samples at evaluation (default 256)")
      ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));
  sub->add_option("--out", f.out, "Output directory (overrides output_dir)");
  sub->add_option("--threads", f.threads, "Worker threads (default: UNCPROP_THREADS, else 1)")
      ->check(CLI::PositiveNumber);
}

CommandContext make_context(const Flags& f, const std::string& command) {
  CommandContext ctx;
  ctx.config = load_config(f.config);
  RunConfig& c = ctx.config;
  if (f.seed) {
    if (command == "synth") c.dataset.seed = *f.seed;
    else if (command == "train-upstream") c.train_upstream.seed = *f.seed;
    else if (command == "train-downstream") c.train_downstream.seed = *f.seed;
    else if (command == "evaluate") c.mc_seed = *f.seed;
  }
  if (f.mc_samples) c.mc_samples = *f.mc_samples;
  if (f.out) c.output_dir = *f.out;
  ctx.threads = resolve_threads(f.threads);
  return ctx;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo uncertainty propagation through a reconstruction -> prediction pipeline"};
  app.require_subcommand(1);
  Flags flags;
  const char* names[] = {"synth", "train-upstream", "train-downstream", "evaluate", "report"};
  const char* help[] = {"Generate the synthetic phantom dataset", "Train the upstream reconstruction model",
                        "Train the downstream model on upstream samples",
                        "Run the acceleration sweep and write CSVs", "Recompute and audit the report from scatter.csv"};
  for (int i = 0; i < 5; ++i) add_flags(app.add_subcommand(names[i], help[i]), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const CommandContext ctx = make_context(flags, command);
    if (command == "synth") return cmd_synth(ctx);
    if (command == "train-upstream") return cmd_train_upstream(ctx);
    if (command == "train-downstream") return cmd_train_downstream(ctx);
    if (command == "evaluate") return cmd_evaluate(ctx);
    return cmd_report(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return kExitMissing;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}
