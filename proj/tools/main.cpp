// scorelab: config-driven experiment runner.
//
//   scorelab <sample|compare|interp|ablate|distill> --config FILE [--seed N] [--out DIR] [--threads N]
//   scorelab report --out DIR
//
// Exit status: 0 success, 2 bad config, 3 numerical divergence, 1 anything else.

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "experiment.hpp"

namespace {

namespace cli = scorelab::cli;

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

int run(cli::ExperimentKind expected, const Flags& flags) {
  cli::Overrides overrides;
  overrides.seed = flags.seed;
  if (flags.out) overrides.out = *flags.out;
  overrides.threads = flags.threads;
  const cli::Experiment e = cli::load_experiment(flags.config, overrides);
  if (e.kind != expected) {
    throw cli::ConfigError("kind", "config is a \"" + std::string(cli::to_string(e.kind)) +
                                       "\" experiment, not \"" + std::string(cli::to_string(expected)) + "\"");
  }
  const cli::RunResult result = cli::run_experiment(e);
  cli::print_table(std::cout, result.summary);
  std::cout << "config hash " << e.config_hash << ", " << result.files.size() << " files in "
            << e.out_dir.generic_string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Negative-prompt composition experiments on analytic Gaussian-mixture worlds"};
  app.require_subcommand(1);

  Flags flags;
  cli::ExperimentKind chosen = cli::ExperimentKind::Sample;
  bool report = false;

  const struct {
    const char* name;
    cli::ExperimentKind kind;
    const char* help;
  } kinds[] = {
      {"sample", cli::ExperimentKind::Sample, "Generate samples with one composer and score them"},
      {"compare", cli::ExperimentKind::Compare, "Success rates of several composers on one target"},
      {"interp", cli::ExperimentKind::Interp, "Interpolation sweep between view prompts"},
      {"ablate", cli::ExperimentKind::Ablate, "Success rates across negative-prompt weights"},
      {"distill", cli::ExperimentKind::Distill, "Score-distillation runs on the toy scene"},
  };
  for (const auto& k : kinds) {
    CLI::App* sub = app.add_subcommand(k.name, k.help);
    sub->add_option("--config", flags.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", flags.seed, "Override seeds.first");
    sub->add_option("--out", flags.out, "Override the output directory");
    sub->add_option("--threads", flags.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    sub->callback([&chosen, kind = k.kind] { chosen = kind; });
  }
  CLI::App* rep = app.add_subcommand("report", "Print the summary table of a finished run");
  rep->add_option("--out,dir", flags.out, "Output directory of the run")->required();
  rep->callback([&report] { report = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (report) {
      std::string hash;
      const auto table = cli::read_report_summary(*flags.out, &hash);
      cli::print_table(std::cout, table);
      std::cout << "config hash " << hash << '\n';
      return 0;
    }
    return run(chosen, flags);
  } catch (const cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const scorelab::DivergenceError& e) {
    std::cerr << "diverged at iteration " << e.iteration() << ": " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
