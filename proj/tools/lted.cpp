#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "lted/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Local tracking / edge detection scheduling simulator"};
  app.require_subcommand(1);

  const std::map<std::string, lted::Verb> verbs{
      {"validate", lted::Verb::kValidate},
      {"train-single", lted::Verb::kTrainSingle},
      {"train-federated", lted::Verb::kTrainFederated},
      {"infer", lted::Verb::kInfer},
      {"compare-baselines", lted::Verb::kCompareBaselines},
  };
  const std::map<std::string, std::string> help{
      {"validate", "Check a config file without running anything"},
      {"train-single", "Train a single-device agent, then evaluate it"},
      {"train-federated", "Train one agent per device with periodic parameter averaging"},
      {"infer", "Evaluate a saved checkpoint"},
      {"compare-baselines", "Evaluate the heuristic policies"},
  };

  lted::RunOptions options;
  std::string config, out, checkpoint;
  std::uint64_t seed = 0;
  std::vector<std::string> policies;

  for (const auto& [name, verb] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config, "Experiment config (YAML)")->required();
    if (verb == lted::Verb::kValidate) continue;
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--policies", policies, "Policies to evaluate")->delimiter(',');
    if (verb == lted::Verb::kInfer || verb == lted::Verb::kCompareBaselines) {
      sub->add_option("--checkpoint", checkpoint, "Checkpoint file for lted-ada");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lted::kExitValidation;
  }

  const CLI::App* sub = app.get_subcommands().front();
  auto given = [sub](const char* flag) {
    const CLI::Option* opt = sub->get_option_no_throw(flag);
    return opt != nullptr && opt->count() > 0;
  };
  options.verb = verbs.at(sub->get_name());
  if (given("--seed")) options.seed = seed;
  if (given("--out")) options.out = out;
  if (given("--policies")) options.policies = policies;
  if (given("--checkpoint")) options.checkpoint = checkpoint;
  options.config = config;
  return lted::run(options, std::cout, std::cerr);
}
