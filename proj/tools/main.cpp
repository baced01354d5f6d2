#include <CLI11.hpp>
#include <iostream>

#include "cli.hpp"

using namespace hoir;

int main(int argc, char** argv) {
  CLI::App app{"Triplet-reasoning HOI detector with logic-guided training"};
  app.require_subcommand(1);

  cli::CliOptions opt;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* c = cmd->add_option("--config", opt.config_path, "run config (JSON)");
    if (needs_config) c->required();
    cmd->add_option("--seed", opt.seed_override, "override the config seed list");
    cmd->add_option("--steps", opt.steps_override, "override training steps");
    cmd->add_option("--out", opt.out_override, "override the output directory");
    cmd->add_flag("--plots", opt.plots, "write SVG loss/violation curves");
  };

  auto* train = app.add_subcommand("train", "train a model and write metrics");
  add_common(train, true);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", opt.checkpoint, "checkpoint JSON")->required();

  auto* ablate =
      app.add_subcommand("ablate", "run the {TRA, LRL} x seeds study");
  add_common(ablate, true);

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gradcheck
      ->add_option("scope", opt.scope,
                   "tensor-ops | attention | logic | full-model | all")
      ->default_val("all");

  auto* rules = app.add_subcommand("rules", "rule-file utilities");
  auto* rules_check = rules->add_subcommand("check", "parse and validate");
  rules_check->add_option("path", opt.rules_file, "rule file")->required();
  rules_check->add_option("--config", opt.config_path, "config for the vocabulary")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : cli::kExitConfig;
  }

  try {
    if (train->parsed()) return cli::cmd_train(opt);
    if (eval->parsed()) return cli::cmd_eval(opt);
    if (ablate->parsed()) return cli::cmd_ablate(opt);
    if (gradcheck->parsed()) return cli::cmd_gradcheck(opt);
    if (rules->parsed() && rules_check->parsed()) {
      return cli::cmd_rules_check(opt);
    }
    std::cerr << "no command\n";
    return cli::kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const VocabError& e) {
    std::cerr << "vocabulary error: " << e.what() << "\n";
    return cli::kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kExitRuntime;
  }
}
