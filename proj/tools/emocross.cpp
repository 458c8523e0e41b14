#include <CLI11.hpp>

#include "emocross/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"emocross: joint cross-domain transfer learning for emotion "
               "recognition, CPU-only"};
  app.require_subcommand(1);

  emocross::cli::Invocation inv;

  const auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("-c,--config", inv.config_path, "configuration file");
    if (needs_config) opt->required();
    cmd->add_option("-s,--set", inv.overrides,
                    "override a scalar config field (key=value), repeatable");
    cmd->add_option("-o,--out", inv.out_dir, "output directory");
  };

  auto* pretrain = app.add_subcommand("pretrain", "run one pretraining stage");
  add_common(pretrain, true);
  pretrain->add_option("--stage", inv.stage_sel, "stage name or index");

  auto* finetune = app.add_subcommand("finetune", "run one fine-tuning stage");
  add_common(finetune, true);
  finetune->add_option("--stage", inv.stage_sel, "stage name or index");

  auto* joint = app.add_subcommand("joint-train", "run one joint-learning stage");
  add_common(joint, true);
  joint->add_option("--stage", inv.stage_sel, "stage name or index");

  auto* pipeline = app.add_subcommand("pipeline", "run every stage in order");
  add_common(pipeline, true);

  auto* synth = app.add_subcommand("synth",
                                   "write the config's synthetic dataset pairs");
  add_common(synth, true);

  auto* features = app.add_subcommand("features",
                                      "extract log-mel segment caches from wav files");
  add_common(features, false);
  features->add_option("wav", inv.inputs, "wav files");
  features->add_option("--manifest", inv.manifest, "read wav paths from a manifest");

  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "finite-difference check of every layer and loss");
  add_common(gradcheck, false);
  gradcheck->add_option("--seeds", inv.gradcheck_seeds, "random seeds to sweep");

  auto* evalc = app.add_subcommand("eval", "evaluate checkpoints on datasets");
  add_common(evalc, false);
  evalc->add_option("--checkpoint", inv.checkpoints, "checkpoint file(s)")->required();
  evalc->add_option("--dataset", inv.eval_datasets,
                    "dataset name(s) from the config or manifest path(s)")
      ->required();
  evalc->add_option("--head", inv.head, "classifier head: 1, 2, both, or role");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : emocross::cli::kExitUsage;
  }

  inv.command = app.get_subcommands().front()->get_name();
  return emocross::cli::run(inv);
}
