#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "pmr/error.hpp"
#include "pmr/pipeline/pipeline.hpp"

namespace pl = pmr::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"Physically plausible motion restoration pipeline"};
  app.require_subcommand(1);

  std::string config_path, out = "out";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--override", overrides, "key.path=value, repeatable")->take_all();

  struct Cmd {
    const char* name;
    const char* help;
  };
  const Cmd cmds[] = {{"synth", "write a synthetic corpus with capture evidence"},
                      {"detect", "score a clip against its masks and flag flawed frames"},
                      {"correct", "regenerate flagged frames with the motion denoiser"},
                      {"train-mcm", "train the motion denoiser on a corpus"},
                      {"pretrain", "pretrain the tracking controller on a corpus"},
                      {"restore", "adapt the controller to one clip and simulate it"},
                      {"bench", "evaluate plausibility metrics"},
                      {"demo", "run every stage on a small synthetic corpus"}};
  for (const auto& c : cmds) app.add_subcommand(c.name, c.help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pl::kValidation;
  }

  pl::PipelineConfig cfg;
  try {
    cfg = pl::load_config(config_path, overrides, seed ? &*seed : nullptr);
  } catch (const std::exception& e) {
    std::cerr << "pmr: invalid configuration: " << e.what() << '\n';
    return pl::kValidation;
  }

  const std::string stage = app.get_subcommands().front()->get_name();
  try {
    return stage == "demo" ? pl::run_demo(cfg, out) : pl::run_stage(stage, cfg, out);
  } catch (const pmr::ValidationError& e) {
    std::cerr << "pmr: " << e.what() << '\n';
    return pl::kValidation;
  } catch (const std::exception& e) {
    std::cerr << "pmr: " << e.what() << '\n';
    return pl::kStageFailure;
  }
}
