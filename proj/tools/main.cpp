#include <iostream>

#include <CLI11.hpp>

#include "config.hpp"
#include "experiment.hpp"

using namespace labelprobe;
using namespace labelprobe::cli;

int main(int argc, char** argv) {
  CLI::App app{"Detect mislabeled training examples by probing trained models."};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::string out;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed, overrides the config");
    sub->add_option("--out", out, "output directory, overrides the config");
  };
  CLI::App* inject = app.add_subcommand("inject-noise", "write a noisy copy of the dataset and its transition matrix");
  common(inject);
  CLI::App* detect = app.add_subcommand("detect", "score every example; writes id, score, rank");
  common(detect);
  CLI::App* pipe = app.add_subcommand("pipeline", "detect, split, handle, search and report");
  common(pipe);
  CLI::App* bench = app.add_subcommand("benchmark", "run the detector x noise x handler matrix");
  common(bench);
  bench->add_option("--workers", workers, std::string("concurrent cells (default $") + kWorkersEnv + " or 1)");

  CLI::App* report = app.add_subcommand("report", "flatten trial logs into one CSV");
  std::vector<std::string> inputs;
  report->add_option("inputs", inputs, "trial logs or directories holding them")->required();
  report->add_option("--out", out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (report->parsed()) {
      std::vector<fs::path> paths(inputs.begin(), inputs.end());
      return cmd_report(paths, out);
    }
    const ExperimentConfig cfg = resolve_config(load_config(config_path), seed,
                                                out.empty() ? std::nullopt : std::optional<fs::path>(out));
    if (inject->parsed()) return cmd_inject_noise(cfg);
    if (detect->parsed()) return cmd_detect(cfg);
    if (pipe->parsed()) return cmd_pipeline(cfg);
    if (bench->parsed()) return cmd_benchmark(cfg, resolve_workers(workers));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
