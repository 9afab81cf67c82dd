// Command-line front end: one subcommand per pipeline stage plus run-all.
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "probing/error.hpp"
#include "probing/pipeline.hpp"

using namespace probing;

int main(int argc, char** argv) {
  CLI::App app{"Layer-wise probing of contextual encoders"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> seeds;
  std::optional<std::string> output_dir, cache_dir;
  std::string log_level = "info";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "experiment configuration (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed");
    sub->add_option("--seeds", seeds, "training seeds per probe; metrics are averaged")
        ->check(CLI::PositiveNumber);
    sub->add_option("--output-dir", output_dir, "artifact directory");
    sub->add_option("--cache-dir", cache_dir, "layer-stack cache root");
    sub->add_option("--log-level", log_level, "trace, debug, info, warn, error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));
  };

  std::vector<Stage> stages;
  const std::vector<std::pair<const char*, const char*>> subs{
      {"ingest", "parse corpora and write span examples"},
      {"extract", "encode every context into the layer cache"},
      {"train", "train one probe per (encoder, task, mode, layer)"},
      {"evaluate", "accuracy, deltas, per-label F1 and mixing weights"},
      {"analyze", "hard-token filter, trajectories, class groups, confusions"},
      {"report", "figures as CSV, SVG and PNG"},
      {"run-all", "every stage in order"}};
  for (const auto& [name, help] : subs) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    const std::string n = name;
    sub->callback([&stages, n] {
      if (n == "run-all")
        stages = kAllStages;
      else
        stages = {parse_stage(n)};
    });
  }

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    auto cfg = load_experiment(config_path);
    if (seed) cfg.seed = *seed;
    if (seeds) cfg.seeds = *seeds;
    if (output_dir) cfg.output_dir = *output_dir;
    if (cache_dir) cfg.cache_dir = *cache_dir;
    const auto summary = run_stages(cfg, stages);
    spdlog::info("{} probes trained, {} reused, {} failed artifacts",
                 summary.trained_cells.size(), summary.skipped_cells.size(),
                 summary.failures.size());
    for (const auto& f : summary.failures) std::cerr << "failed: " << f.path << ": " << f.error << '\n';
    return summary.ok() ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
