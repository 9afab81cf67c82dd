#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "probing/corpus.hpp"
#include "probing/encoder.hpp"
#include "probing/metrics.hpp"
#include "probing/train.hpp"

namespace probing {

struct EncoderSpec {
  std::string name;
  std::string type;  // toy | signal | command
  EncoderHandle handle;
  std::uint64_t seed = 1;            // toy
  SignalEncoder::Options signal;     // signal
  std::string command;               // command
  std::filesystem::path vocab;       // command
  bool lowercase = false;            // command
};

struct TaskSpec {
  std::string name;
  Task task = Task::POS;
  std::string format;  // conllu | conll2002 | coref-json | signal
  std::map<std::string, std::filesystem::path> files;  // train / valid / test
  std::optional<std::filesystem::path> data;           // single file, split by document
  SplitFractions fractions;
  bool analysis = false;  // run error analysis (POS with UD tags)
  // signal
  std::string encoder;
  std::array<int, 3> sentences{400, 100, 100};
  int min_len = 4, max_len = 12;
};

struct ExperimentConfig {
  std::vector<EncoderSpec> encoders;
  std::vector<TaskSpec> tasks;
  nlohmann::json probe = nlohmann::json::object();  // ProbeConfig overrides
  std::filesystem::path output_dir = "outputs";
  std::optional<std::filesystem::path> cache_dir;
  std::uint64_t seed = 0;
  int seeds = 1;  // independent training seeds per cell; metrics are averaged

  const EncoderSpec& encoder(const std::string& name) const;
};

/// Relative paths inside `j` resolve against `base_dir`. Unknown keys and
/// duplicate or unsafe names are ValidationErrors.
ExperimentConfig parse_experiment(const nlohmann::json& j, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& file);

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec,
                                      const std::filesystem::path& scratch_dir);

enum class Stage { INGEST, EXTRACT, TRAIN, EVALUATE, ANALYZE, REPORT };
std::string_view to_string(Stage s);
Stage parse_stage(std::string_view name);
inline const std::vector<Stage> kAllStages{Stage::INGEST,   Stage::EXTRACT, Stage::TRAIN,
                                           Stage::EVALUATE, Stage::ANALYZE, Stage::REPORT};

struct ArtifactEntry {
  std::string path;  // relative to the output directory, '/'-separated
  bool ok = true;
  std::uint32_t crc32 = 0;
  std::uintmax_t bytes = 0;
  std::string error;
  friend bool operator==(const ArtifactEntry&, const ArtifactEntry&) = default;
};

struct RunSummary {
  std::vector<std::string> trained_cells;
  std::vector<std::string> skipped_cells;
  std::vector<ArtifactEntry> failures;
  bool ok() const { return failures.empty(); }
};

/// Runs the requested stages in order. Artifacts are checksummed into
/// <output_dir>/manifest.json; a probe cell whose files match the manifest
/// is not retrained. A failing artifact is recorded and the run continues.
RunSummary run_stages(const ExperimentConfig& config, const std::vector<Stage>& stages);
inline RunSummary run_pipeline(const ExperimentConfig& config) {
  return run_stages(config, kAllStages);
}

std::vector<ArtifactEntry> read_manifest(const std::filesystem::path& output_dir);

/// Directory of one probe cell relative to the output directory.
std::string cell_dir(const std::string& encoder, const std::string& task, ProbeMode mode,
                     int layer, int seed_index, int seeds);

struct WeightReport {
  std::vector<double> weights;  // applied weight per layer 0..k
  std::vector<int> order;       // layers by decreasing weight, ties by layer
  double gamma = 1.0;
};

/// Mixing weights of a MIX probe. ValidationError for SINGLE probes.
WeightReport report_weights(const TrainedProbe& probe);

/// Accuracy, deltas and F1 averaged over seeds (NaN F1 points are skipped).
std::vector<LayerMetrics> mean_metrics(const std::vector<std::vector<LayerMetrics>>& per_seed);

}  // namespace probing
