#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "probing/train.hpp"

namespace probing {

nlohmann::ordered_json config_to_json(const ProbeConfig& config);
/// Applies the keys present in `j` on top of `base`; unknown keys are errors.
ProbeConfig config_from_json(const nlohmann::json& j, ProbeConfig base = {});

/// Writes <dir>/probe.json (configuration, labels, log) and <dir>/probe.bin
/// (named float32 parameter sections). See docs/FORMATS.md.
void save_probe(const TrainedProbe& probe, const std::filesystem::path& dir);
TrainedProbe load_probe(const std::filesystem::path& dir);

}  // namespace probing
