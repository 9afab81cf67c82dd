#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace probing {

enum class ProbeMode { SINGLE, MIX };

std::string_view to_string(ProbeMode mode);
ProbeMode parse_probe_mode(std::string_view name);

/// One test prediction of one probe; the input to every analysis.
struct PredictionRecord {
  std::string example_id;
  std::string model;
  ProbeMode mode = ProbeMode::SINGLE;
  int layer = 0;
  std::string gold;
  std::string predicted;

  bool correct() const { return gold == predicted; }
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// JSON-lines, one record per line:
/// {"example_id", "model", "mode", "layer", "gold", "predicted"}.
void write_records(std::ostream& out, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_records(std::istream& in);

}  // namespace probing
