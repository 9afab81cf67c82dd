#include "probing/records.hpp"

#include <istream>
#include <ostream>

#include <json.hpp>

#include "probing/error.hpp"

namespace probing {

std::string_view to_string(ProbeMode mode) {
  return mode == ProbeMode::SINGLE ? "single" : "mix";
}

ProbeMode parse_probe_mode(std::string_view name) {
  if (name == "single" || name == "SINGLE") return ProbeMode::SINGLE;
  if (name == "mix" || name == "MIX") return ProbeMode::MIX;
  throw ValidationError("unknown probe mode '" + std::string(name) + "'");
}

void write_records(std::ostream& out, const std::vector<PredictionRecord>& records) {
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["example_id"] = r.example_id;
    j["model"] = r.model;
    j["mode"] = to_string(r.mode);
    j["layer"] = r.layer;
    j["gold"] = r.gold;
    j["predicted"] = r.predicted;
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRecord> read_records(std::istream& in) {
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("example_id").get<std::string>(), j.at("model").get<std::string>(),
                     parse_probe_mode(j.at("mode").get<std::string>()), j.at("layer").get<int>(),
                     j.at("gold").get<std::string>(), j.at("predicted").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

}  // namespace probing
