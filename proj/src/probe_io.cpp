#include "probing/probe_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "probing/error.hpp"
#include "probing/io.hpp"

namespace probing {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "blob layout assumes little-endian");

namespace {

constexpr char kBlobMagic[4] = {'P', 'R', 'B', 'P'};
constexpr std::uint32_t kBlobVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}

struct Reader {
  std::string_view bytes;
  std::size_t pos = 0;
  const fs::path& path;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw IntegrityError(path.string() + ": truncated parameter blob");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace


nlohmann::ordered_json config_to_json(const ProbeConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(c.mode);
  j["layer"] = c.layer;
  j["input_width"] = c.input_width;
  j["hidden"] = c.hidden;
  j["lstm_layers"] = c.lstm_layers;
  j["dropout_input"] = c.dropout_input;
  j["dropout_recurrent"] = c.dropout_recurrent;
  j["dropout_other"] = c.dropout_other;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["eval_every"] = c.eval_every;
  j["patience"] = c.patience;
  j["seed"] = c.seed;
  j["mix_normalize"] = c.mix_normalize;
  j["mix_gamma"] = c.mix_gamma;
  j["max_batches"] = c.max_batches;
  j["zero_head"] = c.zero_head;
  return j;
}

ProbeConfig config_from_json(const json& j, ProbeConfig c) {
  if (!j.is_object()) throw ValidationError("probe config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "mode") c.mode = parse_probe_mode(v.get<std::string>());
      else if (key == "layer") c.layer = v.get<int>();
      else if (key == "input_width") c.input_width = v.get<int>();
      else if (key == "hidden") c.hidden = v.get<int>();
      else if (key == "lstm_layers") c.lstm_layers = v.get<int>();
      else if (key == "dropout_input") c.dropout_input = v.get<double>();
      else if (key == "dropout_recurrent") c.dropout_recurrent = v.get<double>();
      else if (key == "dropout_other") c.dropout_other = v.get<double>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "eval_every") c.eval_every = v.get<int>();
      else if (key == "patience") c.patience = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "mix_normalize") c.mix_normalize = v.get<bool>();
      else if (key == "mix_gamma") c.mix_gamma = v.get<bool>();
      else if (key == "max_batches") c.max_batches = v.get<long>();
      else if (key == "zero_head") c.zero_head = v.get<bool>();
      else throw ValidationError("unknown probe setting '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("probe config: ") + e.what());
  }
  return c;
}

void save_probe(const TrainedProbe& probe, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& model = probe.model;

  nlohmann::ordered_json m;
  m["format"] = "probing-probe";
  m["version"] = kBlobVersion;
  m["task"] = to_string(probe.task);
  m["config"] = config_to_json(probe.config);
  m["span_count"] = model.span_count();
  m["label_set"] = probe.label_set;
  m["best_step"] = probe.best_step;
  auto& log = m["training_log"] = json::array();
  for (const auto& e : probe.training_log) log.push_back({{"step", e.step}, {"validation_loss", e.validation_loss}});
  if (auto mix = model.mix()) {
    m["mix"] = {{"raw", mix->raw}, {"gamma", mix->gamma}, {"normalized", mix->normalized()}};
  }
  auto& sections = m["sections"] = json::array();
  for (const auto& s : model.layout().sections())
    sections.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});

  std::string blob(kBlobMagic, 4);
  put_u32(blob, kBlobVersion);
  put_u32(blob, static_cast<std::uint32_t>(model.layout().sections().size()));
  for (const auto& s : model.layout().sections()) {
    put_u32(blob, static_cast<std::uint32_t>(s.name.size()));
    blob += s.name;
    put_u32(blob, static_cast<std::uint32_t>(s.rows));
    put_u32(blob, static_cast<std::uint32_t>(s.cols));
    // column-major, as Eigen stores it
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const float f = static_cast<float>(model.params()[s.offset + i]);
      blob.append(reinterpret_cast<const char*>(&f), 4);
    }
  }
  write_atomic(dir / "probe.bin", blob);
  write_atomic(dir / "probe.json", m.dump(2) + "\n");
}

TrainedProbe load_probe(const fs::path& dir) {
  const auto manifest_path = dir / "probe.json";
  const auto blob_path = dir / "probe.bin";
  if (!fs::exists(manifest_path) || !fs::exists(blob_path))
    throw NotFoundError("no trained probe in " + dir.string());

  TrainedProbe probe;
  int span_count = 1;
  try {
    const auto m = json::parse(read_file(manifest_path.string()));
    if (m.at("format") != "probing-probe" || m.at("version") != kBlobVersion)
      throw IntegrityError(manifest_path.string() + ": unsupported probe format");
    probe.task = parse_task(m.at("task").get<std::string>());
    probe.config = config_from_json(m.at("config"));
    probe.label_set = m.at("label_set").get<std::vector<std::string>>();
    probe.best_step = m.at("best_step").get<long>();
    span_count = m.at("span_count").get<int>();
    for (const auto& e : m.at("training_log"))
      probe.training_log.push_back({e.at("step").get<long>(), e.at("validation_loss").get<double>()});
  } catch (const json::exception& e) {
    throw IntegrityError(manifest_path.string() + ": " + e.what());
  }
  probe.model = ProbeModel(probe.config, span_count, static_cast<int>(probe.label_set.size()));

  const auto bytes = read_file(blob_path.string());
  Reader r{bytes, 0, blob_path};
  if (r.take(4) != std::string_view(kBlobMagic, 4) || r.u32() != kBlobVersion)
    throw IntegrityError(blob_path.string() + ": not a probe parameter blob");
  const auto& layout = probe.model.layout();
  if (r.u32() != layout.sections().size())
    throw IntegrityError(blob_path.string() + ": section count does not match the config");
  for (const auto& s : layout.sections()) {
    const auto name = r.take(r.u32());
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != s.name || rows != static_cast<std::uint32_t>(s.rows) ||
        cols != static_cast<std::uint32_t>(s.cols))
      throw IntegrityError(blob_path.string() + ": section '" + std::string(name) +
                           "' does not match the config");
    const auto data = r.take(4 * static_cast<std::size_t>(s.size()));
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      float f;
      std::memcpy(&f, data.data() + 4 * i, 4);
      probe.model.params()[s.offset + i] = f;
    }
  }
  if (r.pos != bytes.size()) throw IntegrityError(blob_path.string() + ": trailing bytes");
  return probe;
}

}  // namespace probing
