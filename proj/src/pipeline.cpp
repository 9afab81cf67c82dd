#include "probing/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "probing/analysis.hpp"
#include "probing/cache.hpp"
#include "probing/error.hpp"
#include "probing/io.hpp"
#include "probing/plots.hpp"
#include "probing/probe_io.hpp"

namespace probing {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kSplits[3] = {"train", "valid", "test"};

bool safe_name(const std::string& s) {
  if (s.empty() || s == "." || s == "..") return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

// Strict reader over one JSON object: every key must be consumed.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ValidationError(where_ + ": expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ValidationError(where_ + ": bad value for '" + key + "'");
    }
  }

  template <typename T>
  T required(const std::string& key) {
    if (!has(key)) throw ValidationError(where_ + ": missing '" + key + "'");
    return get<T>(key, T{});
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw ValidationError(where_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

EncoderSpec parse_encoder(const json& j, const fs::path& base) {
  Fields f(j, "encoder");
  EncoderSpec e;
  e.name = f.required<std::string>("name");
  if (!safe_name(e.name)) throw ValidationError("encoder name '" + e.name + "' is not a safe file name");
  e.type = f.required<std::string>("type");
  e.handle.name = e.name;
  e.handle.layer_count = f.get("layers", 12);
  e.handle.width = f.get("width", 768);
  e.handle.max_pieces = f.get("max_pieces", 512);
  if (e.handle.layer_count < 1 || e.handle.width < 1 || e.handle.max_pieces < 3)
    throw ValidationError("encoder " + e.name + ": layers, width and max_pieces out of range");
  if (e.type == "toy") {
    e.seed = f.get<std::uint64_t>("seed", 1);
  } else if (e.type == "signal") {
    e.signal.signal_from = f.get("signal_from", e.signal.signal_from);
    e.signal.vocab_words = f.get("vocab_words", e.signal.vocab_words);
    e.signal.signal_scale = f.get("signal_scale", e.signal.signal_scale);
    e.signal.noise_scale = f.get("noise_scale", e.signal.noise_scale);
    e.signal.seed = f.get<std::uint64_t>("seed", e.signal.seed);
  } else if (e.type == "command") {
    e.command = f.required<std::string>("command");
    e.vocab = resolve(base, f.required<std::string>("vocab"));
    e.lowercase = f.get("lowercase", false);
  } else {
    throw ValidationError("encoder " + e.name + ": unknown type '" + e.type + "'");
  }
  f.finish();
  return e;
}

TaskSpec parse_task_spec(const json& j, const fs::path& base) {
  Fields f(j, "task");
  TaskSpec t;
  t.name = f.required<std::string>("name");
  if (!safe_name(t.name)) throw ValidationError("task name '" + t.name + "' is not a safe file name");
  auto task = f.required<std::string>("task");
  std::transform(task.begin(), task.end(), task.begin(), ::toupper);
  t.task = parse_task(task);
  t.format = f.required<std::string>("format");
  const std::map<std::string, std::set<Task>> allowed{{"conllu", {Task::POS, Task::DEP}},
                                                      {"conll2002", {Task::NER}},
                                                      {"coref-json", {Task::COREF}},
                                                      {"signal", {Task::POS}}};
  auto it = allowed.find(t.format);
  if (it == allowed.end()) throw ValidationError("task " + t.name + ": unknown format '" + t.format + "'");
  if (!it->second.contains(t.task))
    throw ValidationError("task " + t.name + ": format " + t.format + " cannot feed " +
                          std::string(to_string(t.task)));

  if (t.format == "signal") {
    t.encoder = f.required<std::string>("encoder");
    t.sentences = f.get("sentences", t.sentences);
    t.min_len = f.get("min_len", t.min_len);
    t.max_len = f.get("max_len", t.max_len);
    if (t.min_len < 1 || t.max_len < t.min_len)
      throw ValidationError("task " + t.name + ": bad sentence length range");
  } else {
    for (const char* s : kSplits)
      if (f.has(s)) t.files[s] = resolve(base, f.get<std::string>(s, ""));
    if (f.has("data")) t.data = resolve(base, f.get<std::string>("data", ""));
    if (f.has("split")) {
      const auto v = f.get<std::vector<double>>("split", {});
      if (v.size() != 3) throw ValidationError("task " + t.name + ": split needs three fractions");
      t.fractions = {v[0], v[1], v[2]};
    }
    const bool all_files = t.files.size() == 3;
    if (all_files == t.data.has_value())
      throw ValidationError("task " + t.name +
                            ": give either train, valid and test files or one data file");
  }
  t.analysis = f.get("analysis", t.task == Task::POS && t.format == "conllu");
  if (t.analysis && t.task != Task::POS)
    throw ValidationError("task " + t.name + ": error analysis needs a POS task");
  f.finish();
  return t;
}

std::string rel(const fs::path& p) { return p.generic_string(); }

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

std::vector<SpanExample> read_examples_file(const fs::path& p) {
  std::istringstream in(read_bytes(p));
  return read_examples(in);
}

std::vector<Context> read_contexts_file(const fs::path& p) {
  std::istringstream in(read_bytes(p));
  return read_contexts(in);
}

// ---- run state -----------------------------------------------------------

class Run {
 public:
  Run(const ExperimentConfig& cfg)
      : cfg_(cfg), out_(cfg.output_dir), cache_root_(resolve_cache_root(cfg.cache_dir)) {
    fs::create_directories(out_);
    for (auto& e : read_manifest(out_)) manifest_[e.path] = std::move(e);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }
  const fs::path& cache_root() const { return cache_root_; }
  RunSummary& summary() { return summary_; }

  const Encoder& encoder(const std::string& name) {
    auto it = encoders_.find(name);
    if (it == encoders_.end())
      it = encoders_.emplace(name, make_encoder(cfg_.encoder(name), out_ / "tmp")).first;
    return *it->second;
  }

  void write(const std::string& path, std::string_view data) {
    write_atomic(out_ / path, data);
    manifest_[path] = {path, true, crc32_of(data), data.size(), ""};
  }

  void record(const std::string& path) {
    const auto bytes = read_bytes(out_ / path);
    manifest_[path] = {path, true, crc32_of(bytes), bytes.size(), ""};
  }

  /// True when the file exists and matches a successful manifest entry.
  bool intact(const std::string& path) const {
    auto it = manifest_.find(path);
    if (it == manifest_.end() || !it->second.ok || !fs::exists(out_ / path)) return false;
    const auto bytes = read_bytes(out_ / path);
    return bytes.size() == it->second.bytes && crc32_of(bytes) == it->second.crc32;
  }

  template <typename F>
  bool unit(const std::string& what, const std::vector<std::string>& outputs, F&& body) {
    try {
      body();
      return true;
    } catch (const std::exception& e) {
      spdlog::error("{}: {}", what, e.what());
      for (const auto& p : outputs) {
        ArtifactEntry entry{p, false, 0, 0, e.what()};
        manifest_[p] = entry;
        summary_.failures.push_back(entry);
      }
      return false;
    }
  }

  void save_manifest() {
    json arts = json::array();
    for (auto it = manifest_.begin(); it != manifest_.end();) {
      const auto& e = it->second;
      // entries whose file has since disappeared are dropped
      if (e.ok && !fs::exists(out_ / e.path)) {
        it = manifest_.erase(it);
        continue;
      }
      json a = json::object();
      a["path"] = e.path;
      a["status"] = e.ok ? "ok" : "failed";
      if (e.ok) {
        a["crc32"] = hex32(e.crc32);
        a["bytes"] = e.bytes;
      } else {
        a["error"] = e.error;
      }
      arts.push_back(std::move(a));
      ++it;
    }
    nlohmann::ordered_json m;
    m["format"] = "probing-run";
    m["version"] = 1;
    m["artifacts"] = std::move(arts);
    write_atomic(out_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  const ExperimentConfig& cfg_;
  fs::path out_;
  fs::path cache_root_;
  std::map<std::string, ArtifactEntry> manifest_;
  std::map<std::string, std::unique_ptr<Encoder>> encoders_;
  RunSummary summary_;
};

std::string task_file(const std::string& task, const std::string& name) {
  return "tasks/" + task + "/" + name;
}

std::uint64_t task_seed(const ExperimentConfig& cfg, const TaskSpec& t) {
  return derive_seed(cfg.seed, crc32_of(t.name));
}

// ---- ingest --------------------------------------------------------------

struct Ingested {
  std::vector<SpanExample> split[3];
  std::vector<Context> contexts;
};

std::vector<Sentence> load_sentences(const TaskSpec& t, const fs::path& p) {
  const auto text = read_bytes(p);
  return t.format == "conllu" ? parse_conllu(text) : parse_conll2002(text);
}

std::vector<SpanExample> sentence_examples(const TaskSpec& t, const std::vector<Sentence>& s,
                                           std::uint64_t seed) {
  switch (t.task) {
    case Task::POS: return build_pos_examples(s);
    case Task::DEP: return build_dep_examples(s);
    case Task::NER: return build_ner_examples(s, seed);
    default: throw ValidationError("task " + t.name + ": not a sentence-level task");
  }
}

// Sentences or documents of each split, tagged with the split name so ids
// from separate files cannot collide.
template <typename T, typename IdOf, typename Load>
std::array<std::vector<T>, 3> load_splits(const TaskSpec& t, std::uint64_t seed, IdOf id_of,
                                          Load load) {
  std::array<std::vector<T>, 3> out;
  if (!t.data) {
    for (int s = 0; s < 3; ++s) out[s] = load(t.files.at(kSplits[s]));
  } else {
    auto all = load(*t.data);
    std::vector<std::string> docs;
    for (const auto& x : all) docs.push_back(id_of(x));
    std::sort(docs.begin(), docs.end());
    docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
    const auto split = split_documents(docs, t.fractions, seed);
    std::map<std::string, int> where;
    for (const auto& d : split.train) where[d] = 0;
    for (const auto& d : split.valid) where[d] = 1;
    for (const auto& d : split.test) where[d] = 2;
    for (auto& x : all) out[where.at(id_of(x))].push_back(std::move(x));
  }
  return out;
}

Ingested ingest_task(Run& run, const TaskSpec& t) {
  Ingested r;
  const auto seed = task_seed(run.cfg(), t);
  if (t.format == "coref-json") {
    auto docs = load_splits<CorefDocument>(
        t, seed, [](const CorefDocument& d) { return d.doc_id; },
        [](const fs::path& p) { return parse_coref_json(read_bytes(p)); });
    for (int s = 0; s < 3; ++s) {
      for (auto& d : docs[s]) {
        d.doc_id = std::string(kSplits[s]) + "/" + d.doc_id;
        for (auto& c : d.clusters) c.doc_id = d.doc_id;
        r.contexts.push_back(document_context(d));
      }
      r.split[s] = build_coref_examples(docs[s], derive_seed(seed, s)).examples;
    }
    return r;
  }

  std::array<std::vector<Sentence>, 3> sents;
  if (t.format == "signal") {
    const auto* enc = dynamic_cast<const SignalEncoder*>(&run.encoder(t.encoder));
    if (!enc) throw ValidationError("task " + t.name + ": encoder " + t.encoder + " is not a signal encoder");
    for (int s = 0; s < 3; ++s)
      sents[s] = enc->generate_corpus(t.sentences[s], t.min_len, t.max_len, derive_seed(seed, s),
                                      std::string(kSplits[s]) + "/s");
  } else {
    sents = load_splits<Sentence>(
        t, seed, [](const Sentence& s) { return s.doc_id.empty() ? s.sent_id : s.doc_id; },
        [&](const fs::path& p) { return load_sentences(t, p); });
    for (int s = 0; s < 3; ++s)
      for (auto& x : sents[s]) x.sent_id = std::string(kSplits[s]) + "/" + x.sent_id;
  }
  for (int s = 0; s < 3; ++s) {
    r.split[s] = sentence_examples(t, sents[s], derive_seed(seed, s));
    for (auto& c : sentence_contexts(sents[s])) r.contexts.push_back(std::move(c));
  }
  return r;
}

void stage_ingest(Run& run) {
  for (const auto& t : run.cfg().tasks) {
    std::vector<std::string> outputs;
    for (const char* s : kSplits) outputs.push_back(task_file(t.name, std::string(s) + ".jsonl"));
    outputs.push_back(task_file(t.name, "contexts.jsonl"));
    run.unit("ingest " + t.name, outputs, [&] {
      const auto r = ingest_task(run, t);
      for (int s = 0; s < 3; ++s) {
        if (r.split[s].empty()) throw ValidationError(std::string(kSplits[s]) + " split is empty");
        std::ostringstream o;
        write_examples(o, r.split[s]);
        run.write(outputs[s], o.str());
      }
      std::ostringstream o;
      write_contexts(o, r.contexts);
      run.write(outputs[3], o.str());
      spdlog::info("ingest {}: {} / {} / {} examples, {} contexts", t.name, r.split[0].size(),
                   r.split[1].size(), r.split[2].size(), r.contexts.size());
    });
  }
}

// ---- extract -------------------------------------------------------------

void extract_pair(Run& run, const EncoderSpec& es, const TaskSpec& t, const std::string& out) {
  const Encoder& enc = run.encoder(es.name);
  const auto contexts = read_contexts_file(run.out() / task_file(t.name, "contexts.jsonl"));
  StackCache cache(run.cache_root(), enc.handle(), t.name);

  std::vector<std::string> keys;
  std::vector<std::vector<PieceId>> inputs;
  std::size_t chunks = 0, warnings = 0;
  for (const auto& c : contexts) {
    auto chunked = concat_context(c.sentences, enc);
    warnings += chunked.warnings.size();
    for (const auto& w : chunked.warnings) spdlog::warn("{}: {}", c.id, w);
    for (std::size_t i = 0; i < chunked.chunks.size(); ++i, ++chunks) {
      auto key = chunk_key(c.id, i);
      if (cache.contains(key)) continue;
      keys.push_back(std::move(key));
      inputs.push_back(std::move(chunked.chunks[i].pieces));
    }
  }
  spdlog::info("extract {}/{}: {} of {} chunks to compute", es.name, t.name, keys.size(), chunks);

  if (dynamic_cast<const CommandEncoder*>(&enc)) {
    // one external process per batch
    constexpr std::size_t kBatch = 64;
    for (std::size_t b = 0; b < inputs.size(); b += kBatch) {
      const auto end = std::min(inputs.size(), b + kBatch);
      std::vector<std::vector<PieceId>> batch(inputs.begin() + b, inputs.begin() + end);
      auto stacks = enc.encode_batch(batch);
      for (std::size_t i = 0; i < stacks.size(); ++i) cache.write(keys[b + i], stacks[i]);
    }
  } else {
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      try {
        cache.write(keys[i], extract_layers(inputs[i], enc));
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  nlohmann::ordered_json summary;
  summary["encoder"] = es.name;
  summary["task"] = t.name;
  summary["contexts"] = contexts.size();
  summary["chunks"] = chunks;
  summary["truncation_warnings"] = warnings;
  run.write(out, summary.dump(2) + "\n");
}

void stage_extract(Run& run) {
  for (const auto& es : run.cfg().encoders)
    for (const auto& t : run.cfg().tasks) {
      const auto out = es.name + "/" + t.name + "/extract.json";
      run.unit("extract " + es.name + "/" + t.name, {out}, [&] { extract_pair(run, es, t, out); });
    }
}

// ---- train ---------------------------------------------------------------

struct Cell {
  std::string dir;
  ProbeMode mode;
  int layer;
  int seed_index;
  std::vector<std::string> files() const {
    return {dir + "/probe.json", dir + "/probe.bin", dir + "/predictions.jsonl"};
  }
};

std::vector<Cell> cells_of(const ExperimentConfig& cfg, const EncoderSpec& es, const TaskSpec& t) {
  std::vector<Cell> out;
  for (int s = 0; s < cfg.seeds; ++s)
    for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
      for (int k = 0; k <= es.handle.layer_count; ++k)
        out.push_back({cell_dir(es.name, t.name, mode, k, s, cfg.seeds), mode, k, s});
  return out;
}

void train_pair(Run& run, const EncoderSpec& es, const TaskSpec& t) {
  std::vector<Cell> todo;
  for (const auto& c : cells_of(run.cfg(), es, t)) {
    const auto files = c.files();
    if (std::all_of(files.begin(), files.end(), [&](const auto& f) { return run.intact(f); }))
      run.summary().skipped_cells.push_back(c.dir);
    else
      todo.push_back(c);
  }
  if (todo.empty()) return;

  std::vector<SpanExample> split[3];
  std::vector<Context> contexts;
  const Encoder* enc = nullptr;
  std::optional<StackCache> cache;
  FeatureStore store;
  std::string load_error;
  try {
    for (int s = 0; s < 3; ++s)
      split[s] = read_examples_file(run.out() / task_file(t.name, std::string(kSplits[s]) + ".jsonl"));
    contexts = read_contexts_file(run.out() / task_file(t.name, "contexts.jsonl"));
    enc = &run.encoder(es.name);
    cache.emplace(run.cache_root(), enc->handle(), t.name);
    store = FeatureStore::from_cache(*cache, *enc, contexts);
  } catch (const std::exception& e) {
    load_error = e.what();
  }
  if (!load_error.empty()) {
    for (const auto& c : todo)
      run.unit("train " + c.dir, c.files(), [&] { throw Error(load_error); });
    return;
  }

  const ProbeConfig base = config_from_json(run.cfg().probe);
  for (std::size_t i = 0; i < todo.size(); ++i) {
    const auto& c = todo[i];
    spdlog::info("train {} ({}/{})", c.dir, i + 1, todo.size());
    run.unit("train " + c.dir, c.files(), [&] {
      ProbeConfig pc = base;
      pc.mode = c.mode;
      pc.layer = c.layer;
      pc.input_width = es.handle.width;
      pc.seed = derive_seed(run.cfg().seed, crc32_of(c.dir));
      const auto probe = train_probe(split[0], split[1], store, pc);
      save_probe(probe, run.out() / c.dir);
      run.record(c.dir + "/probe.json");
      run.record(c.dir + "/probe.bin");
      std::ostringstream o;
      write_records(o, predict(probe, split[2], store, es.name));
      run.write(c.dir + "/predictions.jsonl", o.str());
      run.summary().trained_cells.push_back(c.dir);
    });
  }
}

void stage_train(Run& run) {
  for (const auto& es : run.cfg().encoders)
    for (const auto& t : run.cfg().tasks) train_pair(run, es, t);
}

// ---- evaluate ------------------------------------------------------------

std::vector<PredictionRecord> load_predictions(Run& run, const EncoderSpec& es, const TaskSpec& t,
                                               int seed_index) {
  std::vector<PredictionRecord> out;
  for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
    for (int k = 0; k <= es.handle.layer_count; ++k) {
      const auto dir = cell_dir(es.name, t.name, mode, k, seed_index, run.cfg().seeds);
      std::istringstream in(read_bytes(run.out() / dir / "predictions.jsonl"));
      auto rs = read_records(in);
      out.insert(out.end(), std::make_move_iterator(rs.begin()), std::make_move_iterator(rs.end()));
    }
  return out;
}

std::vector<LayerMetrics> task_metrics(Run& run, const EncoderSpec& es, const TaskSpec& t) {
  std::vector<std::vector<LayerMetrics>> per_seed;
  for (int s = 0; s < run.cfg().seeds; ++s)
    per_seed.push_back(summarize_task(load_predictions(run, es, t, s), es.handle.layer_count + 1));
  return mean_metrics(per_seed);
}

void stage_evaluate(Run& run) {
  for (const auto& es : run.cfg().encoders)
    for (const auto& t : run.cfg().tasks) {
      const auto dir = es.name + "/" + t.name + "/";
      const std::vector<std::string> outputs{dir + "metrics.csv", dir + "metrics.json",
                                             dir + "f1.csv", dir + "weights.csv"};
      run.unit("evaluate " + es.name + "/" + t.name, outputs, [&] {
        const auto ms = task_metrics(run, es, t);
        std::ostringstream csv, js, f1;
        write_metrics_csv(csv, ms);
        write_metrics_json(js, ms);
        write_f1_csv(f1, ms);
        run.write(outputs[0], csv.str());
        run.write(outputs[1], js.str());
        run.write(outputs[2], f1.str());

        std::ostringstream w;
        w << "k,layer,weight,gamma\n";
        for (int k = 0; k <= es.handle.layer_count; ++k) {
          const auto probe =
              load_probe(run.out() / cell_dir(es.name, t.name, ProbeMode::MIX, k, 0, run.cfg().seeds));
          const auto rep = report_weights(probe);
          for (int i = 0; i <= k; ++i)
            w << k << ',' << i << ',' << format_number(rep.weights[i]) << ','
              << format_number(rep.gamma) << '\n';
        }
        run.write(outputs[3], w.str());
      });
    }
}

// ---- analyze -------------------------------------------------------------

struct PosAnalysis {
  std::vector<std::string> subset;
  std::map<std::string, std::string> gold;
  TagDistribution tags;
  struct Family {
    std::string model;
    ProbeMode mode;
    std::vector<TrajectoryVector> trajectories;
    GroupedF1 groups;
    std::pair<ConfusionMatrix, ConfusionMatrix> halves;
  };
  std::vector<Family> families;
};

PosAnalysis analyze_pos(Run& run, const TaskSpec& t) {
  std::vector<PredictionRecord> all;
  for (const auto& es : run.cfg().encoders) {
    auto rs = load_predictions(run, es, t, 0);
    all.insert(all.end(), rs.begin(), rs.end());
  }
  PosAnalysis a;
  a.subset = filter_hard_tokens(all);
  a.gold = correctness_table(all).gold;
  a.tags = tag_distribution(a.gold, a.subset);
  if (a.subset.empty()) return a;

  const std::set<std::string> keep(a.subset.begin(), a.subset.end());
  std::vector<PredictionRecord> filtered;
  std::set<std::string> labels;
  for (const auto& r : all)
    if (keep.contains(r.example_id)) {
      filtered.push_back(r);
      labels.insert(r.gold);
      labels.insert(r.predicted);
    }
  const std::vector<std::string> label_list(labels.begin(), labels.end());

  for (const auto& es : run.cfg().encoders) {
    std::vector<PredictionRecord> mine;
    for (const auto& r : filtered)
      if (r.model == es.name) mine.push_back(r);
    const auto ms = summarize_task(mine, es.handle.layer_count + 1);
    const auto [h1, h2] = default_halves(es.handle.layer_count);
    for (const auto& m : ms) {
      PosAnalysis::Family f;
      f.model = es.name;
      f.mode = m.mode;
      f.trajectories = trajectories(filtered, es.name, m.mode, a.subset);
      f.groups = class_group_f1(m.f1);
      f.halves = summed_confusions(filtered, es.name, m.mode, a.subset, label_list, h1, h2);
      a.families.push_back(std::move(f));
    }
  }
  return a;
}

std::string family_name(const std::string& model, ProbeMode mode) {
  return model + "-" + std::string(to_string(mode));
}

void stage_analyze(Run& run) {
  for (const auto& t : run.cfg().tasks) {
    if (!t.analysis) continue;
    const auto dir = "analysis/" + t.name + "/";
    run.unit("analyze " + t.name, {dir}, [&] {
      const auto a = analyze_pos(run, t);
      std::ostringstream td;
      td << "tag,full,filtered\n";
      for (const auto& [tag, v] : a.tags.full) {
        auto it = a.tags.filtered.find(tag);
        td << tag << ',' << format_number(v) << ','
           << format_number(it == a.tags.filtered.end() ? 0.0 : it->second) << '\n';
      }
      run.write(dir + "tag_distribution.csv", td.str());
      spdlog::info("analyze {}: {} of {} tokens mispredicted by some probe", t.name,
                   a.subset.size(), a.gold.size());

      std::map<std::string, std::vector<TrajectoryVector>> by_family;
      for (const auto& f : a.families) {
        by_family[f.model + "/" + std::string(to_string(f.mode))] = f.trajectories;
        const auto name = family_name(f.model, f.mode);
        std::ostringstream g, c1, c2;
        write_group_f1_csv(g, f.groups);
        write_confusion_csv(c1, f.halves.first);
        write_confusion_csv(c2, f.halves.second);
        run.write(dir + "group_f1-" + name + ".csv", g.str());
        run.write(dir + "confusions-" + name + "-first.csv", c1.str());
        run.write(dir + "confusions-" + name + "-second.csv", c2.str());
      }
      std::ostringstream traj;
      write_trajectories_jsonl(traj, a.subset, a.gold, by_family);
      run.write(dir + "hard_tokens.jsonl", traj.str());

      for (std::size_t i = 0; i < a.families.size(); ++i)
        for (std::size_t j = i + 1; j < a.families.size(); ++j) {
          const auto& x = a.families[i];
          const auto& y = a.families[j];
          if (x.mode != y.mode || x.model == y.model) continue;
          std::ostringstream o;
          write_joint_table_csv(o, cross_model_compare(x.trajectories, y.trajectories));
          run.write(dir + "patterns-" + x.model + "-vs-" + y.model + "-" +
                        std::string(to_string(x.mode)) + ".csv",
                    o.str());
        }
    });
  }
}

// ---- report --------------------------------------------------------------

void figure(Run& run, const std::string& stem, const std::string& csv,
            const std::function<std::vector<fs::path>(const fs::path&)>& draw) {
  run.write(stem + ".csv", csv);
  for (const auto& p : draw(run.out() / stem)) run.record(rel(fs::relative(p, run.out())));
}

LineChart delta_chart(const std::string& title, const std::vector<LayerMetrics>& ms) {
  LineChart c{title, "layer", "accuracy delta", {}};
  for (const auto& m : ms) {
    Series s{m.model, {}, {}};
    for (std::size_t k = 0; k < m.deltas.size(); ++k) {
      s.x.push_back(static_cast<double>(k + 1));
      s.y.push_back(m.deltas[k]);
    }
    c.series.push_back(std::move(s));
  }
  return c;
}

void report_task(Run& run, const TaskSpec& t) {
  std::vector<LayerMetrics> single, mix;
  std::ostringstream wcsv;
  wcsv << "model,layer,weight,rank\n";
  LineChart weights{t.name + ": mixing weights of the top-layer mix probe", "layer", "weight", {}};
  for (const auto& es : run.cfg().encoders) {
    std::vector<LayerMetrics> ms;
    try {
      ms = task_metrics(run, es, t);
    } catch (const NotFoundError& e) {
      spdlog::warn("report {}: skipping {} ({})", t.name, es.name, e.what());
      continue;
    }
    for (auto& m : ms) (m.mode == ProbeMode::SINGLE ? single : mix).push_back(m);

    const int top = es.handle.layer_count;
    const auto rep = report_weights(
        load_probe(run.out() / cell_dir(es.name, t.name, ProbeMode::MIX, top, 0, run.cfg().seeds)));
    std::vector<int> rank(rep.weights.size());
    for (std::size_t r = 0; r < rep.order.size(); ++r) rank[rep.order[r]] = static_cast<int>(r);
    Series s{es.name, {}, {}};
    for (std::size_t i = 0; i < rep.weights.size(); ++i) {
      wcsv << es.name << ',' << i << ',' << format_number(rep.weights[i]) << ',' << rank[i] << '\n';
      s.x.push_back(static_cast<double>(i));
      s.y.push_back(rep.weights[i]);
    }
    weights.series.push_back(std::move(s));
  }
  if (weights.series.empty()) {
    spdlog::warn("report {}: no trained probes, no figures", t.name);
    return;
  }

  figure(run, "figures/fig1-mixing-weights/" + t.name, wcsv.str(),
         [&](const fs::path& p) { return render(weights, p); });
  std::ostringstream mcsv, scsv;
  write_metrics_csv(mcsv, mix);
  write_metrics_csv(scsv, single);
  figure(run, "figures/fig2-mix-deltas/" + t.name, mcsv.str(), [&](const fs::path& p) {
    return render(delta_chart(t.name + ": accuracy gain per mix layer", mix), p);
  });
  figure(run, "figures/fig7-single-deltas/" + t.name, scsv.str(), [&](const fs::path& p) {
    return render(delta_chart(t.name + ": accuracy change per single layer", single), p);
  });

  if (!t.analysis) return;
  const auto a = analyze_pos(run, t);
  {
    std::ostringstream csv;
    csv << "tag,full,filtered\n";
    BarChart bars{t.name + ": tag distribution", "fraction", {}, {{"all tokens", {}, {}},
                                                                  {"filtered", {}, {}}}};
    for (const auto& [tag, v] : a.tags.full) {
      auto it = a.tags.filtered.find(tag);
      const double f = it == a.tags.filtered.end() ? 0.0 : it->second;
      csv << tag << ',' << format_number(v) << ',' << format_number(f) << '\n';
      bars.categories.push_back(tag);
      bars.groups[0].y.push_back(v);
      bars.groups[1].y.push_back(f);
    }
    figure(run, "figures/fig3-tag-distribution/" + t.name, csv.str(),
           [&](const fs::path& p) { return render(bars, p); });
  }
  for (const auto& f : a.families) {
    const auto name = t.name + "-" + family_name(f.model, f.mode);
    for (const bool closed : {true, false}) {
      GroupedF1 g = f.groups;
      (closed ? g.open : g.closed).clear();
      (closed ? g.open_mean : g.closed_mean).clear();
      const auto& curves = closed ? g.closed : g.open;
      if (curves.empty()) continue;
      LineChart c{name + (closed ? ": closed-class F1" : ": open-class F1"), "layer", "F1", {}};
      for (const auto& [tag, curve] : curves) {
        Series s{tag, {}, curve};
        for (std::size_t k = 0; k < curve.size(); ++k) s.x.push_back(static_cast<double>(k));
        c.series.push_back(std::move(s));
      }
      const auto& mean = closed ? g.closed_mean : g.open_mean;
      Series ms{"mean", {}, mean};
      for (std::size_t k = 0; k < mean.size(); ++k) ms.x.push_back(static_cast<double>(k));
      c.series.push_back(std::move(ms));
      std::ostringstream csv;
      write_group_f1_csv(csv, g);
      figure(run, std::string(closed ? "figures/fig4-closed-f1/" : "figures/fig5-open-f1/") + name,
             csv.str(), [&](const fs::path& p) { return render(c, p); });
    }
    for (const bool first : {true, false}) {
      const auto& m = first ? f.halves.first : f.halves.second;
      Heatmap h{name + (first ? ": lower layers" : ": upper layers"), "gold", "predicted",
                m.labels, m.labels, {}};
      for (const auto& row : m.counts) h.values.emplace_back(row.begin(), row.end());
      std::ostringstream csv;
      write_confusion_csv(csv, m);
      figure(run, "figures/fig6-confusions/" + name + (first ? "-first" : "-second"), csv.str(),
             [&](const fs::path& p) { return render(h, p); });
    }
  }
}

void stage_report(Run& run) {
  for (const auto& t : run.cfg().tasks)
    run.unit("report " + t.name, {"figures/" + t.name}, [&] { report_task(run, t); });
}

}  // namespace

// ---- public --------------------------------------------------------------

const EncoderSpec& ExperimentConfig::encoder(const std::string& name) const {
  for (const auto& e : encoders)
    if (e.name == name) return e;
  throw ValidationError("no encoder named '" + name + "'");
}

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
  Fields f(j, "config");
  ExperimentConfig c;
  c.output_dir = resolve(base_dir, f.get<std::string>("output_dir", "outputs"));
  if (f.has("cache_dir")) c.cache_dir = resolve(base_dir, f.get<std::string>("cache_dir", ""));
  c.seed = f.get<std::uint64_t>("seed", 0);
  c.seeds = f.get("seeds", 1);
  if (c.seeds < 1) throw ValidationError("seeds must be at least 1");
  if (f.has("probe")) {
    c.probe = f.raw("probe");
    config_from_json(c.probe);  // reject unknown keys early
  }
  if (!f.has("encoders") || !f.raw("encoders").is_array() || f.raw("encoders").empty())
    throw ValidationError("config: 'encoders' must be a non-empty array");
  if (!f.has("tasks") || !f.raw("tasks").is_array() || f.raw("tasks").empty())
    throw ValidationError("config: 'tasks' must be a non-empty array");
  std::set<std::string> names;
  for (const auto& e : f.raw("encoders")) {
    c.encoders.push_back(parse_encoder(e, base_dir));
    if (!names.insert(c.encoders.back().name).second)
      throw ValidationError("duplicate encoder name '" + c.encoders.back().name + "'");
  }
  names.clear();
  for (const auto& t : f.raw("tasks")) {
    c.tasks.push_back(parse_task_spec(t, base_dir));
    const auto& task = c.tasks.back();
    if (!names.insert(task.name).second)
      throw ValidationError("duplicate task name '" + task.name + "'");
    if (task.format == "signal" && c.encoder(task.encoder).type != "signal")
      throw ValidationError("task " + task.name + ": encoder " + task.encoder +
                            " is not a signal encoder");
  }
  f.finish();
  return c;
}

ExperimentConfig load_experiment(const fs::path& file) {
  json j;
  try {
    j = json::parse(read_bytes(file));
  } catch (const json::parse_error& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
  return parse_experiment(j, file.parent_path());
}

std::unique_ptr<Encoder> make_encoder(const EncoderSpec& spec, const fs::path& scratch_dir) {
  if (spec.type == "toy") return std::make_unique<ToyEncoder>(spec.handle, spec.seed);
  if (spec.type == "signal") return std::make_unique<SignalEncoder>(spec.handle, spec.signal);
  if (spec.type == "command") {
    fs::create_directories(scratch_dir);
    return std::make_unique<CommandEncoder>(
        spec.handle, spec.command, WordPieceVocab::from_file(spec.vocab, spec.lowercase),
        scratch_dir);
  }
  throw ValidationError("unknown encoder type '" + spec.type + "'");
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::INGEST: return "ingest";
    case Stage::EXTRACT: return "extract";
    case Stage::TRAIN: return "train";
    case Stage::EVALUATE: return "evaluate";
    case Stage::ANALYZE: return "analyze";
    case Stage::REPORT: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (Stage s : kAllStages)
    if (to_string(s) == name) return s;
  throw ValidationError("unknown stage '" + std::string(name) + "'");
}

std::string cell_dir(const std::string& encoder, const std::string& task, ProbeMode mode,
                     int layer, int seed_index, int seeds) {
  auto dir = encoder + "/" + task + "/" + std::string(to_string(mode)) + "-" + std::to_string(layer);
  if (seeds > 1) dir += "/seed-" + std::to_string(seed_index);
  return dir;
}

std::vector<ArtifactEntry> read_manifest(const fs::path& output_dir) {
  const auto path = output_dir / "manifest.json";
  if (!fs::exists(path)) return {};
  json m;
  try {
    m = json::parse(read_bytes(path));
  } catch (const json::parse_error&) {
    throw IntegrityError("unreadable run manifest " + path.string());
  }
  if (m.value("format", "") != "probing-run")
    throw IntegrityError(path.string() + " is not a run manifest");
  std::vector<ArtifactEntry> out;
  for (const auto& a : m.at("artifacts")) {
    ArtifactEntry e;
    e.path = a.at("path").get<std::string>();
    e.ok = a.at("status") == "ok";
    if (e.ok) {
      e.crc32 = static_cast<std::uint32_t>(std::stoul(a.at("crc32").get<std::string>(), nullptr, 16));
      e.bytes = a.at("bytes").get<std::uintmax_t>();
    } else {
      e.error = a.value("error", "");
    }
    out.push_back(std::move(e));
  }
  return out;
}

RunSummary run_stages(const ExperimentConfig& config, const std::vector<Stage>& stages) {
  Run run(config);
  for (Stage s : stages) {
    spdlog::info("stage {}", to_string(s));
    switch (s) {
      case Stage::INGEST: stage_ingest(run); break;
      case Stage::EXTRACT: stage_extract(run); break;
      case Stage::TRAIN: stage_train(run); break;
      case Stage::EVALUATE: stage_evaluate(run); break;
      case Stage::ANALYZE: stage_analyze(run); break;
      case Stage::REPORT: stage_report(run); break;
    }
  }
  run.save_manifest();
  std::error_code ec;
  fs::remove_all(config.output_dir / "tmp", ec);
  return run.summary();
}

WeightReport report_weights(const TrainedProbe& probe) {
  const auto mix = probe.mix();
  if (probe.config.mode != ProbeMode::MIX || !mix)
    throw ValidationError("single-layer probes have no mixing weights");
  WeightReport r;
  r.weights = mix->normalized();
  r.gamma = mix->gamma;
  r.order.resize(r.weights.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return r.weights[a] > r.weights[b]; });
  return r;
}

std::vector<LayerMetrics> mean_metrics(const std::vector<std::vector<LayerMetrics>>& per_seed) {
  if (per_seed.empty()) throw ValidationError("no metrics to average");
  if (per_seed.size() == 1) return per_seed.front();
  auto out = per_seed.front();
  const double n = static_cast<double>(per_seed.size());
  for (std::size_t g = 0; g < out.size(); ++g) {
    auto& m = out[g];
    for (std::size_t s = 1; s < per_seed.size(); ++s) {
      const auto& o = per_seed[s].at(g);
      if (o.model != m.model || o.mode != m.mode || o.accuracy.size() != m.accuracy.size())
        throw ValidationError("seed runs disagree on probe families");
      for (std::size_t k = 0; k < m.accuracy.size(); ++k) m.accuracy[k] += o.accuracy[k];
    }
    for (double& a : m.accuracy) a /= n;
    m.deltas = accuracy_deltas(m.accuracy);

    std::set<std::string> labels;
    for (const auto& seed : per_seed)
      for (const auto& [l, v] : seed.at(g).f1) labels.insert(l);
    m.f1.clear();
    for (const auto& l : labels) {
      std::vector<double> curve(m.accuracy.size(), 0.0), count(m.accuracy.size(), 0.0);
      for (const auto& seed : per_seed) {
        auto it = seed.at(g).f1.find(l);
        if (it == seed.at(g).f1.end()) continue;
        for (std::size_t k = 0; k < curve.size(); ++k)
          if (!std::isnan(it->second[k])) {
            curve[k] += it->second[k];
            count[k] += 1;
          }
      }
      for (std::size_t k = 0; k < curve.size(); ++k)
        curve[k] = count[k] > 0 ? curve[k] / count[k] : std::nan("");
      m.f1[l] = std::move(curve);
    }
  }
  return out;
}

}  // namespace probing
