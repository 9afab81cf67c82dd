#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "probing/error.hpp"
#include "probing/io.hpp"
#include "probing/metrics.hpp"
#include "probing/pipeline.hpp"
#include "probing/plots.hpp"
#include "probing/probe_io.hpp"
#include "test_util.hpp"

using namespace probing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config(const fs::path& dir) {
  const auto conllu = data_path("mini.conllu");
  return json{
      {"output_dir", (dir / "out").string()},
      {"cache_dir", (dir / "cache").string()},
      {"seed", 5},
      {"probe",
       {{"hidden", 6}, {"eval_every", 4}, {"patience", 2}, {"max_batches", 24},
        {"batch_size", 8}, {"lr", 0.01}}},
      {"encoders",
       json::array({{{"name", "toy"}, {"type", "toy"}, {"layers", 2}, {"width", 8},
                     {"max_pieces", 64}}})},
      {"tasks", json::array({{{"name", "pos"},
                              {"task", "POS"},
                              {"format", "conllu"},
                              {"train", conllu},
                              {"valid", conllu},
                              {"test", conllu}}})}};
}

std::vector<PredictionRecord> records_in(const fs::path& out, const std::string& enc,
                                         const std::string& task, int layers) {
  std::vector<PredictionRecord> rs;
  for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
    for (int k = 0; k <= layers; ++k) {
      std::istringstream in(read_bytes(out / cell_dir(enc, task, mode, k, 0, 1) / "predictions.jsonl"));
      auto part = read_records(in);
      rs.insert(rs.end(), part.begin(), part.end());
    }
  return rs;
}

}  // namespace

TEST_CASE("experiment config validation") {
  const fs::path base = "/cfg";
  auto j = small_config("rel");
  j["tasks"][0]["train"] = "data/train.conllu";
  auto c = parse_experiment(j, base);
  CHECK(c.tasks[0].files.at("train") == fs::path("/cfg/data/train.conllu"));
  CHECK(c.encoders[0].handle.layer_count == 2);
  CHECK(c.tasks[0].analysis);

  auto bad = j;
  bad["extra"] = 1;
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["probe"]["hiden"] = 3;
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["encoders"].push_back(bad["encoders"][0]);
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["encoders"][0]["name"] = "../up";
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["tasks"][0].erase("valid");
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["tasks"][0]["format"] = "conll2002";
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);
  bad = j;
  bad["tasks"][0] = {{"name", "syn"}, {"task", "POS"}, {"format", "signal"}, {"encoder", "toy"}};
  CHECK_THROWS_AS(parse_experiment(bad, base), ValidationError);

  CHECK(parse_stage("report") == Stage::REPORT);
  CHECK_THROWS_AS(parse_stage("plot"), ValidationError);
}

TEST_CASE("pipeline: one encoder, one task, two layers") {
  const auto dir = scratch_dir("pipeline-run");
  const auto cfg = parse_experiment(small_config(dir), dir);
  const auto first = run_pipeline(cfg);
  REQUIRE(first.ok());
  CHECK(first.trained_cells.size() == 6);
  CHECK(first.skipped_cells.empty());

  const auto out = dir / "out";
  for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
    for (int k = 0; k <= 2; ++k)
      for (const char* f : {"probe.json", "probe.bin", "predictions.jsonl"})
        CHECK(fs::exists(out / cell_dir("toy", "pos", mode, k, 0, 1) / f));

  // every manifest entry matches the file on disk
  const auto manifest = read_manifest(out);
  CHECK(manifest.size() > 20);
  for (const auto& e : manifest) {
    REQUIRE(e.ok);
    const auto bytes = read_bytes(out / e.path);
    CHECK(crc32_of(bytes) == e.crc32);
    CHECK(bytes.size() == e.bytes);
  }
  CHECK(std::is_sorted(manifest.begin(), manifest.end(),
                       [](const auto& a, const auto& b) { return a.path < b.path; }));

  // the CSV behind each metric figure is the metrics module's output
  const auto ms = summarize_task(records_in(out, "toy", "pos", 2), 3);
  std::vector<LayerMetrics> single, mix;
  for (const auto& m : ms) (m.mode == ProbeMode::SINGLE ? single : mix).push_back(m);
  std::ostringstream want_mix, want_single, want_all;
  write_metrics_csv(want_mix, mix);
  write_metrics_csv(want_single, single);
  write_metrics_csv(want_all, ms);
  CHECK(read_bytes(out / "figures/fig2-mix-deltas/pos.csv") == want_mix.str());
  CHECK(read_bytes(out / "figures/fig7-single-deltas/pos.csv") == want_single.str());
  CHECK(read_bytes(out / "toy/pos/metrics.csv") == want_all.str());
  CHECK(read_bytes(out / "figures/fig3-tag-distribution/pos.csv") ==
        read_bytes(out / "analysis/pos/tag_distribution.csv"));
  CHECK(read_bytes(out / "figures/fig6-confusions/pos-toy-mix-first.csv") ==
        read_bytes(out / "analysis/pos/confusions-toy-mix-first.csv"));
  for (const char* fam : {"fig1-mixing-weights/pos", "fig2-mix-deltas/pos"}) {
    CHECK(read_bytes(out / "figures" / (std::string(fam) + ".png")).substr(1, 3) == "PNG");
    CHECK(read_bytes(out / "figures" / (std::string(fam) + ".svg")).starts_with("<svg"));
  }

  // mixing weights: SINGLE has none, MIX weights are a distribution
  CHECK_THROWS_AS(report_weights(load_probe(out / "toy/pos/single-2")), ValidationError);
  const auto w = report_weights(load_probe(out / "toy/pos/mix-2"));
  REQUIRE(w.weights.size() == 3);
  double sum = 0;
  for (double x : w.weights) sum += x;
  CHECK(std::abs(sum - 1.0) < 1e-6);
  for (std::size_t i = 0; i + 1 < w.order.size(); ++i)
    CHECK(w.weights[w.order[i]] >= w.weights[w.order[i + 1]]);

  SUBCASE("resume retrains only the damaged cell") {
    const auto before = read_bytes(out / "manifest.json");
    fs::remove(out / "toy/pos/mix-1/probe.bin");
    const auto again = run_pipeline(cfg);
    REQUIRE(again.ok());
    CHECK(again.trained_cells == std::vector<std::string>{"toy/pos/mix-1"});
    CHECK(again.skipped_cells.size() == 5);
    CHECK(read_bytes(out / "manifest.json") == before);

    // a silently edited artifact also counts as damaged
    { std::ofstream(out / "toy/pos/single-0/predictions.jsonl", std::ios::app) << "\n"; }
    const auto third = run_stages(cfg, {Stage::TRAIN});
    CHECK(third.trained_cells == std::vector<std::string>{"toy/pos/single-0"});
  }

  SUBCASE("a second run elsewhere gives identical checksums") {
    auto cfg2 = cfg;
    cfg2.output_dir = dir / "out2";
    REQUIRE(run_pipeline(cfg2).ok());
    CHECK(read_manifest(dir / "out2") == manifest);
  }
}

TEST_CASE("pipeline: failures are recorded and the run continues") {
  const auto dir = scratch_dir("pipeline-fail");
  auto j = small_config(dir);
  auto broken = j["tasks"][0];
  broken["name"] = "missing";
  broken["test"] = (dir / "nope.conllu").string();
  j["tasks"].push_back(broken);
  const auto s = run_pipeline(parse_experiment(j, dir));
  CHECK_FALSE(s.ok());
  CHECK(s.trained_cells.size() == 6);
  bool ingest_failed = false;
  for (const auto& f : s.failures) {
    CHECK(f.path.find("missing") != std::string::npos);
    if (f.path == "tasks/missing/test.jsonl") ingest_failed = true;
  }
  CHECK(ingest_failed);
  std::size_t failed = 0;
  for (const auto& e : read_manifest(dir / "out")) failed += !e.ok;
  CHECK(failed > 0);
  CHECK(fs::exists(dir / "out/toy/pos/metrics.csv"));
}

TEST_CASE("pipeline: other formats and seed averaging") {
  const auto dir = scratch_dir("pipeline-formats");
  auto j = small_config(dir);
  const auto ner = data_path("mini.conll2002");
  j["seeds"] = 2;
  j["tasks"] = json::array({{{"name", "ner"},
                             {"task", "NER"},
                             {"format", "conll2002"},
                             {"train", ner},
                             {"valid", ner},
                             {"test", ner}}});
  const auto cfg = parse_experiment(j, dir);
  const auto s = run_pipeline(cfg);
  REQUIRE(s.ok());
  CHECK(s.trained_cells.size() == 12);
  CHECK(fs::exists(dir / "out/toy/ner/mix-2/seed-1/probe.bin"));
  CHECK_FALSE(fs::exists(dir / "out/analysis/ner"));

  // reported accuracy is the mean of the two seeds
  std::vector<std::vector<LayerMetrics>> per_seed;
  for (int seed = 0; seed < 2; ++seed) {
    std::vector<PredictionRecord> rs;
    for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
      for (int k = 0; k <= 2; ++k) {
        std::istringstream in(read_bytes(dir / "out" / cell_dir("toy", "ner", mode, k, seed, 2) /
                                         "predictions.jsonl"));
        auto part = read_records(in);
        rs.insert(rs.end(), part.begin(), part.end());
      }
    per_seed.push_back(summarize_task(rs, 3));
  }
  const auto mean = mean_metrics(per_seed);
  for (std::size_t g = 0; g < mean.size(); ++g)
    for (int k = 0; k < 3; ++k)
      CHECK(mean[g].accuracy[k] ==
            doctest::Approx((per_seed[0][g].accuracy[k] + per_seed[1][g].accuracy[k]) / 2));
  std::ostringstream want;
  write_metrics_csv(want, mean);
  CHECK(read_bytes(dir / "out/toy/ner/metrics.csv") == want.str());
}

TEST_CASE("plots: output files and input checks") {
  const auto dir = scratch_dir("plots");
  LineChart c{"t", "x", "y", {{"a", {0, 1, 2}, {0.1, std::nan(""), 0.3}}}};
  const auto files = render(c, dir / "line");
  REQUIRE(files.size() == 2);
  CHECK(read_bytes(files[1]).substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  CHECK(read_bytes(files[0]).find("<circle") != std::string::npos);

  LineChart bad{"t", "x", "y", {{"a", {0, 1}, {0.1}}}};
  CHECK_THROWS_AS(render(bad, dir / "bad"), ValidationError);
  CHECK_THROWS_AS(render(Heatmap{"h", "r", "c", {}, {}, {}}, dir / "empty"), ValidationError);
  BarChart b{"b", "y", {"p", "q"}, {{"g", {}, {0.5, -0.25}}}};
  CHECK(render(b, dir / "bar").size() == 2);
}
