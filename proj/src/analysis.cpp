#include "probing/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <ostream>
#include <unordered_map>

#include <json.hpp>

#include "probing/error.hpp"
#include "probing/metrics.hpp"

namespace probing {

std::string to_string(const ProbeKey& key) {
  return key.model + "/" + std::string(to_string(key.mode)) + "-" + std::to_string(key.layer);
}

CorrectnessTable correctness_table(const std::vector<PredictionRecord>& records) {
  CorrectnessTable t;
  std::set<ProbeKey> probes;
  std::set<std::string> tokens;
  for (const auto& r : records) {
    probes.insert({r.model, r.mode, r.layer});
    tokens.insert(r.example_id);
  }
  t.probes.assign(probes.begin(), probes.end());
  t.tokens.assign(tokens.begin(), tokens.end());
  std::map<ProbeKey, std::size_t> col;
  for (std::size_t i = 0; i < t.probes.size(); ++i) col[t.probes[i]] = i;
  std::unordered_map<std::string, std::size_t> row;
  for (std::size_t i = 0; i < t.tokens.size(); ++i) row[t.tokens[i]] = i;

  constexpr std::uint8_t kUnset = 2;
  t.correct.assign(t.tokens.size(), std::vector<std::uint8_t>(t.probes.size(), kUnset));
  for (const auto& r : records) {
    auto& cell = t.correct[row.at(r.example_id)][col.at({r.model, r.mode, r.layer})];
    if (cell != kUnset)
      throw ValidationError("two records for token " + r.example_id + " under probe " +
                            to_string(ProbeKey{r.model, r.mode, r.layer}));
    cell = r.correct();
    auto [it, fresh] = t.gold.emplace(r.example_id, r.gold);
    if (!fresh && it->second != r.gold)
      throw ValidationError("token " + r.example_id + " has conflicting gold labels");
  }
  for (std::size_t i = 0; i < t.tokens.size(); ++i)
    for (std::size_t j = 0; j < t.probes.size(); ++j)
      if (t.correct[i][j] == kUnset)
        throw ValidationError("probe " + to_string(t.probes[j]) + " has no record for token " +
                              t.tokens[i]);
  return t;
}

std::vector<std::string> filter_hard_tokens(const std::vector<PredictionRecord>& records) {
  const auto t = correctness_table(records);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < t.tokens.size(); ++i)
    if (std::find(t.correct[i].begin(), t.correct[i].end(), 0) != t.correct[i].end())
      out.push_back(t.tokens[i]);
  return out;
}

TagDistribution tag_distribution(const std::map<std::string, std::string>& gold,
                                 const std::vector<std::string>& subset) {
  auto normalize = [](std::map<std::string, double>& m, double n) {
    for (auto& [k, v] : m) v /= n;
  };
  TagDistribution d;
  for (const auto& [id, label] : gold) d.full[label] += 1.0;
  normalize(d.full, static_cast<double>(gold.size()));
  for (const auto& id : subset) {
    auto it = gold.find(id);
    if (it == gold.end()) throw NotFoundError("no gold label for token " + id);
    d.filtered[it->second] += 1.0;
  }
  normalize(d.filtered, static_cast<double>(subset.size()));
  return d;
}

// ---- Groups --------------------------------------------------------------

namespace {

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

WordClass word_class(const std::string& tag) {
  static const std::set<std::string> closed{"aux", "det", "part", "pron", "sconj"};
  static const std::set<std::string> open{"adj", "adv", "noun", "propn", "verb", "intj"};
  static const std::set<std::string> excluded{"adp", "cconj", "punct", "num", "sym", "x"};
  const auto t = lower(tag);
  if (closed.contains(t)) return WordClass::CLOSED;
  if (open.contains(t)) return WordClass::OPEN;
  if (excluded.contains(t)) return WordClass::EXCLUDED;
  throw ValidationError("unknown POS tag '" + tag + "'");
}

GroupedF1 class_group_f1(const std::map<std::string, std::vector<double>>& f1,
                         const std::map<std::string, double>* frequencies) {
  GroupedF1 g;
  g.weighted = frequencies != nullptr;
  std::size_t layers = 0;
  for (const auto& [tag, curve] : f1) {
    if (layers == 0) layers = curve.size();
    if (curve.size() != layers) throw ValidationError("F1 curves differ in length");
    switch (word_class(tag)) {
      case WordClass::CLOSED: g.closed[lower(tag)] = curve; break;
      case WordClass::OPEN:
        g.open[lower(tag)] = curve;
        if (lower(tag) == "intj") g.intj_in_open = true;
        break;
      case WordClass::EXCLUDED: break;
    }
  }
  auto weight_of = [&](const std::string& tag) {
    if (!frequencies) return 1.0;
    for (const auto& [k, v] : *frequencies)
      if (lower(k) == tag) return v;
    throw ValidationError("no frequency for tag '" + tag + "'");
  };
  auto mean = [&](const std::map<std::string, std::vector<double>>& group) {
    std::vector<double> out;
    if (group.empty()) return out;
    for (std::size_t k = 0; k < layers; ++k) {
      double sum = 0.0, wsum = 0.0;
      for (const auto& [tag, curve] : group) {
        if (std::isnan(curve[k])) continue;
        const double w = weight_of(tag);
        sum += w * curve[k];
        wsum += w;
      }
      out.push_back(wsum > 0 ? sum / wsum : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
  };
  g.closed_mean = mean(g.closed);
  g.open_mean = mean(g.open);
  return g;
}

// ---- Confusions ----------------------------------------------------------

long ConfusionMatrix::total() const {
  long n = 0;
  for (const auto& row : counts)
    for (long c : row) n += c;
  return n;
}

std::pair<std::vector<int>, std::vector<int>> default_halves(int top_layer) {
  const int mid = top_layer / 2;
  std::vector<int> lo, hi;
  for (int k = 0; k < mid; ++k) lo.push_back(k);
  for (int k = mid + 1; k <= top_layer; ++k) hi.push_back(k);
  return {lo, hi};
}

std::pair<ConfusionMatrix, ConfusionMatrix> summed_confusions(
    const std::vector<PredictionRecord>& records, const std::string& model, ProbeMode mode,
    const std::vector<std::string>& subset, const std::vector<std::string>& labels,
    const std::vector<int>& first_half, const std::vector<int>& second_half) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], i);
  const std::set<std::string> keep(subset.begin(), subset.end());
  const std::set<int> lo(first_half.begin(), first_half.end());
  const std::set<int> hi(second_half.begin(), second_half.end());

  auto blank = [&](const std::vector<int>& layers) {
    return ConfusionMatrix{labels, std::vector<std::vector<long>>(labels.size(),
                                                                  std::vector<long>(labels.size())),
                           layers};
  };
  std::pair<ConfusionMatrix, ConfusionMatrix> out{blank(first_half), blank(second_half)};
  for (const auto& r : records) {
    if (r.model != model || r.mode != mode || !keep.contains(r.example_id)) continue;
    const bool in_lo = lo.contains(r.layer), in_hi = hi.contains(r.layer);
    if (!in_lo && !in_hi) continue;
    auto g = index.find(r.gold);
    auto p = index.find(r.predicted);
    if (g == index.end() || p == index.end())
      throw ValidationError("label '" + (g == index.end() ? r.gold : r.predicted) +
                            "' missing from the confusion label set");
    if (in_lo) ++out.first.counts[g->second][p->second];
    if (in_hi) ++out.second.counts[g->second][p->second];
  }
  return out;
}

// ---- Trajectories --------------------------------------------------------

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::ALWAYS_CORRECT: return "ALWAYS_CORRECT";
    case Pattern::ALWAYS_WRONG: return "ALWAYS_WRONG";
    case Pattern::LEARNED: return "LEARNED";
    case Pattern::LOST: return "LOST";
    case Pattern::DIP: return "DIP";
    case Pattern::SPIKE: return "SPIKE";
    case Pattern::UNSTABLE: return "UNSTABLE";
  }
  return "UNSTABLE";
}

Pattern trajectory_classify(const std::vector<std::uint8_t>& bits) {
  // run-length encode, then read the pattern off the run count and first bit
  std::vector<std::uint8_t> runs;
  for (auto b : bits)
    if (runs.empty() || runs.back() != (b != 0)) runs.push_back(b != 0);
  if (runs.empty()) return Pattern::UNSTABLE;
  const bool first = runs.front();
  switch (runs.size()) {
    case 1: return first ? Pattern::ALWAYS_CORRECT : Pattern::ALWAYS_WRONG;
    case 2: return first ? Pattern::LOST : Pattern::LEARNED;
    case 3: return first ? Pattern::DIP : Pattern::SPIKE;
    default: return Pattern::UNSTABLE;
  }
}

std::vector<TrajectoryVector> trajectories(const std::vector<PredictionRecord>& records,
                                           const std::string& model, ProbeMode mode,
                                           const std::vector<std::string>& subset) {
  int top = -1;
  for (const auto& r : records)
    if (r.model == model && r.mode == mode) top = std::max(top, r.layer);
  if (top < 0)
    throw NotFoundError("no records for " + model + " " + std::string(to_string(mode)));
  std::unordered_map<std::string, std::size_t> row;
  std::vector<TrajectoryVector> out;
  for (const auto& id : subset) {
    row.emplace(id, out.size());
    out.push_back({id, std::vector<std::uint8_t>(top + 1, 2)});
  }
  for (const auto& r : records) {
    if (r.model != model || r.mode != mode) continue;
    auto it = row.find(r.example_id);
    if (it != row.end()) out[it->second].correct[r.layer] = r.correct();
  }
  for (const auto& t : out)
    for (std::size_t k = 0; k < t.correct.size(); ++k)
      if (t.correct[k] == 2)
        throw ValidationError("token " + t.token_id + " has no record at layer " +
                              std::to_string(k) + " for " + model);
  return out;
}

std::size_t JointPatternTable::total() const {
  std::size_t n = 0;
  for (const auto& [k, ids] : cells) n += ids.size();
  return n;
}

JointPatternTable cross_model_compare(const std::vector<TrajectoryVector>& a,
                                      const std::vector<TrajectoryVector>& b) {
  std::map<std::string, const TrajectoryVector*> bi;
  for (const auto& t : b) bi[t.token_id] = &t;
  if (a.size() != b.size() || bi.size() != b.size())
    throw ValidationError("trajectory sets cover different tokens");
  JointPatternTable table;
  for (const auto& t : a) {
    auto it = bi.find(t.token_id);
    if (it == bi.end())
      throw ValidationError("token " + t.token_id + " missing from the second model");
    table.cells[{trajectory_classify(t.correct), trajectory_classify(it->second->correct)}]
        .push_back(t.token_id);
  }
  return table;
}

// ---- Output --------------------------------------------------------------

namespace {

std::string bit_string(const std::vector<std::uint8_t>& bits) {
  std::string s;
  for (auto b : bits) s += b ? '1' : '0';
  return s;
}

}  // namespace

void write_trajectories_jsonl(
    std::ostream& out, const std::vector<std::string>& subset,
    const std::map<std::string, std::string>& gold,
    const std::map<std::string, std::vector<TrajectoryVector>>& by_family) {
  std::map<std::string, std::unordered_map<std::string, const TrajectoryVector*>> index;
  for (const auto& [family, list] : by_family)
    for (const auto& t : list) index[family][t.token_id] = &t;
  for (const auto& id : subset) {
    nlohmann::ordered_json j;
    j["token_id"] = id;
    if (auto g = gold.find(id); g != gold.end()) j["gold"] = g->second;
    auto& tj = j["trajectories"] = nlohmann::ordered_json::object();
    for (const auto& [family, m] : index) {
      auto it = m.find(id);
      if (it == m.end()) continue;
      tj[family] = {{"bits", bit_string(it->second->correct)},
                    {"pattern", to_string(trajectory_classify(it->second->correct))}};
    }
    out << j.dump() << '\n';
  }
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& m) {
  out << "gold,predicted,count\n";
  for (std::size_t g = 0; g < m.labels.size(); ++g)
    for (std::size_t p = 0; p < m.labels.size(); ++p)
      if (m.counts[g][p] != 0)
        out << m.labels[g] << ',' << m.labels[p] << ',' << m.counts[g][p] << '\n';
}

void write_group_f1_csv(std::ostream& out, const GroupedF1& g) {
  out << "group,tag,layer,f1\n";
  auto emit = [&](const char* group, const std::map<std::string, std::vector<double>>& curves,
                  const std::vector<double>& mean) {
    for (const auto& [tag, curve] : curves)
      for (std::size_t k = 0; k < curve.size(); ++k)
        out << group << ',' << tag << ',' << k << ',' << format_number(curve[k]) << '\n';
    for (std::size_t k = 0; k < mean.size(); ++k)
      out << group << ",mean," << k << ',' << format_number(mean[k]) << '\n';
  };
  emit("closed", g.closed, g.closed_mean);
  emit("open", g.open, g.open_mean);
}

void write_joint_table_csv(std::ostream& out, const JointPatternTable& t) {
  out << "pattern_a,pattern_b,count,examples\n";
  for (const auto& [key, ids] : t.cells) {
    out << to_string(key.first) << ',' << to_string(key.second) << ',' << ids.size() << ',';
    for (std::size_t i = 0; i < std::min<std::size_t>(ids.size(), 5); ++i)
      out << (i ? " " : "") << ids[i];
    out << '\n';
  }
}

}  // namespace probing
