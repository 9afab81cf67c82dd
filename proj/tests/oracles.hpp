#pragma once

// Independent reference computations used by unit and acceptance tests.

#include <algorithm>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "probing/analysis.hpp"
#include "probing/records.hpp"
#include "probing/rng.hpp"

namespace oracle {

using probing::PredictionRecord;
using probing::ProbeMode;

/// Random records for `tokens` x every (model, mode, layer) probe.
inline std::vector<PredictionRecord> random_records(probing::Rng& rng, int tokens,
                                                    const std::vector<std::string>& models,
                                                    int num_layers,
                                                    const std::vector<std::string>& labels,
                                                    double p_correct) {
  std::vector<std::string> gold(tokens);
  for (auto& g : gold) g = labels[probing::uniform_index(rng, labels.size())];
  std::vector<PredictionRecord> out;
  for (const auto& m : models)
    for (auto mode : {ProbeMode::SINGLE, ProbeMode::MIX})
      for (int k = 0; k < num_layers; ++k)
        for (int t = 0; t < tokens; ++t) {
          PredictionRecord r{"tok" + std::to_string(t), m, mode, k, gold[t], gold[t]};
          if (probing::uniform_real(rng) >= p_correct)
            r.predicted = labels[probing::uniform_index(rng, labels.size())];
          out.push_back(r);
        }
  return out;
}

inline double count_accuracy(const std::vector<PredictionRecord>& rs) {
  double ok = 0;
  for (const auto& r : rs)
    if (r.gold == r.predicted) ok += 1;
  return ok / rs.size();
}

/// F1 per label from a full confusion matrix: TP on the diagonal, FP the
/// rest of the column, FN the rest of the row.
inline std::map<std::string, double> confusion_f1(const std::vector<PredictionRecord>& rs) {
  std::set<std::string> labels;
  std::map<std::pair<std::string, std::string>, double> m;
  for (const auto& r : rs) {
    labels.insert(r.gold);
    labels.insert(r.predicted);
    m[{r.gold, r.predicted}] += 1;
  }
  std::map<std::string, double> out;
  for (const auto& l : labels) {
    double tp = m[{l, l}], col = 0, row = 0;
    for (const auto& o : labels) {
      col += m[{o, l}];
      row += m[{l, o}];
    }
    const double p = col > 0 ? tp / col : 0, r = row > 0 ? tp / row : 0;
    out[l] = p + r > 0 ? 2 * p * r / (p + r) : 0;
  }
  return out;
}

/// Token ids with at least one incorrect record, by scanning each token's rows.
inline std::vector<std::string> row_scan_hard(const std::vector<PredictionRecord>& rs) {
  std::map<std::string, bool> any_wrong;
  for (const auto& r : rs) any_wrong[r.example_id] = any_wrong[r.example_id] || r.gold != r.predicted;
  std::vector<std::string> out;
  for (const auto& [id, wrong] : any_wrong)
    if (wrong) out.push_back(id);
  return out;
}

/// Confusion counts over (token, layer) pairs by direct double loop.
inline std::vector<std::vector<long>> loop_confusion(const std::vector<PredictionRecord>& rs,
                                                     const std::string& model, ProbeMode mode,
                                                     const std::vector<std::string>& subset,
                                                     const std::vector<std::string>& labels,
                                                     const std::vector<int>& layers) {
  std::vector<std::vector<long>> c(labels.size(), std::vector<long>(labels.size()));
  for (std::size_t g = 0; g < labels.size(); ++g)
    for (std::size_t p = 0; p < labels.size(); ++p)
      for (const auto& r : rs)
        if (r.model == model && r.mode == mode && r.gold == labels[g] &&
            r.predicted == labels[p] &&
            std::find(layers.begin(), layers.end(), r.layer) != layers.end() &&
            std::find(subset.begin(), subset.end(), r.example_id) != subset.end())
          ++c[g][p];
  return c;
}

/// Every pattern whose regular expression matches the bit string.
inline std::vector<probing::Pattern> regex_patterns(const std::string& bits) {
  using probing::Pattern;
  static const std::vector<std::pair<Pattern, std::regex>> table = {
      {Pattern::ALWAYS_CORRECT, std::regex("^1+$")}, {Pattern::ALWAYS_WRONG, std::regex("^0+$")},
      {Pattern::LEARNED, std::regex("^0+1+$")},      {Pattern::LOST, std::regex("^1+0+$")},
      {Pattern::DIP, std::regex("^1+0+1+$")},        {Pattern::SPIKE, std::regex("^0+1+0+$")},
  };
  std::vector<Pattern> out;
  for (const auto& [p, re] : table)
    if (std::regex_match(bits, re)) out.push_back(p);
  if (out.empty()) out.push_back(Pattern::UNSTABLE);
  return out;
}

inline std::string bits_of(const std::vector<std::uint8_t>& v) {
  std::string s;
  for (auto b : v) s += b ? '1' : '0';
  return s;
}

}  // namespace oracle
