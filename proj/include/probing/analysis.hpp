#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "probing/records.hpp"

namespace probing {

struct ProbeKey {
  std::string model;
  ProbeMode mode = ProbeMode::SINGLE;
  int layer = 0;
  friend auto operator<=>(const ProbeKey&, const ProbeKey&) = default;
  friend bool operator==(const ProbeKey&, const ProbeKey&) = default;
};

std::string to_string(const ProbeKey& key);

/// Token x probe correctness. Rows follow `tokens`, columns follow `probes`
/// (both sorted).
struct CorrectnessTable {
  std::vector<std::string> tokens;
  std::vector<ProbeKey> probes;
  std::vector<std::vector<std::uint8_t>> correct;
  std::map<std::string, std::string> gold;
};

/// Throws ValidationError when some probe lacks a record for some token, or
/// a probe has two records for one token.
CorrectnessTable correctness_table(const std::vector<PredictionRecord>& records);

/// Tokens mispredicted by at least one probe, sorted.
std::vector<std::string> filter_hard_tokens(const std::vector<PredictionRecord>& records);

struct TagDistribution {
  std::map<std::string, double> full;
  std::map<std::string, double> filtered;
};

/// Normalized gold-label frequencies over all tokens and over `subset`.
TagDistribution tag_distribution(const std::map<std::string, std::string>& gold,
                                 const std::vector<std::string>& subset);

// ---- Open / closed class groups ------------------------------------------

enum class WordClass { OPEN, CLOSED, EXCLUDED };

/// UD coarse tags: closed {aux, det, part, pron, sconj}; open {adj, adv,
/// noun, propn, verb, intj}; excluded {adp, cconj, punct, num, sym, x}.
/// Case-insensitive. Throws ValidationError for any other tag.
WordClass word_class(const std::string& tag);

struct GroupedF1 {
  std::map<std::string, std::vector<double>> closed;  // lower-case tag -> curve
  std::map<std::string, std::vector<double>> open;
  std::vector<double> closed_mean;
  std::vector<double> open_mean;
  bool weighted = false;
  bool intj_in_open = false;  // set when intj contributed to the open group
};

/// Splits per-tag F1 curves into the two groups and averages them per layer.
/// Means are unweighted unless `frequencies` (gold count per tag) is given.
/// NaN points are left out of the means.
GroupedF1 class_group_f1(const std::map<std::string, std::vector<double>>& f1,
                         const std::map<std::string, double>* frequencies = nullptr);

// ---- Confusions ----------------------------------------------------------

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<long>> counts;  // [gold][predicted]
  std::vector<int> layers;

  long total() const;
};

/// {0..mid-1} and {mid+1..L} with mid = L / 2, i.e. {0..5} and {7..12} for L = 12.
std::pair<std::vector<int>, std::vector<int>> default_halves(int top_layer);

/// Confusions of one (model, mode) summed over each half's layers, restricted
/// to `subset` tokens. Rows and columns follow `labels`.
std::pair<ConfusionMatrix, ConfusionMatrix> summed_confusions(
    const std::vector<PredictionRecord>& records, const std::string& model, ProbeMode mode,
    const std::vector<std::string>& subset, const std::vector<std::string>& labels,
    const std::vector<int>& first_half, const std::vector<int>& second_half);

// ---- Trajectories --------------------------------------------------------

enum class Pattern { ALWAYS_CORRECT, ALWAYS_WRONG, LEARNED, LOST, DIP, SPIKE, UNSTABLE };

std::string_view to_string(Pattern p);

struct TrajectoryVector {
  std::string token_id;
  std::vector<std::uint8_t> correct;  // per layer 0..L
};

Pattern trajectory_classify(const std::vector<std::uint8_t>& bits);

/// Per-token correctness across layers for one (model, mode), restricted
/// to `subset` and ordered like it.
std::vector<TrajectoryVector> trajectories(const std::vector<PredictionRecord>& records,
                                           const std::string& model, ProbeMode mode,
                                           const std::vector<std::string>& subset);

struct JointPatternTable {
  std::map<std::pair<Pattern, Pattern>, std::vector<std::string>> cells;
  std::size_t total() const;
};

/// Throws ValidationError unless both lists cover the same token ids.
JointPatternTable cross_model_compare(const std::vector<TrajectoryVector>& a,
                                      const std::vector<TrajectoryVector>& b);

// ---- Output --------------------------------------------------------------

/// One line per token: {"token_id", "gold", "trajectories": {"<model>/<mode>":
/// {"bits": "0011...", "pattern": "LEARNED"}}}.
void write_trajectories_jsonl(
    std::ostream& out, const std::vector<std::string>& subset,
    const std::map<std::string, std::string>& gold,
    const std::map<std::string, std::vector<TrajectoryVector>>& by_probe_family);

/// gold,predicted,count rows over the non-zero cells.
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& m);
/// group,tag,layer,f1 with group mean rows tagged "mean".
void write_group_f1_csv(std::ostream& out, const GroupedF1& g);
void write_joint_table_csv(std::ostream& out, const JointPatternTable& t);

}  // namespace probing
