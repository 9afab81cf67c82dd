#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "probing/records.hpp"

namespace probing {

/// Fraction of records with predicted == gold. Throws on empty input.
double accuracy(const std::vector<PredictionRecord>& records);

/// delta[k-1] = acc[k] - acc[k-1] for k = 1..L.
std::vector<double> accuracy_deltas(const std::vector<double>& per_layer_acc);

struct LabelCounts {
  long tp = 0, fp = 0, fn = 0;
};

/// Per-label true/false positive and false negative counts; labels that
/// occur neither as gold nor as prediction are absent.
std::map<std::string, LabelCounts> label_counts(const std::vector<PredictionRecord>& records);

/// F1 per label; 0 when precision + recall is 0.
std::map<std::string, double> per_label_f1(const std::vector<PredictionRecord>& records);

/// Sum of TP over sum of TP + FP across labels.
double micro_precision(const std::vector<PredictionRecord>& records);

struct LayerMetrics {
  std::string model;
  ProbeMode mode = ProbeMode::SINGLE;
  std::vector<double> accuracy;  // L + 1
  std::vector<double> deltas;    // L
  /// label -> F1 per layer; NaN where the label occurs in neither gold nor
  /// predictions of that layer.
  std::map<std::string, std::vector<double>> f1;
};

/// Metrics per (model, mode), sorted by model then mode. Every group must
/// cover layers 0..num_layers-1; a hole is reported by name.
std::vector<LayerMetrics> summarize_task(const std::vector<PredictionRecord>& records,
                                         int num_layers);

/// model,mode,layer,accuracy,delta (delta empty at layer 0).
void write_metrics_csv(std::ostream& out, const std::vector<LayerMetrics>& metrics);
/// model,mode,layer,label,f1 (f1 empty where undefined).
void write_f1_csv(std::ostream& out, const std::vector<LayerMetrics>& metrics);
void write_metrics_json(std::ostream& out, const std::vector<LayerMetrics>& metrics);

/// Shortest decimal that reads back to the same double.
std::string format_number(double v);

}  // namespace probing
