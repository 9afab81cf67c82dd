#include "probing/metrics.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "probing/error.hpp"

namespace probing {

double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ValidationError("accuracy of an empty record set");
  long ok = 0;
  for (const auto& r : records) ok += r.correct();
  return static_cast<double>(ok) / static_cast<double>(records.size());
}

std::vector<double> accuracy_deltas(const std::vector<double>& acc) {
  std::vector<double> out;
  for (std::size_t k = 1; k < acc.size(); ++k) out.push_back(acc[k] - acc[k - 1]);
  return out;
}

std::map<std::string, LabelCounts> label_counts(const std::vector<PredictionRecord>& records) {
  std::map<std::string, LabelCounts> c;
  for (const auto& r : records) {
    if (r.correct()) {
      ++c[r.gold].tp;
    } else {
      ++c[r.gold].fn;
      ++c[r.predicted].fp;
    }
  }
  return c;
}

std::map<std::string, double> per_label_f1(const std::vector<PredictionRecord>& records) {
  std::map<std::string, double> out;
  for (const auto& [label, c] : label_counts(records)) {
    const double p = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / (c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / (c.tp + c.fn) : 0.0;
    out[label] = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return out;
}

double micro_precision(const std::vector<PredictionRecord>& records) {
  long tp = 0, fp = 0;
  for (const auto& [label, c] : label_counts(records)) {
    tp += c.tp;
    fp += c.fp;
  }
  if (tp + fp == 0) throw ValidationError("micro precision of an empty record set");
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::vector<LayerMetrics> summarize_task(const std::vector<PredictionRecord>& records,
                                         int num_layers) {
  using Key = std::pair<std::string, ProbeMode>;
  std::map<Key, std::vector<std::vector<PredictionRecord>>> groups;
  for (const auto& r : records) {
    if (r.layer < 0 || r.layer >= num_layers)
      throw ValidationError("record for layer " + std::to_string(r.layer) + " outside 0.." +
                            std::to_string(num_layers - 1));
    auto& g = groups[{r.model, r.mode}];
    g.resize(num_layers);
    g[r.layer].push_back(r);
  }
  std::vector<LayerMetrics> out;
  for (auto& [key, layers] : groups) {
    LayerMetrics m;
    m.model = key.first;
    m.mode = key.second;
    std::set<std::string> labels;
    std::vector<std::map<std::string, double>> f1(num_layers);
    for (int k = 0; k < num_layers; ++k) {
      if (layers[k].empty())
        throw ValidationError("no records for " + m.model + " " + std::string(to_string(m.mode)) +
                              " layer " + std::to_string(k));
      m.accuracy.push_back(accuracy(layers[k]));
      f1[k] = per_label_f1(layers[k]);
      for (const auto& [label, v] : f1[k]) labels.insert(label);
    }
    m.deltas = accuracy_deltas(m.accuracy);
    for (const auto& label : labels) {
      auto& curve = m.f1[label];
      for (int k = 0; k < num_layers; ++k) {
        auto it = f1[k].find(label);
        curve.push_back(it == f1[k].end() ? std::numeric_limits<double>::quiet_NaN() : it->second);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::ostream& out, const std::vector<LayerMetrics>& metrics) {
  out << "model,mode,layer,accuracy,delta\n";
  for (const auto& m : metrics)
    for (std::size_t k = 0; k < m.accuracy.size(); ++k)
      out << m.model << ',' << to_string(m.mode) << ',' << k << ',' << format_number(m.accuracy[k])
          << ',' << (k == 0 ? "" : format_number(m.deltas[k - 1])) << '\n';
}

void write_f1_csv(std::ostream& out, const std::vector<LayerMetrics>& metrics) {
  out << "model,mode,layer,label,f1\n";
  for (const auto& m : metrics)
    for (const auto& [label, curve] : m.f1)
      for (std::size_t k = 0; k < curve.size(); ++k)
        out << m.model << ',' << to_string(m.mode) << ',' << k << ',' << label << ','
            << format_number(curve[k]) << '\n';
}

void write_metrics_json(std::ostream& out, const std::vector<LayerMetrics>& metrics) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& m : metrics) {
    nlohmann::ordered_json j;
    j["model"] = m.model;
    j["mode"] = to_string(m.mode);
    j["accuracy"] = m.accuracy;
    j["deltas"] = m.deltas;
    auto& f1 = j["f1"] = nlohmann::ordered_json::object();
    for (const auto& [label, curve] : m.f1) {
      auto& c = f1[label] = nlohmann::ordered_json::array();
      for (double v : curve) c.push_back(std::isnan(v) ? nlohmann::ordered_json() : nlohmann::ordered_json(v));
    }
    arr.push_back(std::move(j));
  }
  out << arr.dump(2) << '\n';
}

}  // namespace probing
