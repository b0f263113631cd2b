#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/inference.hpp"

namespace avdd {

/// counts[true][predicted].
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::vector<std::string> names = {})
      : labels(std::move(names)), counts(labels.size(), std::vector<std::size_t>(labels.size(), 0)) {}

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t row_sum(std::size_t t) const {
    std::size_t s = 0;
    for (std::size_t v : counts[t]) s += v;
    return s;
  }
  std::size_t total() const {
    std::size_t s = 0;
    for (std::size_t t = 0; t < size(); ++t) s += row_sum(t);
    return s;
  }
  std::size_t diagonal() const {
    std::size_t s = 0;
    for (std::size_t t = 0; t < size(); ++t) s += counts[t][t];
    return s;
  }
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassificationScore {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  ConfusionMatrix confusion;
  friend bool operator==(const ClassificationScore&, const ClassificationScore&) = default;
};

inline double ratio(std::size_t num, std::size_t den) { return static_cast<double>(num) / static_cast<double>(den); }

/// predictions: (true class, predicted class) pairs over label_names.
inline ClassificationScore score_classification(std::span<const std::pair<std::size_t, std::size_t>> predictions,
                                                std::vector<std::string> label_names) {
  if (predictions.empty()) throw ContractError("cannot score an empty prediction set");
  ClassificationScore s;
  s.confusion = ConfusionMatrix(std::move(label_names));
  for (const auto& [t, p] : predictions) {
    if (t >= s.confusion.size() || p >= s.confusion.size()) throw ContractError("class index out of range");
    ++s.confusion.counts[t][p];
  }
  s.total = predictions.size();
  s.correct = s.confusion.diagonal();
  s.accuracy = ratio(s.correct, s.total);
  return s;
}

/// Precision/recall/F1 of one positive class. A zero denominator yields 0 and sets
/// the matching flag.
struct BinaryScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
  friend bool operator==(const BinaryScore&, const BinaryScore&) = default;
};

inline BinaryScore binary_score(std::size_t tp, std::size_t fp, std::size_t fn) {
  BinaryScore s;
  s.precision_degenerate = tp + fp == 0;
  s.recall_degenerate = tp + fn == 0;
  s.f1_degenerate = 2 * tp + fp + fn == 0;
  s.precision = s.precision_degenerate ? 0.0 : ratio(tp, tp + fp);
  s.recall = s.recall_degenerate ? 0.0 : ratio(tp, tp + fn);
  // 2PR/(P+R) written over the counts, so the value is one correctly rounded quotient.
  s.f1 = s.f1_degenerate ? 0.0 : ratio(2 * tp, 2 * tp + fp + fn);
  return s;
}

/// Detection scores with "manipulated" as the positive class.
struct DetectionScore {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  BinaryScore manipulated;  // positive class
  BinaryScore unmodified;   // the same counts seen from the other class
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const DetectionScore&, const DetectionScore&) = default;
};

inline DetectionScore detection_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  if (tp + fp + fn + tn == 0) throw ContractError("cannot score an empty verdict set");
  DetectionScore s{tp, fp, fn, tn, binary_score(tp, fp, fn), binary_score(tn, fn, fp), 0, 0, 0, 0};
  s.macro_precision = (s.manipulated.precision + s.unmodified.precision) / 2;
  s.macro_recall = (s.manipulated.recall + s.unmodified.recall) / 2;
  s.macro_f1 = (s.manipulated.f1 + s.unmodified.f1) / 2;
  s.accuracy = ratio(tp + tn, tp + fp + fn + tn);
  return s;
}

/// Every verdict must carry a ground truth.
inline DetectionScore score_detection(std::span<const DiscrepancyVerdict> verdicts) {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (const auto& v : verdicts) {
    if (!v.ground_truth) throw ContractError("verdict '" + v.video_id + "' has no ground truth");
    if (v.manipulated) {
      (*v.ground_truth ? tp : fp) += 1;
    } else {
      (*v.ground_truth ? fn : tn) += 1;
    }
  }
  return detection_from_counts(tp, fp, fn, tn);
}

// ----------------------------------------------------------------------------
// Reports
// ----------------------------------------------------------------------------

inline constexpr int kReportVersion = 1;

struct ClassifierReport {
  std::string name;
  ClassificationScore score;
  friend bool operator==(const ClassifierReport&, const ClassifierReport&) = default;
};

struct EvalReport {
  std::vector<ClassifierReport> classifiers;
  std::optional<DetectionScore> detection;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

enum class ReportFormat { text, json, csv };

inline std::optional<ReportFormat> parse_report_format(std::string_view s) {
  if (s == "text") return ReportFormat::text;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  return std::nullopt;
}

namespace detail {

inline nlohmann::ordered_json binary_json(const BinaryScore& s) {
  nlohmann::ordered_json j;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["f1"] = s.f1;
  j["precision_degenerate"] = s.precision_degenerate;
  j["recall_degenerate"] = s.recall_degenerate;
  j["f1_degenerate"] = s.f1_degenerate;
  return j;
}

inline BinaryScore binary_from_json(const nlohmann::json& j) {
  return {j.at("precision").get<double>(),          j.at("recall").get<double>(),
          j.at("f1").get<double>(),                 j.at("precision_degenerate").get<bool>(),
          j.at("recall_degenerate").get<bool>(),    j.at("f1_degenerate").get<bool>()};
}

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace detail

/// Report JSON, schema version 1:
///   {"version":1,
///    "classifiers":[{"name","accuracy","correct","total","labels":[..],"confusion":[[..]]}],
///    "detection":null | {"tp","fp","fn","tn","accuracy","manipulated":{..},"unmodified":{..},
///                        "macro_precision","macro_recall","macro_f1"}}
inline nlohmann::ordered_json report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["version"] = kReportVersion;
  j["classifiers"] = nlohmann::ordered_json::array();
  for (const auto& c : report.classifiers) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["accuracy"] = c.score.accuracy;
    e["correct"] = c.score.correct;
    e["total"] = c.score.total;
    e["labels"] = c.score.confusion.labels;
    e["confusion"] = c.score.confusion.counts;
    j["classifiers"].push_back(std::move(e));
  }
  if (report.detection) {
    const auto& d = *report.detection;
    nlohmann::ordered_json e;
    e["tp"] = d.tp;
    e["fp"] = d.fp;
    e["fn"] = d.fn;
    e["tn"] = d.tn;
    e["accuracy"] = d.accuracy;
    e["manipulated"] = detail::binary_json(d.manipulated);
    e["unmodified"] = detail::binary_json(d.unmodified);
    e["macro_precision"] = d.macro_precision;
    e["macro_recall"] = d.macro_recall;
    e["macro_f1"] = d.macro_f1;
    j["detection"] = std::move(e);
  } else {
    j["detection"] = nullptr;
  }
  return j;
}

inline EvalReport parse_report(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("version").get<int>() != kReportVersion) throw FormatError("report: unsupported version");
    EvalReport r;
    for (const auto& e : j.at("classifiers")) {
      ClassifierReport c;
      c.name = e.at("name").get<std::string>();
      c.score.accuracy = e.at("accuracy").get<double>();
      c.score.correct = e.at("correct").get<std::size_t>();
      c.score.total = e.at("total").get<std::size_t>();
      c.score.confusion.labels = e.at("labels").get<std::vector<std::string>>();
      c.score.confusion.counts = e.at("confusion").get<std::vector<std::vector<std::size_t>>>();
      if (c.score.confusion.counts.size() != c.score.confusion.labels.size()) {
        throw FormatError("report: confusion matrix of '" + c.name + "' does not match its labels");
      }
      r.classifiers.push_back(std::move(c));
    }
    const auto& d = j.at("detection");
    if (!d.is_null()) {
      DetectionScore s;
      s.tp = d.at("tp").get<std::size_t>();
      s.fp = d.at("fp").get<std::size_t>();
      s.fn = d.at("fn").get<std::size_t>();
      s.tn = d.at("tn").get<std::size_t>();
      s.accuracy = d.at("accuracy").get<double>();
      s.manipulated = detail::binary_from_json(d.at("manipulated"));
      s.unmodified = detail::binary_from_json(d.at("unmodified"));
      s.macro_precision = d.at("macro_precision").get<double>();
      s.macro_recall = d.at("macro_recall").get<double>();
      s.macro_f1 = d.at("macro_f1").get<double>();
      r.detection = s;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

/// Confusion matrix as CSV: a header row of class names, then one row per true class.
inline std::string confusion_csv(const ConfusionMatrix& m) {
  std::string out = "true\\predicted";
  for (const auto& l : m.labels) out += "," + detail::csv_field(l);
  out += '\n';
  for (std::size_t t = 0; t < m.size(); ++t) {
    out += detail::csv_field(m.labels[t]);
    for (std::size_t v : m.counts[t]) out += "," + std::to_string(v);
    out += '\n';
  }
  return out;
}

inline std::string render_report(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::json:
      return report_to_json(report).dump(2) + "\n";
    case ReportFormat::csv: {
      std::string out = "name,accuracy,precision,recall,f1\n";
      for (const auto& c : report.classifiers) {
        out += detail::csv_field(c.name) + "," + detail::fmt(c.score.accuracy) + ",,,\n";
      }
      if (report.detection) {
        const auto& d = *report.detection;
        out += "detection," + detail::fmt(d.accuracy) + "," + detail::fmt(d.manipulated.precision) + "," +
               detail::fmt(d.manipulated.recall) + "," + detail::fmt(d.manipulated.f1) + "\n";
      }
      return out;
    }
    case ReportFormat::text:
    default: {
      std::string out;
      if (!report.classifiers.empty()) {
        std::size_t w = 10;
        for (const auto& c : report.classifiers) w = std::max(w, c.name.size());
        char line[256];
        std::snprintf(line, sizeof(line), "%-*s  %9s  %7s\n", static_cast<int>(w), "classifier", "accuracy", "items");
        out += line;
        for (const auto& c : report.classifiers) {
          std::snprintf(line, sizeof(line), "%-*s  %8.2f%%  %7zu\n", static_cast<int>(w), c.name.c_str(),
                        100.0 * c.score.accuracy, c.score.total);
          out += line;
        }
      }
      if (report.detection) {
        const auto& d = *report.detection;
        if (!out.empty()) out += '\n';
        char line[256];
        std::snprintf(line, sizeof(line), "detection (positive = manipulated): TP=%zu FP=%zu FN=%zu TN=%zu\n", d.tp,
                      d.fp, d.fn, d.tn);
        out += line;
        std::snprintf(line, sizeof(line), "  precision %.4f%s  recall %.4f%s  F1 %.4f%s\n", d.manipulated.precision,
                      d.manipulated.precision_degenerate ? " (degenerate)" : "", d.manipulated.recall,
                      d.manipulated.recall_degenerate ? " (degenerate)" : "", d.manipulated.f1,
                      d.manipulated.f1_degenerate ? " (degenerate)" : "");
        out += line;
        std::snprintf(line, sizeof(line), "  macro precision %.4f  macro recall %.4f  macro F1 %.4f  accuracy %.4f\n",
                      d.macro_precision, d.macro_recall, d.macro_f1, d.accuracy);
        out += line;
      }
      return out;
    }
  }
}

}  // namespace avdd
