#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/embedding_store.hpp"
#include "avdd/fusion_net.hpp"
#include "avdd/protocol.hpp"
#include "avdd/taxonomy.hpp"

namespace avdd {

struct PredictionResult {
  std::size_t voted_class = 0;
  std::vector<std::size_t> segment_classes;
  std::vector<double> mean_probabilities;  // per class, over all segments
};

/// Majority vote over per-segment classes. Ties go to the class with the higher
/// mean probability, then to the lowest index.
inline std::size_t vote(std::span<const std::size_t> segment_classes, std::span<const double> mean_probabilities) {
  if (segment_classes.empty()) throw ContractError("cannot vote over zero segments");
  std::vector<std::size_t> counts(mean_probabilities.size(), 0);
  for (std::size_t c : segment_classes) {
    if (c >= counts.size()) throw ContractError("segment class out of range");
    ++counts[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < counts.size(); ++c) {
    if (counts[c] > counts[best] || (counts[c] == counts[best] && mean_probabilities[c] > mean_probabilities[best])) {
      best = c;
    }
  }
  return best;
}

/// Votes over a (segments x classes) probability matrix.
template <typename Scalar>
PredictionResult vote_probabilities(const Matrix<Scalar>& probabilities) {
  PredictionResult out;
  if (probabilities.rows() == 0) throw ContractError("cannot vote over zero segments");
  for (Eigen::Index r = 0; r < probabilities.rows(); ++r) {
    Eigen::Index arg = 0;
    probabilities.row(r).maxCoeff(&arg);
    out.segment_classes.push_back(static_cast<std::size_t>(arg));
  }
  // Summed in sorted order so the means do not depend on segment order.
  std::vector<double> column(static_cast<std::size_t>(probabilities.rows()));
  for (Eigen::Index c = 0; c < probabilities.cols(); ++c) {
    for (Eigen::Index r = 0; r < probabilities.rows(); ++r) column[static_cast<std::size_t>(r)] = probabilities(r, c);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    out.mean_probabilities.push_back(sum / static_cast<double>(probabilities.rows()));
  }
  out.voted_class = vote(out.segment_classes, out.mean_probabilities);
  return out;
}

/// Column ranges of a store row that feed a model, in the model's source order.
/// Throws ContractError when a model source is absent or has a different width.
inline std::vector<std::pair<std::size_t, std::size_t>> model_columns(const std::vector<SourceSpec>& store_sources,
                                                                      const std::vector<SourceSpec>& model_sources) {
  std::vector<std::pair<std::size_t, std::size_t>> columns;
  for (const auto& want : model_sources) {
    std::size_t offset = 0;
    bool found = false;
    for (const auto& s : store_sources) {
      if (s.name == want.name) {
        if (s.dim != want.dim || s.modality != want.modality) {
          throw ContractError("source '" + want.name + "' has width " + std::to_string(s.dim) +
                              " in the store but " + std::to_string(want.dim) + " in the model");
        }
        columns.emplace_back(offset, s.dim);
        found = true;
        break;
      }
      offset += s.dim;
    }
    if (!found) throw ContractError("store has no source '" + want.name + "' required by the model");
  }
  return columns;
}

/// Per-segment rows of a record, restricted to the model's sources.
inline Matrix<float> record_rows(const EmbeddingRecord& record, std::size_t segments, std::size_t store_width,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& columns) {
  if (record.values.size() != segments * store_width) {
    throw ContractError("record '" + record.video_id + "' does not match the store width");
  }
  std::size_t width = 0;
  for (const auto& c : columns) width += c.second;
  Matrix<float> rows(static_cast<Eigen::Index>(segments), static_cast<Eigen::Index>(width));
  for (std::size_t seg = 0; seg < segments; ++seg) {
    const auto full = record.segment(seg, store_width);
    std::size_t at = 0;
    for (const auto& [offset, dim] : columns) {
      for (std::size_t i = 0; i < dim; ++i) rows(static_cast<Eigen::Index>(seg), static_cast<Eigen::Index>(at + i)) = full[offset + i];
      at += dim;
    }
  }
  return rows;
}

/// Classifies every segment of a video with the model and votes.
inline PredictionResult predict_video(const FusionModel<float>& model, const EmbeddingStore& store,
                                      const EmbeddingRecord& record) {
  const auto columns = model_columns(store.sources(), model.config().sources);
  return vote_probabilities(model.predict_proba(record_rows(record, store.segments_per_video(), store.width(), columns)));
}

struct VideoPrediction {
  std::string video_id;
  std::size_t true_label;
  std::size_t predicted_label;
};

/// Voted predictions for the non-augmented records of the given videos (every
/// video when ids is empty), in store order. Labels live in the taxonomy's space.
inline std::vector<VideoPrediction> classify_videos(const FusionModel<float>& model, const EmbeddingStore& store,
                                                    const std::set<std::string>& ids, const Taxonomy& taxonomy) {
  if (model.config().num_classes != taxonomy.num_classes()) {
    throw ContractError("model has " + std::to_string(model.config().num_classes) + " classes, taxonomy " +
                        std::string(taxonomy.token()) + " has " + std::to_string(taxonomy.num_classes()));
  }
  const auto columns = model_columns(store.sources(), model.config().sources);
  std::vector<VideoPrediction> out;
  for (const auto& r : store.records()) {
    if (r.augmented || (!ids.empty() && !ids.count(r.video_id))) continue;
    const auto rows = record_rows(r, store.segments_per_video(), store.width(), columns);
    out.push_back({r.video_id, taxonomy.label(r.scene), vote_probabilities(model.predict_proba(rows)).voted_class});
  }
  return out;
}

struct DiscrepancyVerdict {
  std::string video_id;
  std::string visual_class;
  std::string audio_class;
  bool manipulated = false;
  std::optional<bool> ground_truth;

  friend bool operator==(const DiscrepancyVerdict&, const DiscrepancyVerdict&) = default;
};

struct DetectOptions {
  // With 10-class models, compare the coarsened labels instead of the scene labels.
  bool compare_coarse = false;
  Taxonomy::Mapping mapping = Taxonomy::default_mapping();
};

/// The pair of scene classifiers used for detection: VSC sees only visual sources,
/// ASC only audio sources, both in the same taxonomy.
struct Detector {
  const FusionModel<float>& vsc;
  const FusionModel<float>& asc;
  Taxonomy taxonomy;
  DetectOptions options{};

  void check() const {
    const std::size_t n = taxonomy.num_classes();
    if (vsc.config().num_classes != n || asc.config().num_classes != n) {
      throw ContractError("taxonomy " + std::string(taxonomy.token()) + " has " + std::to_string(n) +
                          " classes but the models have " + std::to_string(vsc.config().num_classes) + " and " +
                          std::to_string(asc.config().num_classes));
    }
    if (options.compare_coarse && taxonomy.kind() != Taxonomy::Kind::TenClass) {
      throw ContractError("coarse comparison needs 10-class models");
    }
  }

  bool disagree(std::size_t visual_label, std::size_t audio_label) const {
    if (!options.compare_coarse) return visual_label != audio_label;
    return options.mapping[visual_label] != options.mapping[audio_label];
  }
};

/// Verdict from already-voted labels: manipulated iff the labels disagree.
inline DiscrepancyVerdict make_verdict(const Detector& detector, std::string video_id, std::size_t visual_label,
                                       std::size_t audio_label, std::optional<bool> ground_truth = std::nullopt) {
  return {std::move(video_id), detector.taxonomy.label_name(visual_label), detector.taxonomy.label_name(audio_label),
          detector.disagree(visual_label, audio_label), ground_truth};
}

/// Runs VSC on the visual record and ASC on the audio record (the same record for
/// an unmodified video).
inline DiscrepancyVerdict detect_discrepancy(const Detector& detector, const EmbeddingStore& store,
                                             const EmbeddingRecord& visual, const EmbeddingRecord& audio,
                                             std::string video_id, std::optional<bool> ground_truth = std::nullopt) {
  detector.check();
  const auto v = predict_video(detector.vsc, store, visual);
  const auto a = predict_video(detector.asc, store, audio);
  return make_verdict(detector, std::move(video_id), v.voted_class, a.voted_class, ground_truth);
}

struct SkippedItem {
  std::string item_id;
  std::vector<std::string> missing_videos;
};

struct BatchResult {
  std::vector<DiscrepancyVerdict> verdicts;
  std::vector<SkippedItem> skipped;
};

/// Id of the manipulated item carrying the visual stream of a and the audio stream of b.
inline std::string swapped_item_id(const std::string& visual_video, const std::string& audio_video) {
  return visual_video + "+" + audio_video;
}

/// Scores every item of a plan, in plan order: each unmodified video, then for each
/// swap (a, b) the items (visual a + audio b) and (visual b + audio a). Augmented
/// records are never used. Items whose embeddings are missing are skipped and reported.
inline BatchResult detect_batch(const Detector& detector, const EmbeddingStore& store, const SwapPlan& plan) {
  detector.check();
  const auto visual_columns = model_columns(store.sources(), detector.vsc.config().sources);
  const auto audio_columns = model_columns(store.sources(), detector.asc.config().sources);

  std::unordered_map<std::string, const EmbeddingRecord*> lookup;
  for (const auto& r : store.records()) {
    if (!r.augmented) lookup.emplace(r.video_id, &r);
  }
  std::unordered_map<std::string, std::size_t> visual_cache, audio_cache;
  auto label = [&](const std::string& id, const FusionModel<float>& model, const auto& columns, auto& cache) {
    if (auto it = cache.find(id); it != cache.end()) return it->second;
    const auto* record = lookup.at(id);
    const auto rows = record_rows(*record, store.segments_per_video(), store.width(), columns);
    const std::size_t voted = vote_probabilities(model.predict_proba(rows)).voted_class;
    cache.emplace(id, voted);
    return voted;
  };

  BatchResult out;
  auto emit = [&](const std::string& item, const std::string& visual_id, const std::string& audio_id, bool truth) {
    SkippedItem skip{item, {}};
    if (!lookup.count(visual_id)) skip.missing_videos.push_back(visual_id);
    if (audio_id != visual_id && !lookup.count(audio_id)) skip.missing_videos.push_back(audio_id);
    if (!skip.missing_videos.empty()) {
      out.skipped.push_back(std::move(skip));
      return;
    }
    const std::size_t v = label(visual_id, detector.vsc, visual_columns, visual_cache);
    const std::size_t a = label(audio_id, detector.asc, audio_columns, audio_cache);
    out.verdicts.push_back(make_verdict(detector, item, v, a, truth));
  };
  for (const auto& id : plan.unmodified) emit(id, id, id, false);
  for (const auto& swap : plan.swaps) {
    emit(swapped_item_id(swap.video_a, swap.video_b), swap.video_a, swap.video_b, true);
    emit(swapped_item_id(swap.video_b, swap.video_a), swap.video_b, swap.video_a, true);
  }
  return out;
}

// ----------------------------------------------------------------------------
// Verdict files: one JSON object per line.
// ----------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const DiscrepancyVerdict& v) {
  nlohmann::ordered_json j;
  j["video_id"] = v.video_id;
  j["visual_class"] = v.visual_class;
  j["audio_class"] = v.audio_class;
  j["manipulated"] = v.manipulated;
  j["ground_truth"] = v.ground_truth ? nlohmann::ordered_json(*v.ground_truth) : nlohmann::ordered_json();
  return j;
}

inline std::string serialize_verdicts(std::span<const DiscrepancyVerdict> verdicts) {
  std::string out;
  for (const auto& v : verdicts) {
    out += to_json(v).dump();
    out += '\n';
  }
  return out;
}

inline DiscrepancyVerdict verdict_from_json(const nlohmann::json& j, std::size_t line_no) {
  auto text = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_string()) throw ParseError(line_no, std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
  };
  DiscrepancyVerdict v{text("video_id"), text("visual_class"), text("audio_class"), false, std::nullopt};
  if (!j.contains("manipulated") || !j["manipulated"].is_boolean()) throw ParseError(line_no, "missing boolean 'manipulated'");
  v.manipulated = j["manipulated"].get<bool>();
  if (j.contains("ground_truth") && !j["ground_truth"].is_null()) {
    if (!j["ground_truth"].is_boolean()) throw ParseError(line_no, "'ground_truth' must be boolean or null");
    v.ground_truth = j["ground_truth"].get<bool>();
  }
  return v;
}

inline std::vector<DiscrepancyVerdict> parse_verdicts(std::string_view text) {
  std::vector<DiscrepancyVerdict> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (!j.is_object()) throw ParseError(line_no, "expected a JSON object");
    out.push_back(verdict_from_json(j, line_no));
  }
  return out;
}

}  // namespace avdd
