#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/embedding_store.hpp"
#include "avdd/protocol.hpp"

namespace avdd {

/// Gaussian-cluster stand-in for real embeddings. Class k uses the k-th TAU scene name.
struct SynthConfig {
  std::size_t num_classes = 3;
  std::size_t videos_per_class = 60;
  std::vector<SourceSpec> sources = default_sources();
  double noise_sigma = 0.1;            // per-video offset around the class prototype
  double segment_jitter_sigma = 0.05;  // per-second offset on top of that
  std::uint64_t seed = 0;
  std::size_t segments_per_video = 10;
  double train_fraction = 0.8;
  bool augmented = true;               // add an augmented duplicate of every training video
  double augment_sigma = 0.05;         // extra noise on the visual part of augmented duplicates
  double amplitude = 10.0;             // global scale on every stored value; cosine geometry is unchanged

  void validate() const {
    if (num_classes < 2 || num_classes > kSceneNames.size()) {
      throw ContractError("synthetic data needs between 2 and 10 classes");
    }
    if (videos_per_class == 0) throw ContractError("videos_per_class must be positive");
    if (segments_per_video == 0) throw ContractError("segments_per_video must be positive");
    bool visual = false;
    bool audio = false;
    for (const auto& s : sources) {
      if (s.dim == 0) throw ContractError("source '" + s.name + "' has zero dimension");
      (s.modality == Modality::visual ? visual : audio) = true;
    }
    if (!visual || !audio) throw ContractError("synthetic data needs at least one visual and one audio source");
    if (!(noise_sigma >= 0.0) || !(segment_jitter_sigma >= 0.0) || !(augment_sigma >= 0.0)) {
      throw ContractError("noise levels must be non-negative");
    }
    if (!(amplitude > 0.0)) throw ContractError("amplitude must be positive");
    if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw ContractError("train_fraction must lie in [0, 1]");
  }
};

/// Unit prototype vector per (class, source).
struct Prototypes {
  std::vector<SourceSpec> sources;
  std::vector<std::string> classes;
  std::vector<std::vector<std::vector<float>>> vectors;  // [class][source][dim]

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["sources"] = nlohmann::ordered_json::array();
    for (const auto& s : sources) {
      j["sources"].push_back({{"name", s.name}, {"modality", std::string(avdd::to_string(s.modality))}, {"dim", s.dim}});
    }
    j["classes"] = classes;
    j["vectors"] = vectors;
    return j;
  }

  static Prototypes from_json(const nlohmann::json& j) {
    try {
      Prototypes p;
      for (const auto& s : j.at("sources")) {
        auto m = parse_modality(s.at("modality").get<std::string>());
        if (!m) throw FormatError("prototypes: bad modality");
        p.sources.push_back({s.at("name").get<std::string>(), *m, s.at("dim").get<std::size_t>()});
      }
      p.classes = j.at("classes").get<std::vector<std::string>>();
      p.vectors = j.at("vectors").get<std::vector<std::vector<std::vector<float>>>>();
      return p;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("prototypes: ") + e.what());
    }
  }
};

struct SynthDataset {
  Manifest manifest;
  EmbeddingStore store;
  Prototypes prototypes;
};

inline SynthDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Prototypes protos;
  protos.sources = cfg.sources;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    protos.classes.emplace_back(kSceneNames[c]);
    auto& per_source = protos.vectors.emplace_back();
    for (const auto& s : cfg.sources) {
      std::vector<double> v(s.dim);
      double norm = 0.0;
      for (auto& x : v) {
        x = normal(rng);
        norm += x * x;
      }
      norm = std::sqrt(norm);
      auto& out = per_source.emplace_back(s.dim);
      for (std::size_t i = 0; i < s.dim; ++i) out[i] = static_cast<float>(v[i] / norm);
    }
  }

  const std::size_t width = total_width(cfg.sources);
  const std::size_t train_per_class =
      static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.videos_per_class)));
  std::vector<VideoEntry> entries;
  EmbeddingStore store(cfg.sources, cfg.segments_per_video);
  std::vector<EmbeddingRecord> augmented;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    const SceneClass scene = SceneClass::from_index(c);
    std::vector<std::size_t> order(cfg.videos_per_class);
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> is_train(cfg.videos_per_class, 0);
    for (std::size_t k = 0; k < train_per_class; ++k) is_train[order[k]] = 1;

    for (std::size_t k = 0; k < cfg.videos_per_class; ++k) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%04zu", std::string(scene.name()).c_str(), k);
      const Split split = is_train[k] ? Split::train : Split::test;
      entries.push_back({id, scene, static_cast<double>(cfg.segments_per_video), split});

      EmbeddingRecord record{id, scene, false, std::vector<float>(cfg.segments_per_video * width)};
      std::vector<double> offset(width);
      for (auto& x : offset) x = cfg.noise_sigma * normal(rng);
      for (std::size_t seg = 0; seg < cfg.segments_per_video; ++seg) {
        std::size_t col = 0;
        for (std::size_t s = 0; s < cfg.sources.size(); ++s) {
          const auto& proto = protos.vectors[c][s];
          for (std::size_t i = 0; i < proto.size(); ++i, ++col) {
            const double jitter = cfg.segment_jitter_sigma > 0.0 ? cfg.segment_jitter_sigma * normal(rng) : 0.0;
            record.values[seg * width + col] = static_cast<float>(cfg.amplitude * (proto[i] + offset[col] + jitter));
          }
        }
      }
      if (cfg.augmented && split == Split::train) {
        EmbeddingRecord copy = record;
        copy.augmented = true;
        for (std::size_t seg = 0; seg < cfg.segments_per_video; ++seg) {
          std::size_t col = 0;
          for (const auto& s : cfg.sources) {
            for (std::size_t i = 0; i < s.dim; ++i, ++col) {
              if (s.modality == Modality::visual && cfg.augment_sigma > 0.0) {
                copy.values[seg * width + col] += static_cast<float>(cfg.amplitude * cfg.augment_sigma * normal(rng));
              }
            }
          }
        }
        augmented.push_back(std::move(copy));
      }
      store.add(std::move(record));
    }
  }
  for (auto& r : augmented) store.add(std::move(r));
  return {Manifest(std::move(entries)), std::move(store), std::move(protos)};
}

struct OraclePrediction {
  std::string video_id;
  std::size_t segment;
  SceneClass truth;
  SceneClass predicted;
};

/// Nearest-prototype (cosine) label for every row of the view, using only the
/// view's sources. Independent of any trained model.
inline std::vector<OraclePrediction> oracle_classify(const DatasetView& view, const Prototypes& protos) {
  std::vector<std::size_t> source_index;
  for (const auto& s : view.sources()) {
    std::size_t found = protos.sources.size();
    for (std::size_t i = 0; i < protos.sources.size(); ++i) {
      if (protos.sources[i] == s) found = i;
    }
    if (found == protos.sources.size()) throw ContractError("prototypes lack source '" + s.name + "'");
    source_index.push_back(found);
  }
  std::vector<std::vector<float>> flat(protos.classes.size());
  std::vector<double> norms(protos.classes.size(), 0.0);
  for (std::size_t c = 0; c < protos.classes.size(); ++c) {
    for (std::size_t s : source_index) {
      flat[c].insert(flat[c].end(), protos.vectors[c][s].begin(), protos.vectors[c][s].end());
    }
    for (float v : flat[c]) norms[c] += static_cast<double>(v) * v;
    norms[c] = std::sqrt(norms[c]);
  }

  std::vector<OraclePrediction> out;
  std::vector<float> row(view.width());
  for (std::size_t i = 0; i < view.size(); ++i) {
    view.gather(i, row);
    double row_norm = 0.0;
    for (float v : row) row_norm += static_cast<double>(v) * v;
    row_norm = std::sqrt(row_norm);
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t c = 0; c < flat.size(); ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) dot += static_cast<double>(row[k]) * flat[c][k];
      const double cos = dot / std::max(row_norm * norms[c], 1e-300);
      if (cos > best_cos) {
        best_cos = cos;
        best = c;
      }
    }
    const auto& r = view.rows()[i];
    out.push_back({r.record->video_id, r.segment, r.record->scene, SceneClass::from_name(protos.classes[best])});
  }
  return out;
}

inline double oracle_accuracy(const std::vector<OraclePrediction>& predictions) {
  if (predictions.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& p : predictions) correct += p.truth == p.predicted ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

/// Writes manifest.jsonl, store/ and prototypes.json under dir.
inline void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_manifest(data.manifest, dir / "manifest.jsonl");
  write_store(data.store, dir / "store");
  write_file(dir / "prototypes.json", data.prototypes.to_json().dump() + "\n");
}

inline Prototypes load_prototypes(const std::filesystem::path& path) {
  try {
    return Prototypes::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace avdd
