#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/taxonomy.hpp"

namespace avdd {

enum class Modality { visual, audio };

inline std::string_view to_string(Modality m) { return m == Modality::visual ? "visual" : "audio"; }

inline std::optional<Modality> parse_modality(std::string_view s) {
  if (s == "visual") return Modality::visual;
  if (s == "audio") return Modality::audio;
  return std::nullopt;
}

struct SourceSpec {
  std::string name;
  Modality modality = Modality::visual;
  std::size_t dim = 0;
  friend bool operator==(const SourceSpec&, const SourceSpec&) = default;
};

/// The six embedding sources (three visual, three audio) with their native widths.
/// iov has no fixed width upstream; 256 is a placeholder for synthetic data.
inline std::vector<SourceSpec> default_sources() {
  return {{"vit", Modality::visual, 1000},  {"clip", Modality::visual, 1024},
          {"resnet_places", Modality::visual, 2048}, {"openl3", Modality::audio, 512},
          {"pann", Modality::audio, 512},   {"iov", Modality::audio, 256}};
}

inline std::size_t total_width(std::span<const SourceSpec> sources) {
  std::size_t width = 0;
  for (const auto& s : sources) width += s.dim;
  return width;
}

inline std::vector<SourceSpec> filter_sources(std::span<const SourceSpec> sources,
                                              std::optional<Modality> modality) {
  std::vector<SourceSpec> kept;
  for (const auto& s : sources) {
    if (!modality || s.modality == *modality) kept.push_back(s);
  }
  return kept;
}

/// One video's per-second vectors: values holds segments rows of the store width,
/// each row the concatenation of all sources in store order.
struct EmbeddingRecord {
  std::string video_id;
  SceneClass scene = SceneClass::from_index(0);
  bool augmented = false;
  std::vector<float> values;

  std::span<const float> segment(std::size_t index, std::size_t width) const {
    return std::span<const float>(values).subspan(index * width, width);
  }
  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  EmbeddingStore(std::vector<SourceSpec> sources, std::size_t segments_per_video)
      : sources_(std::move(sources)), segments_per_video_(segments_per_video) {
    check_sources();
  }

  const std::vector<SourceSpec>& sources() const noexcept { return sources_; }
  std::size_t segments_per_video() const noexcept { return segments_per_video_; }
  std::size_t width() const noexcept { return total_width(sources_); }
  const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }

  /// Appends a record after checking width, finiteness and id uniqueness.
  void add(EmbeddingRecord record) {
    check_record(record);
    const auto key = std::make_pair(record.video_id, record.augmented);
    for (const auto& r : records_) {
      if (r.video_id == key.first && r.augmented == key.second) {
        throw ValidationError("duplicate record for video '" + record.video_id + "'" +
                              (record.augmented ? " (augmented)" : ""));
      }
    }
    records_.push_back(std::move(record));
  }

  const EmbeddingRecord* find(std::string_view video_id, bool augmented = false) const {
    for (const auto& r : records_) {
      if (r.video_id == video_id && r.augmented == augmented) return &r;
    }
    return nullptr;
  }

  /// Column offset of each source within a row.
  std::vector<std::size_t> offsets() const {
    std::vector<std::size_t> out;
    std::size_t offset = 0;
    for (const auto& s : sources_) {
      out.push_back(offset);
      offset += s.dim;
    }
    return out;
  }

  void check_record(const EmbeddingRecord& record) const {
    const std::size_t expected = segments_per_video_ * width();
    if (record.values.size() != expected) {
      throw ValidationError("record '" + record.video_id + "' holds " + std::to_string(record.values.size()) +
                            " values, expected " + std::to_string(expected));
    }
    for (float v : record.values) {
      if (!std::isfinite(v)) {
        throw ValidationError("record '" + record.video_id + "' contains a non-finite value");
      }
    }
  }

  void validate() const {
    check_sources();
    std::set<std::pair<std::string, bool>> seen;
    for (const auto& r : records_) {
      check_record(r);
      if (!seen.emplace(r.video_id, r.augmented).second) {
        throw ValidationError("duplicate record for video '" + r.video_id + "'");
      }
    }
  }

  friend bool operator==(const EmbeddingStore&, const EmbeddingStore&) = default;

 private:
  void check_sources() const {
    if (segments_per_video_ == 0) throw ValidationError("segments_per_video must be positive");
    std::unordered_set<std::string> names;
    for (const auto& s : sources_) {
      if (s.dim == 0) throw ValidationError("source '" + s.name + "' has zero dimension");
      if (!names.insert(s.name).second) throw ValidationError("duplicate source name '" + s.name + "'");
    }
  }

  std::vector<SourceSpec> sources_;
  std::size_t segments_per_video_ = 10;
  std::vector<EmbeddingRecord> records_;
};

namespace detail {

inline void append_le_float(std::string& out, float value) {
  auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_le_float(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_store_index(const EmbeddingStore& store) {
  nlohmann::ordered_json index;
  index["segments_per_video"] = store.segments_per_video();
  index["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : store.sources()) {
    nlohmann::ordered_json src;
    src["name"] = s.name;
    src["modality"] = std::string(to_string(s.modality));
    src["dim"] = s.dim;
    index["sources"].push_back(std::move(src));
  }
  index["videos"] = nlohmann::ordered_json::array();
  std::size_t row = 0;
  for (const auto& r : store.records()) {
    nlohmann::ordered_json video;
    video["video_id"] = r.video_id;
    video["class"] = std::string(r.scene.name());
    video["augmented"] = r.augmented;
    video["row_offset"] = row;
    index["videos"].push_back(std::move(video));
    row += store.segments_per_video();
  }
  return index.dump(1) + "\n";
}

inline std::string serialize_store_data(const EmbeddingStore& store) {
  std::string out;
  std::size_t count = 0;
  for (const auto& r : store.records()) count += r.values.size();
  out.reserve(4 * count);
  for (const auto& r : store.records()) {
    for (float v : r.values) detail::append_le_float(out, v);
  }
  return out;
}

/// Writes index.json and data.bin. Refuses stores that break their invariants.
inline void write_store(const EmbeddingStore& store, const std::filesystem::path& dir) {
  store.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_file(dir / "index.json", serialize_store_index(store));
  write_file(dir / "data.bin", serialize_store_data(store));
}

inline EmbeddingStore open_store(const std::filesystem::path& dir) {
  const auto index_path = dir / "index.json";
  const auto data_path = dir / "data.bin";
  if (!std::filesystem::exists(index_path)) throw IoError("missing " + index_path.string());
  if (!std::filesystem::exists(data_path)) throw IoError("missing " + data_path.string());

  nlohmann::json index;
  try {
    index = nlohmann::json::parse(read_file(index_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
  const std::string data = read_file(data_path);

  try {
    if (!index.is_object()) throw FormatError("index.json: expected an object");
    const auto segments = index.at("segments_per_video").get<std::size_t>();
    std::vector<SourceSpec> sources;
    for (const auto& src : index.at("sources")) {
      auto modality = parse_modality(src.at("modality").get<std::string>());
      if (!modality) throw FormatError("index.json: bad modality for source");
      sources.push_back({src.at("name").get<std::string>(), *modality, src.at("dim").get<std::size_t>()});
    }
    EmbeddingStore store;
    try {
      store = EmbeddingStore(std::move(sources), segments);
    } catch (const ValidationError& e) {
      throw FormatError(std::string("index.json: ") + e.what());
    }
    const std::size_t width = store.width();
    const std::size_t row_bytes = 4 * width;
    const auto& videos = index.at("videos");
    const std::size_t expected_rows = videos.size() * segments;
    if (data.size() != expected_rows * row_bytes) {
      std::string culprit;
      for (const auto& v : videos) {
        const auto end = (v.at("row_offset").get<std::size_t>() + segments) * row_bytes;
        if (end > data.size()) {
          culprit = " (first affected video '" + v.at("video_id").get<std::string>() + "')";
          break;
        }
      }
      throw FormatError("data.bin holds " + std::to_string(data.size()) + " bytes, index implies " +
                        std::to_string(expected_rows * row_bytes) + culprit);
    }
    for (const auto& v : videos) {
      const auto id = v.at("video_id").get<std::string>();
      auto scene = SceneClass::parse(v.at("class").get<std::string>());
      if (!scene) throw FormatError("index.json: unknown class for video '" + id + "'");
      const auto offset = v.at("row_offset").get<std::size_t>();
      if (offset + segments > expected_rows) {
        throw FormatError("index.json: row_offset out of range for video '" + id + "'");
      }
      EmbeddingRecord record{id, *scene, v.at("augmented").get<bool>(), {}};
      record.values.resize(segments * width);
      const char* base = data.data() + offset * row_bytes;
      for (std::size_t i = 0; i < record.values.size(); ++i) record.values[i] = detail::read_le_float(base + 4 * i);
      try {
        store.add(std::move(record));
      } catch (const ValidationError& e) {
        throw FormatError(e.what());
      }
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(index_path.string() + ": " + e.what());
  }
}

// ----------------------------------------------------------------------------
// Dataset views
// ----------------------------------------------------------------------------

struct ViewRow {
  const EmbeddingRecord* record;
  std::size_t segment;
};

/// Row-wise view over a store restricted to some sources: one row per (video, segment),
/// in index order then segment order.
class DatasetView {
 public:
  DatasetView(const EmbeddingStore& store, std::vector<std::size_t> source_indices)
      : store_(&store), source_indices_(std::move(source_indices)) {
    const auto offs = store.offsets();
    for (std::size_t s : source_indices_) {
      sources_.push_back(store.sources()[s]);
      columns_.push_back({offs[s], store.sources()[s].dim});
      width_ += store.sources()[s].dim;
    }
  }

  const std::vector<SourceSpec>& sources() const noexcept { return sources_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return rows_.size(); }
  const std::vector<ViewRow>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& unknown_ids() const noexcept { return unknown_ids_; }

  /// Writes the concatenated vector of row i into out (width() floats).
  void gather(std::size_t i, std::span<float> out) const { gather(*rows_[i].record, rows_[i].segment, out); }

  void gather(const EmbeddingRecord& record, std::size_t segment, std::span<float> out) const {
    const auto full = record.segment(segment, store_->width());
    std::size_t at = 0;
    for (const auto& [offset, dim] : columns_) {
      std::memcpy(out.data() + at, full.data() + offset, dim * sizeof(float));
      at += dim;
    }
  }

 private:
  friend DatasetView select(const EmbeddingStore&, std::optional<Modality>,
                            const std::optional<std::set<std::string>>&, bool);

  const EmbeddingStore* store_;
  std::vector<std::size_t> source_indices_;
  std::vector<SourceSpec> sources_;
  std::vector<std::pair<std::size_t, std::size_t>> columns_;
  std::size_t width_ = 0;
  std::vector<ViewRow> rows_;
  std::vector<std::string> unknown_ids_;
};

/// Selects rows by modality, video ids (nullopt = every video) and augmentation.
/// Ids that match no record are reported through unknown_ids() rather than thrown.
inline DatasetView select(const EmbeddingStore& store, std::optional<Modality> modality,
                          const std::optional<std::set<std::string>>& video_ids, bool include_augmented) {
  std::vector<std::size_t> indices;
  for (std::size_t s = 0; s < store.sources().size(); ++s) {
    if (!modality || store.sources()[s].modality == *modality) indices.push_back(s);
  }
  DatasetView view(store, std::move(indices));
  std::unordered_set<std::string> matched;
  for (const auto& r : store.records()) {
    if (r.augmented && !include_augmented) continue;
    if (video_ids && !video_ids->count(r.video_id)) continue;
    matched.insert(r.video_id);
    for (std::size_t seg = 0; seg < store.segments_per_video(); ++seg) view.rows_.push_back({&r, seg});
  }
  if (video_ids) {
    for (const auto& id : *video_ids) {
      if (!matched.count(id)) view.unknown_ids_.push_back(id);
    }
  }
  return view;
}

}  // namespace avdd
