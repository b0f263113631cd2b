#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/taxonomy.hpp"

namespace avdd {

// ----------------------------------------------------------------------------
// Manifest
// ----------------------------------------------------------------------------

enum class Split { train, test };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "test"; }

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct VideoEntry {
  std::string video_id;
  SceneClass scene;
  double duration_s = 10.0;
  Split split = Split::test;
};

/// Ordered catalogue of videos. The checksum is the SHA-256 of the canonical
/// line-delimited serialization, so two manifests with equal entries share it.
class Manifest {
 public:
  Manifest() : checksum_(sha256_hex("")) {}

  explicit Manifest(std::vector<VideoEntry> entries) : entries_(std::move(entries)) {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries_) {
      if (!seen.insert(e.video_id).second) {
        throw ValidationError("duplicate video_id '" + e.video_id + "'");
      }
      if (!(e.duration_s > 0.0)) {
        throw ValidationError("video '" + e.video_id + "' has non-positive duration");
      }
    }
    checksum_ = sha256_hex(serialize());
  }

  const std::vector<VideoEntry>& entries() const noexcept { return entries_; }
  const std::string& checksum() const noexcept { return checksum_; }
  std::size_t size() const noexcept { return entries_.size(); }

  const VideoEntry* find(std::string_view id) const {
    for (const auto& e : entries_) {
      if (e.video_id == id) return &e;
    }
    return nullptr;
  }

  /// Entries of one split (or all of them), as a new manifest with its own checksum.
  Manifest filter(std::optional<Split> split) const {
    if (!split) return *this;
    std::vector<VideoEntry> kept;
    for (const auto& e : entries_) {
      if (e.split == *split) kept.push_back(e);
    }
    return Manifest(std::move(kept));
  }

  std::string serialize() const {
    std::string out;
    for (const auto& e : entries_) {
      nlohmann::ordered_json line;
      line["video_id"] = e.video_id;
      line["class"] = std::string(e.scene.name());
      line["duration_s"] = e.duration_s;
      line["split"] = std::string(to_string(e.split));
      out += line.dump();
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<VideoEntry> entries_;
  std::string checksum_;
};

inline Manifest parse_manifest(std::string_view text) {
  std::vector<VideoEntry> entries;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    if (!obj.contains("video_id") || !obj["video_id"].is_string()) {
      throw ParseError(line_no, "missing string field 'video_id'");
    }
    if (!obj.contains("class") || !obj["class"].is_string()) {
      throw ParseError(line_no, "missing string field 'class'");
    }
    VideoEntry entry{obj["video_id"].get<std::string>(), SceneClass::from_index(0)};
    auto scene = SceneClass::parse(obj["class"].get<std::string>());
    if (!scene) {
      throw ValidationError("line " + std::to_string(line_no) + ": unknown scene class '" +
                            obj["class"].get<std::string>() + "' for video '" + entry.video_id + "'");
    }
    entry.scene = *scene;
    if (obj.contains("duration_s")) {
      if (!obj["duration_s"].is_number()) throw ParseError(line_no, "'duration_s' must be a number");
      entry.duration_s = obj["duration_s"].get<double>();
    }
    if (!obj.contains("split") || !obj["split"].is_string()) {
      throw ParseError(line_no, "missing string field 'split'");
    }
    auto split = parse_split(obj["split"].get<std::string>());
    if (!split) throw ParseError(line_no, "split must be 'train' or 'test'");
    entry.split = *split;
    if (!seen.insert(entry.video_id).second) {
      throw ValidationError("line " + std::to_string(line_no) + ": duplicate video_id '" +
                            entry.video_id + "'");
    }
    entries.push_back(std::move(entry));
  }
  return Manifest(std::move(entries));
}

inline Manifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  write_file(path, manifest.serialize());
}

// ----------------------------------------------------------------------------
// Swap plan
// ----------------------------------------------------------------------------

struct SwapPair {
  std::string video_a;
  std::string video_b;
  friend bool operator==(const SwapPair&, const SwapPair&) = default;
};

struct SwapPlan {
  std::uint64_t seed = 0;
  std::string source_checksum;
  std::string taxonomy = "10class";
  std::vector<std::string> unmodified;
  std::vector<SwapPair> swaps;

  std::size_t item_count() const noexcept { return unmodified.size() + 2 * swaps.size(); }
  friend bool operator==(const SwapPlan&, const SwapPlan&) = default;
};

/// Input to the class-agnostic planning core; class_id is any dense label.
struct PlanItem {
  std::string video_id;
  std::size_t class_id;
};

namespace detail {

// Largest number of cross-class pairs that can still be formed from bucket sizes.
inline std::size_t achievable_pairs(const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  std::size_t largest = 0;
  for (std::size_t n : sizes) {
    total += n;
    largest = std::max(largest, n);
  }
  return std::min(total / 2, total - largest);
}

}  // namespace detail

/// Runs the four-step VADD procedure over arbitrary labelled items:
///   1. per class, a random ceil(n/2) stay unmodified and floor(n/2) go to the bucket;
///   2-3. cross-class pairs are drawn at random from the bucket until only one class remains;
///   4. leftovers join the unmodified set.
/// Pairs are drawn uniformly among cross-class pairs that keep the maximum
/// number of future pairs reachable, so the bucket always drains as far as the
/// class sizes allow (it empties completely whenever no class is a strict majority
/// and the bucket size is even).
/// Unmodified ids are returned in input order, swaps in draw order.
inline std::pair<std::vector<std::string>, std::vector<SwapPair>> draw_swap_plan(
    std::span<const PlanItem> items, std::uint64_t seed) {
  std::size_t num_classes = 0;
  for (const auto& item : items) num_classes = std::max(num_classes, item.class_id + 1);

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < items.size(); ++i) by_class[items[i].class_id].push_back(i);
  std::size_t populated = 0;
  for (const auto& members : by_class) populated += members.empty() ? 0 : 1;
  if (populated < 2) {
    throw ProtocolError("cannot form cross-class swaps: need at least 2 classes, found " +
                        std::to_string(populated));
  }

  std::mt19937_64 rng(seed);
  std::vector<char> keep(items.size(), 0);
  std::vector<std::vector<std::size_t>> bucket(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto members = by_class[c];
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t kept = (members.size() + 1) / 2;
    for (std::size_t k = 0; k < members.size(); ++k) {
      if (k < kept) {
        keep[members[k]] = 1;
      } else {
        bucket[c].push_back(members[k]);
      }
    }
  }

  std::vector<std::size_t> sizes(num_classes);
  auto refresh = [&] {
    for (std::size_t c = 0; c < num_classes; ++c) sizes[c] = bucket[c].size();
  };
  auto take = [&](std::size_t c) {
    std::uniform_int_distribution<std::size_t> pick(0, bucket[c].size() - 1);
    std::size_t k = pick(rng);
    std::size_t item = bucket[c][k];
    bucket[c][k] = bucket[c].back();
    bucket[c].pop_back();
    return item;
  };

  std::vector<SwapPair> swaps;
  refresh();
  for (std::size_t reachable = detail::achievable_pairs(sizes); reachable > 0;
       reachable = detail::achievable_pairs(sizes)) {
    std::uint64_t total_weight = 0;
    for (std::size_t a = 0; a < num_classes; ++a) {
      for (std::size_t b = a + 1; b < num_classes; ++b) total_weight += sizes[a] * sizes[b];
    }
    std::size_t first = num_classes;
    std::size_t second = num_classes;
    for (int attempt = 0; attempt < 64 && first == num_classes; ++attempt) {
      std::uint64_t ticket = std::uniform_int_distribution<std::uint64_t>(0, total_weight - 1)(rng);
      for (std::size_t a = 0; a < num_classes && second == num_classes; ++a) {
        for (std::size_t b = a + 1; b < num_classes; ++b) {
          const std::uint64_t w = sizes[a] * sizes[b];
          if (ticket < w) {
            second = b;
            first = a;
            break;
          }
          ticket -= w;
        }
      }
      --sizes[first];
      --sizes[second];
      const bool feasible = detail::achievable_pairs(sizes) + 1 == reachable;
      ++sizes[first];
      ++sizes[second];
      if (!feasible) first = second = num_classes;
    }
    if (first == num_classes) {
      // Largest class with the next largest: always keeps the maximum reachable.
      std::vector<std::size_t> order(num_classes);
      for (std::size_t c = 0; c < num_classes; ++c) order[c] = c;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return sizes[x] > sizes[y]; });
      first = order[0];
      second = order[1];
    }
    std::size_t item_a = take(first);
    std::size_t item_b = take(second);
    if (std::bernoulli_distribution(0.5)(rng)) std::swap(item_a, item_b);
    swaps.push_back({items[item_a].video_id, items[item_b].video_id});
    refresh();
  }

  for (const auto& leftover : bucket) {
    for (std::size_t i : leftover) keep[i] = 1;
  }
  std::vector<std::string> unmodified;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (keep[i]) unmodified.push_back(items[i].video_id);
  }
  return {std::move(unmodified), std::move(swaps)};
}

/// VADD swap plan over every entry of the manifest (pre-filter to the intended split).
inline SwapPlan generate_swap_plan(const Manifest& manifest, std::uint64_t seed) {
  std::vector<PlanItem> items;
  items.reserve(manifest.size());
  for (const auto& e : manifest.entries()) items.push_back({e.video_id, e.scene.index()});
  auto [unmodified, swaps] = draw_swap_plan(items, seed);
  SwapPlan plan;
  plan.seed = seed;
  plan.source_checksum = manifest.checksum();
  plan.unmodified = std::move(unmodified);
  plan.swaps = std::move(swaps);
  return plan;
}

inline std::string serialize_plan(const SwapPlan& plan) {
  std::string out;
  nlohmann::ordered_json header;
  header["kind"] = "header";
  header["seed"] = plan.seed;
  header["source_checksum"] = plan.source_checksum;
  header["taxonomy"] = plan.taxonomy;
  out += header.dump();
  out += '\n';
  for (const auto& id : plan.unmodified) {
    nlohmann::ordered_json line;
    line["kind"] = "unmodified";
    line["video_id"] = id;
    out += line.dump();
    out += '\n';
  }
  for (const auto& swap : plan.swaps) {
    nlohmann::ordered_json line;
    line["kind"] = "swap";
    line["video_a"] = swap.video_a;
    line["video_b"] = swap.video_b;
    out += line.dump();
    out += '\n';
  }
  return out;
}

inline SwapPlan parse_plan(std::string_view text) {
  SwapPlan plan;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  auto string_field = [](const nlohmann::json& obj, const char* key, std::size_t line) {
    if (!obj.contains(key) || !obj[key].is_string()) {
      throw ParseError(line, std::string("missing string field '") + key + "'");
    }
    return obj[key].get<std::string>();
  };
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;

    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    if (!obj.is_object()) throw ParseError(line_no, "expected a JSON object");
    const std::string kind = string_field(obj, "kind", line_no);
    if (!have_header) {
      if (kind != "header") throw ParseError(line_no, "first record must be the header");
      if (!obj.contains("seed") || !obj["seed"].is_number_integer() ||
          (obj["seed"].is_number_integer() && !obj["seed"].is_number_unsigned() &&
           obj["seed"].get<std::int64_t>() < 0)) {
        throw ParseError(line_no, "header needs an unsigned integer 'seed'");
      }
      plan.seed = obj["seed"].get<std::uint64_t>();
      plan.source_checksum = string_field(obj, "source_checksum", line_no);
      plan.taxonomy = string_field(obj, "taxonomy", line_no);
      have_header = true;
    } else if (kind == "unmodified") {
      plan.unmodified.push_back(string_field(obj, "video_id", line_no));
    } else if (kind == "swap") {
      plan.swaps.push_back({string_field(obj, "video_a", line_no), string_field(obj, "video_b", line_no)});
    } else {
      throw ParseError(line_no, "unknown record kind '" + kind + "'");
    }
  }
  if (!have_header) throw ParseError(line_no, "missing header record");
  return plan;
}

inline SwapPlan load_plan(const std::filesystem::path& path) { return parse_plan(read_file(path)); }

inline void write_plan(const SwapPlan& plan, const std::filesystem::path& path) {
  write_file(path, serialize_plan(plan));
}

// ----------------------------------------------------------------------------
// Validation and summaries
// ----------------------------------------------------------------------------

struct Violation {
  enum class Kind { checksum_mismatch, unknown_video, duplicate_video, missing_video, same_class_swap };
  Kind kind;
  std::string detail;
};

inline std::string_view to_string(Violation::Kind k) {
  switch (k) {
    case Violation::Kind::checksum_mismatch: return "checksum_mismatch";
    case Violation::Kind::unknown_video: return "unknown_video";
    case Violation::Kind::duplicate_video: return "duplicate_video";
    case Violation::Kind::missing_video: return "missing_video";
    case Violation::Kind::same_class_swap: return "same_class_swap";
  }
  return "unknown";
}

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  std::size_t count(Violation::Kind kind) const {
    return static_cast<std::size_t>(std::count_if(violations.begin(), violations.end(),
                                                  [&](const Violation& v) { return v.kind == kind; }));
  }
};

/// Checks the plan against the manifest it claims to partition. Never throws on bad data.
inline ValidationReport validate_swap_plan(const SwapPlan& plan, const Manifest& manifest) {
  ValidationReport report;
  using K = Violation::Kind;
  if (plan.source_checksum != manifest.checksum()) {
    report.violations.push_back({K::checksum_mismatch, "plan checksum " + plan.source_checksum +
                                                            " != manifest checksum " + manifest.checksum()});
  }
  std::unordered_map<std::string, const VideoEntry*> lookup;
  for (const auto& e : manifest.entries()) lookup.emplace(e.video_id, &e);

  std::unordered_map<std::string, int> uses;
  auto note = [&](const std::string& id) {
    if (!lookup.count(id)) {
      report.violations.push_back({K::unknown_video, "video '" + id + "' is not in the manifest"});
    }
    if (++uses[id] == 2) {
      report.violations.push_back({K::duplicate_video, "video '" + id + "' appears more than once"});
    }
  };
  for (const auto& id : plan.unmodified) note(id);
  for (const auto& swap : plan.swaps) {
    note(swap.video_a);
    note(swap.video_b);
    auto a = lookup.find(swap.video_a);
    auto b = lookup.find(swap.video_b);
    if (a != lookup.end() && b != lookup.end() && a->second->scene == b->second->scene) {
      report.violations.push_back({K::same_class_swap, "swap (" + swap.video_a + ", " + swap.video_b +
                                                           ") pairs two '" +
                                                           std::string(a->second->scene.name()) + "' videos"});
    }
  }
  for (const auto& e : manifest.entries()) {
    if (!uses.count(e.video_id)) {
      report.violations.push_back({K::missing_video, "video '" + e.video_id + "' is not covered by the plan"});
    }
  }
  return report;
}

struct ClassSummary {
  std::string name;
  std::size_t total = 0;
  std::size_t unmodified = 0;
  std::size_t manipulated = 0;
};

/// Per-class unmodified/manipulated counts in the layout of the published class table.
inline std::vector<ClassSummary> summarize_plan(const SwapPlan& plan, const Manifest& manifest) {
  std::vector<ClassSummary> rows(kSceneNames.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].name = std::string(kSceneNames[i]);
  std::unordered_map<std::string, std::size_t> scene_of;
  for (const auto& e : manifest.entries()) {
    scene_of.emplace(e.video_id, e.scene.index());
    ++rows[e.scene.index()].total;
  }
  for (const auto& id : plan.unmodified) {
    if (auto it = scene_of.find(id); it != scene_of.end()) ++rows[it->second].unmodified;
  }
  for (const auto& swap : plan.swaps) {
    for (const auto* id : {&swap.video_a, &swap.video_b}) {
      if (auto it = scene_of.find(*id); it != scene_of.end()) ++rows[it->second].manipulated;
    }
  }
  std::erase_if(rows, [](const ClassSummary& r) { return r.total == 0; });
  return rows;
}

}  // namespace avdd
