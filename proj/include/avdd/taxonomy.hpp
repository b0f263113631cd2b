#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"

namespace avdd {

// The ten urban scene classes of the TAU audio-visual corpus, in canonical order.
inline constexpr std::array<std::string_view, 10> kSceneNames = {
    "airport", "bus",           "metro",           "metro_station",  "park",
    "public_square", "shopping_mall", "street_pedestrian", "street_traffic", "tram"};

class SceneClass {
 public:
  static std::optional<SceneClass> parse(std::string_view name) {
    for (std::size_t i = 0; i < kSceneNames.size(); ++i) {
      if (kSceneNames[i] == name) {
        return SceneClass(static_cast<std::uint8_t>(i));
      }
    }
    return std::nullopt;
  }

  static SceneClass from_name(std::string_view name) {
    auto scene = parse(name);
    if (!scene) {
      throw ValidationError("unknown scene class '" + std::string(name) + "'");
    }
    return *scene;
  }

  static SceneClass from_index(std::size_t index) {
    if (index >= kSceneNames.size()) {
      throw ContractError("scene index out of range: " + std::to_string(index));
    }
    return SceneClass(static_cast<std::uint8_t>(index));
  }

  std::size_t index() const noexcept { return index_; }
  std::string_view name() const noexcept { return kSceneNames[index_]; }

  friend auto operator<=>(const SceneClass&, const SceneClass&) = default;

 private:
  explicit SceneClass(std::uint8_t index) : index_(index) {}
  std::uint8_t index_;
};

enum class CoarseClass : std::uint8_t { indoor, outdoor, vehicle };

inline constexpr std::array<std::string_view, 3> kCoarseNames = {"indoor", "outdoor", "vehicle"};

inline std::string_view to_string(CoarseClass c) { return kCoarseNames[static_cast<std::size_t>(c)]; }

inline std::optional<CoarseClass> parse_coarse(std::string_view name) {
  for (std::size_t i = 0; i < kCoarseNames.size(); ++i) {
    if (kCoarseNames[i] == name) return static_cast<CoarseClass>(i);
  }
  return std::nullopt;
}

/// Label space used by a classifier: either the ten scene classes or the
/// indoor/outdoor/vehicle coarsening. Class indices are dense in [0, num_classes()).
class Taxonomy {
 public:
  enum class Kind { TenClass, ThreeClass };
  using Mapping = std::array<CoarseClass, 10>;

  static Taxonomy ten_class() { return Taxonomy(Kind::TenClass, default_mapping()); }

  static Taxonomy three_class(const Mapping& mapping = default_mapping()) {
    bool seen[3] = {false, false, false};
    for (CoarseClass c : mapping) seen[static_cast<std::size_t>(c)] = true;
    if (!(seen[0] && seen[1] && seen[2])) {
      throw ValidationError("3-class mapping must cover indoor, outdoor and vehicle");
    }
    return Taxonomy(Kind::ThreeClass, mapping);
  }

  // airport, metro_station, shopping_mall are indoor; bus, metro, tram are vehicles.
  static Mapping default_mapping() {
    using C = CoarseClass;
    return {C::indoor,  C::vehicle, C::vehicle, C::indoor,  C::outdoor,
            C::outdoor, C::indoor,  C::outdoor, C::outdoor, C::vehicle};
  }

  /// Reads a {"scene": "coarse", ...} JSON object; every scene must be present.
  static Mapping load_mapping(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw FormatError(path.string() + ": expected a JSON object");
    Mapping mapping{};
    std::array<bool, 10> assigned{};
    for (auto& [key, value] : doc.items()) {
      SceneClass scene = SceneClass::from_name(key);
      if (!value.is_string()) throw FormatError("mapping for '" + key + "' must be a string");
      auto coarse = parse_coarse(value.get<std::string>());
      if (!coarse) throw ValidationError("unknown coarse class '" + value.get<std::string>() + "'");
      mapping[scene.index()] = *coarse;
      assigned[scene.index()] = true;
    }
    for (std::size_t i = 0; i < assigned.size(); ++i) {
      if (!assigned[i]) {
        throw ValidationError("mapping is missing scene '" + std::string(kSceneNames[i]) + "'");
      }
    }
    return mapping;
  }

  static Taxonomy parse(std::string_view token) {
    if (token == "10class") return ten_class();
    if (token == "3class") return three_class();
    throw ContractError("unknown taxonomy '" + std::string(token) + "' (expected 10class or 3class)");
  }

  Kind kind() const noexcept { return kind_; }
  const Mapping& mapping() const noexcept { return mapping_; }
  std::size_t num_classes() const noexcept { return kind_ == Kind::TenClass ? 10 : 3; }
  std::string_view token() const noexcept { return kind_ == Kind::TenClass ? "10class" : "3class"; }

  CoarseClass coarsen(SceneClass scene) const {
    if (kind_ != Kind::ThreeClass) {
      throw ContractError("coarsen requires a 3-class taxonomy");
    }
    return mapping_[scene.index()];
  }

  /// Class index of a scene within this taxonomy's label space.
  std::size_t label(SceneClass scene) const {
    return kind_ == Kind::TenClass ? scene.index() : static_cast<std::size_t>(mapping_[scene.index()]);
  }

  std::string label_name(std::size_t label) const {
    if (label >= num_classes()) throw ContractError("label out of range: " + std::to_string(label));
    return std::string(kind_ == Kind::TenClass ? kSceneNames[label] : kCoarseNames[label]);
  }

  std::vector<std::string> label_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < num_classes(); ++i) names.push_back(label_name(i));
    return names;
  }

  std::optional<std::size_t> parse_label(std::string_view name) const {
    for (std::size_t i = 0; i < num_classes(); ++i) {
      if (label_name(i) == name) return i;
    }
    return std::nullopt;
  }

 private:
  Taxonomy(Kind kind, const Mapping& mapping) : kind_(kind), mapping_(mapping) {}

  Kind kind_;
  Mapping mapping_;
};

}  // namespace avdd
