#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/embedding_store.hpp"

namespace avdd {

/// Where self-attention sits: early (within each source), per modality, late
/// (across every source token). No stage at all is the NS variant.
struct AttentionPlacement {
  bool early = false;
  bool modality = false;
  bool late = false;

  bool none() const noexcept { return !early && !modality && !late; }

  /// Parses "ns", "ls", "es+ms", ... (any order, no repeats).
  static AttentionPlacement parse(std::string_view text) {
    AttentionPlacement p;
    if (text == "ns") return p;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t end = text.find('+', pos);
      if (end == std::string_view::npos) end = text.size();
      const auto token = text.substr(pos, end - pos);
      bool* slot = token == "es" ? &p.early : token == "ms" ? &p.modality : token == "ls" ? &p.late : nullptr;
      if (slot == nullptr || *slot) {
        throw ContractError("bad attention placement '" + std::string(text) + "'");
      }
      *slot = true;
      pos = end + 1;
    }
    return p;
  }

  std::string to_string() const {
    if (none()) return "ns";
    std::string out;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!out.empty()) out += '+';
      out += name;
    };
    add(early, "es");
    add(modality, "ms");
    add(late, "ls");
    return out;
  }

  /// The eight placements, in the order the ablation table lists them.
  static std::array<AttentionPlacement, 8> all() {
    return {parse("ls"), parse("es"), parse("ms"), parse("ns"),
            parse("es+ls"), parse("ms+ls"), parse("es+ms"), parse("es+ms+ls")};
  }

  friend bool operator==(const AttentionPlacement&, const AttentionPlacement&) = default;
};

struct ModelConfig {
  std::vector<SourceSpec> sources;
  std::size_t num_classes = 10;
  std::size_t d_model = 256;
  std::size_t num_heads = 4;
  std::size_t fc_hidden = 512;
  double dropout_rate = 0.3;
  AttentionPlacement attention{false, false, true};
  bool double_fc = true;
  std::size_t es_chunk_tokens = 4;
  std::uint64_t seed = 0;

  std::size_t input_width() const { return total_width(sources); }

  void validate() const {
    if (sources.empty()) throw ContractError("model needs at least one source");
    std::unordered_set<std::string> names;
    for (const auto& s : sources) {
      if (s.dim == 0) throw ContractError("source '" + s.name + "' has zero dimension");
      if (!names.insert(s.name).second) throw ContractError("duplicate source '" + s.name + "'");
    }
    if (num_classes == 0) throw ContractError("num_classes must be positive");
    if (d_model == 0 || num_heads == 0 || fc_hidden == 0 || es_chunk_tokens == 0) {
      throw ContractError("d_model, num_heads, fc_hidden and es_chunk_tokens must be positive");
    }
    if (d_model % num_heads != 0) {
      throw ContractError("d_model (" + std::to_string(d_model) + ") must be divisible by num_heads (" +
                          std::to_string(num_heads) + ")");
    }
    if (d_model % es_chunk_tokens != 0) {
      throw ContractError("d_model (" + std::to_string(d_model) + ") must be divisible by es_chunk_tokens (" +
                          std::to_string(es_chunk_tokens) + ")");
    }
    if (attention.early && (d_model / es_chunk_tokens) % num_heads != 0) {
      throw ContractError("early attention sub-token width d_model/es_chunk_tokens must be divisible by num_heads");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ContractError("dropout_rate must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["sources"] = nlohmann::ordered_json::array();
  for (const auto& s : cfg.sources) {
    j["sources"].push_back({{"name", s.name}, {"modality", std::string(to_string(s.modality))}, {"dim", s.dim}});
  }
  j["num_classes"] = cfg.num_classes;
  j["d_model"] = cfg.d_model;
  j["num_heads"] = cfg.num_heads;
  j["fc_hidden"] = cfg.fc_hidden;
  j["dropout_rate"] = cfg.dropout_rate;
  j["attention"] = cfg.attention.to_string();
  j["double_fc"] = cfg.double_fc;
  j["es_chunk_tokens"] = cfg.es_chunk_tokens;
  j["seed"] = cfg.seed;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.sources.clear();
    for (const auto& s : j.at("sources")) {
      auto modality = parse_modality(s.at("modality").get<std::string>());
      if (!modality) throw FormatError("model config: bad source modality");
      cfg.sources.push_back({s.at("name").get<std::string>(), *modality, s.at("dim").get<std::size_t>()});
    }
    cfg.num_classes = j.at("num_classes").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.num_heads = j.at("num_heads").get<std::size_t>();
    cfg.fc_hidden = j.at("fc_hidden").get<std::size_t>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.attention = AttentionPlacement::parse(j.at("attention").get<std::string>());
    cfg.double_fc = j.at("double_fc").get<bool>();
    cfg.es_chunk_tokens = j.at("es_chunk_tokens").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

}  // namespace avdd
