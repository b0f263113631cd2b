#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/embedding_store.hpp"
#include "avdd/fusion_net.hpp"
#include "avdd/inference.hpp"
#include "avdd/metrics.hpp"
#include "avdd/model_config.hpp"
#include "avdd/protocol.hpp"
#include "avdd/synth.hpp"
#include "avdd/taxonomy.hpp"
#include "avdd/trainer.hpp"

namespace avdd::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitInternal = 4;

struct GlobalOptions {
  std::uint64_t seed = 0;
  bool quiet = false;
  bool json = false;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
  const GlobalOptions& global;

  std::ostream& progress() const {
    static std::ostream discard(nullptr);
    return global.quiet ? discard : err;
  }
};

// ----------------------------------------------------------------------------
// Shared helpers
// ----------------------------------------------------------------------------

inline std::optional<Modality> parse_modality_flag(const std::string& s) {
  if (s == "av") return std::nullopt;
  auto m = parse_modality(s);
  if (!m) throw ContractError("unknown modality '" + s + "' (expected av, audio or visual)");
  return m;
}

inline std::set<std::string> split_ids(const Manifest& manifest, Split split) {
  std::set<std::string> ids;
  for (const auto& e : manifest.entries()) {
    if (e.split == split) ids.insert(e.video_id);
  }
  return ids;
}

inline Taxonomy make_taxonomy(const std::string& token, const std::string& mapping_path) {
  Taxonomy t = Taxonomy::parse(token);
  if (!mapping_path.empty()) {
    if (t.kind() != Taxonomy::Kind::ThreeClass) throw ContractError("--mapping applies to the 3class taxonomy only");
    t = Taxonomy::three_class(Taxonomy::load_mapping(mapping_path));
  }
  return t;
}

/// "name:modality:dim,name:modality:dim,..."
inline std::vector<SourceSpec> parse_source_list(const std::string& text) {
  std::vector<SourceSpec> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ',')) {
    const auto a = item.find(':');
    const auto b = item.find(':', a == std::string::npos ? a : a + 1);
    if (a == std::string::npos || b == std::string::npos) {
      throw ContractError("source '" + item + "' must look like name:modality:dim");
    }
    auto modality = parse_modality(item.substr(a + 1, b - a - 1));
    if (!modality) throw ContractError("source '" + item + "' has an unknown modality");
    std::size_t dim = 0;
    try {
      dim = std::stoul(item.substr(b + 1));
    } catch (const std::exception&) {
      throw ContractError("source '" + item + "' has a bad dimension");
    }
    out.push_back({item.substr(0, a), *modality, dim});
  }
  return out;
}

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct ModelFlags {
  std::string attention = "ls";
  bool single_fc = false;
  std::size_t d_model = 256;
  std::size_t heads = 4;
  std::size_t fc_hidden = 512;
  double dropout = 0.3;
  std::size_t es_chunks = 4;
  std::optional<std::size_t> lr_end_epoch;  // defaults to the second-to-last epoch
  TrainConfig train;

  TrainConfig resolved_train(std::uint64_t seed) const {
    TrainConfig t = train;
    t.shuffle_seed = seed;
    t.lr_end_epoch = lr_end_epoch ? *lr_end_epoch : std::max<std::size_t>(1, t.epochs - (t.epochs > 1 ? 1 : 0));
    t.validate();
    return t;
  }
};

inline void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--d-model", f.d_model, "Token width")->capture_default_str();
  cmd->add_option("--heads", f.heads, "Attention heads")->capture_default_str();
  cmd->add_option("--fc-hidden", f.fc_hidden, "Hidden units of the first FC layer")->capture_default_str();
  cmd->add_option("--dropout", f.dropout, "Dropout rate after the first FC layer")->capture_default_str();
  cmd->add_option("--es-chunks", f.es_chunks, "Sub-tokens per source for early attention")->capture_default_str();
  cmd->add_option("--epochs", f.train.epochs)->capture_default_str();
  cmd->add_option("--batch-size", f.train.batch_size)->capture_default_str();
  cmd->add_option("--lr-start", f.train.lr_start)->capture_default_str();
  cmd->add_option("--lr-end", f.train.lr_end)->capture_default_str();
  cmd->add_option("--lr-end-epoch", f.lr_end_epoch, "Epoch at which the rate reaches --lr-end (default: epochs - 1)");
  cmd->add_option("--momentum", f.train.momentum)->capture_default_str();
}

inline ModelConfig model_config(const ModelFlags& f, std::vector<SourceSpec> sources, std::size_t classes,
                                std::uint64_t seed) {
  ModelConfig cfg;
  cfg.sources = std::move(sources);
  cfg.num_classes = classes;
  cfg.d_model = f.d_model;
  cfg.num_heads = f.heads;
  cfg.fc_hidden = f.fc_hidden;
  cfg.dropout_rate = f.dropout;
  cfg.attention = AttentionPlacement::parse(f.attention);
  cfg.double_fc = !f.single_fc;
  cfg.es_chunk_tokens = f.es_chunks;
  cfg.seed = seed;
  return cfg;
}

struct TrainOutcome {
  FusionModel<float> model;
  TrainLog log;
  std::vector<VideoPrediction> test_predictions;
  std::optional<ClassificationScore> test_score;
};

/// Trains on the manifest's train split and scores the test split by voting.
inline TrainOutcome train_and_score(const EmbeddingStore& store, const Manifest& manifest, std::optional<Modality> modality,
                                    const Taxonomy& taxonomy, bool augmented, const ModelConfig& cfg_in,
                                    const TrainConfig& tcfg, const Io& io) {
  const auto train_ids = split_ids(manifest, Split::train);
  const auto view = select(store, modality, train_ids, augmented);
  for (const auto& id : view.unknown_ids()) io.err << "warning: no embeddings for train video '" << id << "'\n";
  if (view.size() == 0) throw ValidationError("no training rows: the manifest's train split has no embeddings");
  ModelConfig cfg = cfg_in;
  cfg.sources = view.sources();
  cfg.num_classes = taxonomy.num_classes();
  auto model = FusionModel<float>::init(cfg);
  const auto data = make_training_set(view, taxonomy);
  auto& progress = io.progress();
  const auto log = train(model, data, tcfg, [&](const EpochLog& e) {
    progress << "epoch " << e.epoch << "  lr " << e.learning_rate << "  loss " << fixed(e.mean_loss, 5) << "  acc "
             << fixed(e.accuracy) << "\n";
  });
  TrainOutcome out{std::move(model), log, {}, std::nullopt};
  const auto test_ids = split_ids(manifest, Split::test);
  if (!test_ids.empty()) {
    out.test_predictions = classify_videos(out.model, store, test_ids, taxonomy);
    if (!out.test_predictions.empty()) {
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (const auto& p : out.test_predictions) pairs.emplace_back(p.true_label, p.predicted_label);
      out.test_score = score_classification(pairs, taxonomy.label_names());
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Subcommands
// ----------------------------------------------------------------------------

struct PlanArgs {
  std::string manifest;
  std::string out;
  std::string split = "all";
};

inline Manifest manifest_split(const Manifest& m, const std::string& split) {
  if (split == "all") return m;
  auto s = parse_split(split);
  if (!s) throw ContractError("unknown split '" + split + "' (expected train, test or all)");
  return m.filter(*s);
}

inline int cmd_plan(const PlanArgs& a, const Io& io) {
  const Manifest manifest = manifest_split(load_manifest(a.manifest), a.split);
  const SwapPlan plan = generate_swap_plan(manifest, io.global.seed);
  const auto report = validate_swap_plan(plan, manifest);
  if (!report.ok()) {
    for (const auto& v : report.violations) io.err << to_string(v.kind) << ": " << v.detail << "\n";
    return kExitValidation;
  }
  if (!a.out.empty()) write_plan(plan, a.out);
  const auto rows = summarize_plan(plan, manifest);
  std::size_t unmodified = 0, manipulated = 0, total = 0;
  for (const auto& r : rows) {
    unmodified += r.unmodified;
    manipulated += r.manipulated;
    total += r.total;
  }
  if (io.global.json) {
    nlohmann::ordered_json j;
    j["seed"] = plan.seed;
    j["source_checksum"] = plan.source_checksum;
    j["classes"] = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
      j["classes"].push_back({{"class", r.name}, {"total", r.total}, {"unmodified", r.unmodified}, {"manipulated", r.manipulated}});
    }
    j["total"] = total;
    j["unmodified"] = unmodified;
    j["manipulated"] = manipulated;
    j["swaps"] = plan.swaps.size();
    io.out << j.dump() << "\n";
    return kExitOk;
  }
  auto pct = [](std::size_t n, std::size_t d) { return d == 0 ? std::string("-") : fixed(100.0 * n / d, 2) + "%"; };
  char line[160];
  std::snprintf(line, sizeof(line), "%-18s %6s %18s %18s\n", "class", "total", "unmodified", "manipulated");
  io.out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-18s %6zu %8zu (%7s) %8zu (%7s)\n", r.name.c_str(), r.total, r.unmodified,
                  pct(r.unmodified, r.total).c_str(), r.manipulated, pct(r.manipulated, r.total).c_str());
    io.out << line;
  }
  std::snprintf(line, sizeof(line), "%-18s %6zu %8zu (%7s) %8zu (%7s)\n", "total", total, unmodified,
                pct(unmodified, total).c_str(), manipulated, pct(manipulated, total).c_str());
  io.out << line;
  return kExitOk;
}

struct ValidateArgs {
  std::string manifest;
  std::string plan;
  std::string store;
  std::string split = "all";
};

inline int cmd_validate(const ValidateArgs& a, const Io& io) {
  if (a.manifest.empty() && a.store.empty()) throw ContractError("validate needs --manifest and/or --store");
  if (!a.plan.empty() && a.manifest.empty()) throw ContractError("--plan needs --manifest");
  nlohmann::ordered_json j;
  bool ok = true;
  if (!a.manifest.empty()) {
    const Manifest manifest = manifest_split(load_manifest(a.manifest), a.split);
    j["manifest"] = {{"videos", manifest.size()}, {"checksum", manifest.checksum()}};
    if (!a.plan.empty()) {
      const auto report = validate_swap_plan(load_plan(a.plan), manifest);
      auto violations = nlohmann::ordered_json::array();
      for (const auto& v : report.violations) {
        violations.push_back({{"kind", std::string(to_string(v.kind))}, {"detail", v.detail}});
        io.err << to_string(v.kind) << ": " << v.detail << "\n";
      }
      j["plan"] = {{"ok", report.ok()}, {"violations", violations}};
      ok = ok && report.ok();
    }
  }
  if (!a.store.empty()) {
    const auto store = open_store(a.store);
    j["store"] = {{"records", store.size()}, {"width", store.width()}, {"segments_per_video", store.segments_per_video()}};
  }
  if (io.global.json) {
    j["ok"] = ok;
    io.out << j.dump() << "\n";
  } else {
    io.out << (ok ? "ok" : "invalid") << "\n";
  }
  return ok ? kExitOk : kExitValidation;
}

struct SynthArgs {
  std::string out;
  std::size_t classes = 3;
  std::size_t videos_per_class = 60;
  double noise = 0.1;
  double jitter = 0.05;
  std::size_t segments = 10;
  double train_fraction = 0.8;
  bool no_augmented = false;
  double augment_sigma = 0.05;
  double amplitude = 10.0;
  std::string sources;
};

inline int cmd_synth(const SynthArgs& a, const Io& io) {
  SynthConfig cfg;
  cfg.num_classes = a.classes;
  cfg.videos_per_class = a.videos_per_class;
  cfg.noise_sigma = a.noise;
  cfg.segment_jitter_sigma = a.jitter;
  cfg.segments_per_video = a.segments;
  cfg.train_fraction = a.train_fraction;
  cfg.augmented = !a.no_augmented;
  cfg.augment_sigma = a.augment_sigma;
  cfg.amplitude = a.amplitude;
  cfg.seed = io.global.seed;
  if (!a.sources.empty()) cfg.sources = parse_source_list(a.sources);
  const auto data = generate_synthetic(cfg);
  write_synthetic(data, a.out);
  const auto view = select(data.store, std::nullopt, split_ids(data.manifest, Split::test), false);
  const double oracle = oracle_accuracy(oracle_classify(view, data.prototypes));
  if (io.global.json) {
    io.out << nlohmann::ordered_json{{"out", a.out}, {"videos", data.manifest.size()}, {"records", data.store.size()},
                                     {"oracle_test_accuracy", oracle}}
                  .dump()
           << "\n";
  } else {
    io.out << "wrote " << data.manifest.size() << " videos (" << data.store.size() << " records) to " << a.out
           << "; nearest-prototype test accuracy " << fixed(oracle) << "\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string store;
  std::string manifest;
  std::string modality = "av";
  std::string taxonomy = "10class";
  std::string mapping;
  bool no_augmented = false;
  std::string out;
  std::string log;
  std::string predictions;
  std::string report;
  std::string name;
  ModelFlags model;
};

inline nlohmann::ordered_json prediction_json(const VideoPrediction& p, const Taxonomy& t) {
  return {{"video_id", p.video_id}, {"true_class", t.label_name(p.true_label)}, {"predicted_class", t.label_name(p.predicted_label)}};
}

inline int cmd_train(const TrainArgs& a, const Io& io) {
  const auto modality = parse_modality_flag(a.modality);
  const Taxonomy taxonomy = make_taxonomy(a.taxonomy, a.mapping);
  const ModelFlags& flags = a.model;
  const TrainConfig tcfg = flags.resolved_train(io.global.seed);
  const ModelConfig cfg = model_config(flags, {}, taxonomy.num_classes(), io.global.seed);
  const auto store = open_store(a.store);
  const auto manifest = load_manifest(a.manifest);
  const auto outcome = train_and_score(store, manifest, modality, taxonomy, !a.no_augmented, cfg, tcfg, io);

  if (!a.out.empty()) save_checkpoint(a.out, outcome.model, tcfg, tcfg.epochs);
  if (!a.log.empty()) write_file(a.log, outcome.log.to_csv());
  if (!a.predictions.empty()) {
    std::string text;
    for (const auto& p : outcome.test_predictions) text += prediction_json(p, taxonomy).dump() + "\n";
    write_file(a.predictions, text);
  }
  const std::string name = a.name.empty() ? (a.modality == "visual" ? "VSC" : a.modality == "audio" ? "ASC" : "AVSC")
                                          : a.name;
  if (!a.report.empty() && outcome.test_score) {
    EvalReport report;
    report.classifiers.push_back({name, *outcome.test_score});
    write_file(a.report, render_report(report, ReportFormat::json));
  }
  const auto& last = outcome.log.epochs.back();
  if (io.global.json) {
    nlohmann::ordered_json j;
    j["checkpoint"] = a.out;
    j["epochs"] = last.epoch;
    j["final_loss"] = last.mean_loss;
    j["final_train_accuracy"] = last.accuracy;
    j["test_videos"] = outcome.test_predictions.size();
    j["test_accuracy"] = outcome.test_score ? nlohmann::ordered_json(outcome.test_score->accuracy) : nlohmann::ordered_json();
    io.out << j.dump() << "\n";
  } else {
    io.out << name << ": " << last.epoch << " epochs, final loss " << fixed(last.mean_loss, 5) << ", train accuracy "
           << fixed(last.accuracy);
    if (outcome.test_score) {
      io.out << ", test accuracy " << fixed(outcome.test_score->accuracy) << " over " << outcome.test_score->total
             << " videos";
    }
    io.out << "\n";
  }
  return kExitOk;
}

struct DetectArgs {
  std::string store;
  std::string plan;
  std::string vsc;
  std::string asc;
  std::string taxonomy = "10class";
  std::string mapping;
  bool coarse = false;
  std::string out;
  std::string report;
};

inline int cmd_detect(const DetectArgs& a, const Io& io) {
  const bool coarse_mapping = a.coarse && !a.mapping.empty();
  const Taxonomy taxonomy = make_taxonomy(a.taxonomy, coarse_mapping ? "" : a.mapping);
  const auto vsc = load_checkpoint(a.vsc).model;
  const auto asc = load_checkpoint(a.asc).model;
  for (const auto* m : {&vsc, &asc}) {
    if (m->config().num_classes != taxonomy.num_classes()) {
      throw ValidationError("checkpoint has " + std::to_string(m->config().num_classes) + " classes but taxonomy " +
                            std::string(taxonomy.token()) + " has " + std::to_string(taxonomy.num_classes()));
    }
  }
  for (const auto& s : vsc.config().sources) {
    if (s.modality != Modality::visual) io.err << "warning: VSC uses audio source '" << s.name << "'\n";
  }
  for (const auto& s : asc.config().sources) {
    if (s.modality != Modality::audio) io.err << "warning: ASC uses visual source '" << s.name << "'\n";
  }
  const auto store = open_store(a.store);
  const auto plan = load_plan(a.plan);
  DetectOptions options;
  options.compare_coarse = a.coarse;
  if (coarse_mapping) options.mapping = Taxonomy::load_mapping(a.mapping);
  const auto result = detect_batch(Detector{vsc, asc, taxonomy, options}, store, plan);
  for (const auto& s : result.skipped) {
    io.err << "skipped '" << s.item_id << "': missing embeddings for";
    for (const auto& id : s.missing_videos) io.err << " " << id;
    io.err << "\n";
  }
  const std::string verdicts = serialize_verdicts(result.verdicts);
  if (!a.out.empty()) write_file(a.out, verdicts);

  std::optional<DetectionScore> score;
  if (!result.verdicts.empty()) score = score_detection(result.verdicts);
  if (!a.report.empty() && score) {
    EvalReport report;
    report.detection = score;
    write_file(a.report, render_report(report, ReportFormat::json));
  }
  if (a.out.empty() && !io.global.json) {
    io.out << verdicts;
  } else if (io.global.json) {
    nlohmann::ordered_json j;
    j["verdicts"] = result.verdicts.size();
    j["skipped"] = result.skipped.size();
    j["f1"] = score ? nlohmann::ordered_json(score->manipulated.f1) : nlohmann::ordered_json();
    io.out << j.dump() << "\n";
  } else {
    io.out << result.verdicts.size() << " verdicts, " << result.skipped.size() << " skipped";
    if (score) {
      io.out << "; precision " << fixed(score->manipulated.precision) << " recall " << fixed(score->manipulated.recall)
             << " F1 " << fixed(score->manipulated.f1);
    }
    io.out << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  std::string verdicts;
  std::vector<std::string> predictions;
  std::string taxonomy = "10class";
  std::string format = "text";
  std::string out;
  std::string confusion;
};

inline std::vector<nlohmann::json> read_json_lines(const std::string& path) {
  const std::string text = read_file(path);
  std::vector<nlohmann::json> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = std::string_view(text).substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, path + ": " + e.what());
    }
  }
  return out;
}

inline int cmd_eval(const EvalArgs& a, const Io& io) {
  if (a.verdicts.empty() && a.predictions.empty()) throw ContractError("eval needs --verdicts or --predictions");
  auto format = parse_report_format(io.global.json ? "json" : a.format);
  if (!format) throw ContractError("unknown format '" + a.format + "' (expected text, json or csv)");
  const Taxonomy taxonomy = Taxonomy::parse(a.taxonomy);
  EvalReport report;
  for (const auto& path : a.predictions) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::size_t line = 0;
    for (const auto& j : read_json_lines(path)) {
      ++line;
      auto label = [&](const char* key) {
        if (!j.is_object() || !j.contains(key) || !j[key].is_string()) throw ParseError(line, std::string("missing '") + key + "'");
        auto l = taxonomy.parse_label(j[key].get<std::string>());
        if (!l) throw ValidationError(path + ": class '" + j[key].get<std::string>() + "' is not in " + std::string(taxonomy.token()));
        return *l;
      };
      pairs.emplace_back(label("true_class"), label("predicted_class"));
    }
    report.classifiers.push_back({std::filesystem::path(path).stem().string(), score_classification(pairs, taxonomy.label_names())});
  }
  if (!a.verdicts.empty()) {
    const auto verdicts = parse_verdicts(read_file(a.verdicts));
    report.detection = score_detection(verdicts);
  }
  const std::string text = render_report(report, *format);
  if (!a.out.empty()) write_file(a.out, text);
  if (!a.confusion.empty() && !report.classifiers.empty()) write_file(a.confusion, confusion_csv(report.classifiers.front().score.confusion));
  io.out << text;
  return kExitOk;
}

struct AblationRow {
  std::string name;
  AttentionPlacement attention;
  bool augmented;
  bool double_fc;
};

/// The eight attention placements with augmentation and two FC layers, then the
/// late-attention model without augmented data and with a single FC layer.
inline std::vector<AblationRow> ablation_grid() {
  std::vector<AblationRow> rows;
  for (const auto& p : AttentionPlacement::all()) rows.push_back({p.to_string(), p, true, true});
  const auto ls = AttentionPlacement::parse("ls");
  rows.push_back({"ls no-da", ls, false, true});
  rows.push_back({"ls single-fc", ls, true, false});
  return rows;
}

struct AblateArgs {
  std::string store;
  std::string manifest;
  std::string modality = "av";
  std::string taxonomy = "10class";
  std::string grid = "all";
  std::string out;
  ModelFlags model;
};

inline int cmd_ablate(const AblateArgs& a, const Io& io) {
  const auto modality = parse_modality_flag(a.modality);
  const Taxonomy taxonomy = Taxonomy::parse(a.taxonomy);
  std::vector<AblationRow> rows = ablation_grid();
  if (a.grid != "all") {
    std::set<std::string> wanted;
    std::stringstream ss(a.grid);
    for (std::string item; std::getline(ss, item, ',');) wanted.insert(item);
    std::erase_if(rows, [&](const AblationRow& r) { return !wanted.count(r.name); });
    if (rows.size() != wanted.size()) throw ContractError("unknown row in --grid '" + a.grid + "'");
  }
  const ModelFlags& flags = a.model;
  const TrainConfig tcfg = flags.resolved_train(io.global.seed);
  const auto store = open_store(a.store);
  const auto manifest = load_manifest(a.manifest);

  std::string csv = "configuration,attention,augmented,fc_layers,test_accuracy,loss_epoch1,loss_final\n";
  for (const auto& row : rows) {
    io.progress() << "ablation row '" << row.name << "'\n";
    ModelConfig cfg = model_config(flags, {}, taxonomy.num_classes(), io.global.seed);
    cfg.attention = row.attention;
    cfg.double_fc = row.double_fc;
    const auto outcome = train_and_score(store, manifest, modality, taxonomy, row.augmented, cfg, tcfg, io);
    const double accuracy = outcome.test_score ? outcome.test_score->accuracy : 0.0;
    char line[256];
    std::snprintf(line, sizeof(line), "%s,%s,%d,%d,%.6f,%.9g,%.9g\n", row.name.c_str(), row.attention.to_string().c_str(),
                  row.augmented ? 1 : 0, row.double_fc ? 2 : 1, accuracy, outcome.log.epochs.front().mean_loss,
                  outcome.log.epochs.back().mean_loss);
    csv += line;
  }
  if (!a.out.empty()) write_file(a.out, csv);
  io.out << csv;
  return kExitOk;
}

// ----------------------------------------------------------------------------
// Entry point
// ----------------------------------------------------------------------------

/// Parses args (without the program name) and runs one subcommand. Machine output
/// goes to out, diagnostics to err. Returns the process exit code.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Audio-visual scene discrepancy toolkit", "avdd"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions global;
  app.add_option("--seed", global.seed, "Seed for planning, synthesis, initialisation and shuffling")->capture_default_str();
  app.add_flag("--quiet", global.quiet, "Suppress progress output");
  app.add_flag("--json", global.json, "Machine-readable JSON summaries");

  PlanArgs plan;
  auto* c_plan = app.add_subcommand("plan", "Draw a VADD swap plan from a manifest");
  c_plan->add_option("manifest,--manifest", plan.manifest, "Manifest (JSON lines)")->required();
  c_plan->add_option("--out", plan.out, "Swap-plan file to write");
  c_plan->add_option("--split", plan.split, "train, test or all")->capture_default_str();

  ValidateArgs validate;
  auto* c_validate = app.add_subcommand("validate", "Check a manifest, a swap plan against it, or a store");
  c_validate->add_option("--manifest", validate.manifest);
  c_validate->add_option("--plan", validate.plan);
  c_validate->add_option("--store", validate.store);
  c_validate->add_option("--split", validate.split)->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic manifest and embedding store");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--classes", synth.classes)->capture_default_str();
  c_synth->add_option("--videos-per-class", synth.videos_per_class)->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "Per-video noise sigma")->capture_default_str();
  c_synth->add_option("--jitter", synth.jitter, "Per-segment noise sigma")->capture_default_str();
  c_synth->add_option("--segments", synth.segments)->capture_default_str();
  c_synth->add_option("--train-fraction", synth.train_fraction)->capture_default_str();
  c_synth->add_flag("--no-augmented", synth.no_augmented, "Do not add augmented duplicates");
  c_synth->add_option("--augment-sigma", synth.augment_sigma)->capture_default_str();
  c_synth->add_option("--amplitude", synth.amplitude, "Scale of every stored value")->capture_default_str();
  c_synth->add_option("--sources", synth.sources, "name:modality:dim,... (default: the six standard sources)");

  TrainArgs train_args;
  auto* c_train = app.add_subcommand("train", "Train a scene classifier");
  c_train->add_option("--store", train_args.store)->required();
  c_train->add_option("--manifest", train_args.manifest)->required();
  c_train->add_option("--modality", train_args.modality, "av, audio or visual")->capture_default_str();
  c_train->add_option("--attention", train_args.model.attention, "ns or es/ms/ls joined by +")->capture_default_str();
  c_train->add_option("--taxonomy", train_args.taxonomy, "10class or 3class")->capture_default_str();
  c_train->add_option("--mapping", train_args.mapping, "JSON scene -> coarse class mapping for 3class");
  c_train->add_flag("--no-augmented", train_args.no_augmented, "Ignore augmented records");
  c_train->add_flag("--single-fc", train_args.model.single_fc, "One FC layer instead of two");
  c_train->add_option("--out", train_args.out, "Checkpoint to write");
  c_train->add_option("--log", train_args.log, "Per-epoch CSV log");
  c_train->add_option("--predictions", train_args.predictions, "Test-split predictions (JSON lines)");
  c_train->add_option("--report", train_args.report, "Test-split report (JSON)");
  c_train->add_option("--name", train_args.name, "Classifier name in reports");
  add_model_flags(c_train, train_args.model);

  DetectArgs detect;
  auto* c_detect = app.add_subcommand("detect", "Flag audio-visual scene discrepancies for a swap plan");
  c_detect->add_option("--store", detect.store)->required();
  c_detect->add_option("--plan", detect.plan)->required();
  c_detect->add_option("--vsc", detect.vsc, "Visual scene classifier checkpoint")->required();
  c_detect->add_option("--asc", detect.asc, "Acoustic scene classifier checkpoint")->required();
  c_detect->add_option("--taxonomy", detect.taxonomy)->capture_default_str();
  c_detect->add_option("--mapping", detect.mapping);
  c_detect->add_flag("--coarse", detect.coarse, "Compare 10-class predictions after coarsening");
  c_detect->add_option("--out", detect.out, "Verdicts file (JSON lines)");
  c_detect->add_option("--report", detect.report, "Detection report (JSON)");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Score verdicts or predictions");
  c_eval->add_option("--verdicts", eval.verdicts);
  c_eval->add_option("--predictions", eval.predictions, "Prediction files, one report row each");
  c_eval->add_option("--taxonomy", eval.taxonomy)->capture_default_str();
  c_eval->add_option("--format", eval.format, "text, json or csv")->capture_default_str();
  c_eval->add_option("--out", eval.out);
  c_eval->add_option("--confusion", eval.confusion, "Confusion-matrix CSV of the first prediction file");

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Train every design variant and compare test accuracy");
  c_ablate->add_option("--store", ablate.store)->required();
  c_ablate->add_option("--manifest", ablate.manifest)->required();
  c_ablate->add_option("--modality", ablate.modality)->capture_default_str();
  c_ablate->add_option("--taxonomy", ablate.taxonomy)->capture_default_str();
  c_ablate->add_option("--grid", ablate.grid, "all, or a comma list of row names")->capture_default_str();
  c_ablate->add_option("--out", ablate.out, "CSV to write");
  add_model_flags(c_ablate, ablate.model);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  const Io io{out, err, global};
  try {
    if (*c_plan) return cmd_plan(plan, io);
    if (*c_validate) return cmd_validate(validate, io);
    if (*c_synth) return cmd_synth(synth, io);
    if (*c_train) return cmd_train(train_args, io);
    if (*c_detect) return cmd_detect(detect, io);
    if (*c_eval) return cmd_eval(eval, io);
    if (*c_ablate) return cmd_ablate(ablate, io);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const ProtocolError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace avdd::cli
