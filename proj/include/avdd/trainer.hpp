#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "avdd/common.hpp"
#include "avdd/embedding_store.hpp"
#include "avdd/fusion_net.hpp"
#include "avdd/taxonomy.hpp"

namespace avdd {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 20;
  double lr_start = 0.001;
  double lr_end = 0.00001;
  std::size_t lr_end_epoch = 19;
  double momentum = 0.0;
  std::uint64_t shuffle_seed = 0;

  void validate() const {
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    if (epochs == 0) throw ContractError("epochs must be at least 1");
    if (!(lr_start > 0.0) || !(lr_end > 0.0)) throw ContractError("learning rates must be positive");
    if (lr_end > lr_start) throw ContractError("lr_end must not exceed lr_start");
    if (lr_end_epoch == 0 || lr_end_epoch > epochs) throw ContractError("lr_end_epoch must lie in [1, epochs]");
    if (!(momentum >= 0.0)) throw ContractError("momentum must be non-negative");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline nlohmann::ordered_json to_json(const TrainConfig& cfg) {
  nlohmann::ordered_json j;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["lr_start"] = cfg.lr_start;
  j["lr_end"] = cfg.lr_end;
  j["lr_end_epoch"] = cfg.lr_end_epoch;
  j["momentum"] = cfg.momentum;
  j["shuffle_seed"] = cfg.shuffle_seed;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig cfg;
    cfg.batch_size = j.at("batch_size").get<std::size_t>();
    cfg.epochs = j.at("epochs").get<std::size_t>();
    cfg.lr_start = j.at("lr_start").get<double>();
    cfg.lr_end = j.at("lr_end").get<double>();
    cfg.lr_end_epoch = j.at("lr_end_epoch").get<std::size_t>();
    cfg.momentum = j.at("momentum").get<double>();
    cfg.shuffle_seed = j.at("shuffle_seed").get<std::uint64_t>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
}

/// Linear decay from lr_start at epoch 1 to lr_end at lr_end_epoch, constant afterwards.
inline double learning_rate(std::size_t epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw ContractError("epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(cfg.epochs) + "]");
  }
  if (epoch == 1) return cfg.lr_start;
  if (epoch >= cfg.lr_end_epoch) return cfg.lr_end;
  return cfg.lr_start + static_cast<double>(epoch - 1) * (cfg.lr_end - cfg.lr_start) /
                            static_cast<double>(cfg.lr_end_epoch - 1);
}

struct EpochLog {
  std::size_t epoch;
  double learning_rate;
  double mean_loss;
  double accuracy;
};

struct TrainLog {
  std::vector<EpochLog> epochs;

  std::string to_csv() const {
    std::string out = "epoch,lr,loss,accuracy\n";
    char line[128];
    for (const auto& e : epochs) {
      std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.learning_rate, e.mean_loss, e.accuracy);
      out += line;
    }
    return out;
  }
};

/// Dense copy of a dataset view: one input row and one label per (video, segment).
template <typename Scalar>
struct TrainingSet {
  Matrix<Scalar> inputs;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

inline TrainingSet<float> make_training_set(const DatasetView& view, const Taxonomy& taxonomy) {
  TrainingSet<float> set;
  set.inputs.resize(static_cast<Eigen::Index>(view.size()), static_cast<Eigen::Index>(view.width()));
  set.labels.reserve(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) {
    view.gather(i, std::span<float>(set.inputs.row(static_cast<Eigen::Index>(i)).data(), view.width()));
    set.labels.push_back(taxonomy.label(view.rows()[i].record->scene));
  }
  return set;
}

/// Row order of one epoch; depends only on (row count, shuffle_seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t rows, std::uint64_t shuffle_seed, std::size_t epoch) {
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(shuffle_seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Mini-batch SGD (optionally with momentum) on mean cross-entropy. Every epoch
/// reshuffles all rows; the final partial batch is kept. Updates model in place.
template <typename Scalar>
TrainLog train(FusionModel<Scalar>& model, const TrainingSet<Scalar>& data, const TrainConfig& cfg,
               const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("training set is empty");
  if (data.inputs.rows() != static_cast<Eigen::Index>(data.size())) throw ContractError("inputs/labels size mismatch");
  for (std::size_t y : data.labels) {
    if (y >= model.config().num_classes) throw ContractError("label " + std::to_string(y) + " out of range");
  }

  std::vector<Matrix<Scalar>> velocity;
  if (cfg.momentum > 0.0) {
    for_each_parameter(model.params(), model.config(),
                       [&](const std::string&, const Matrix<Scalar>& m) { velocity.push_back(Matrix<Scalar>::Zero(m.rows(), m.cols())); });
  }

  TrainLog log;
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = learning_rate(epoch, cfg);
    const auto order = epoch_order(data.size(), cfg.shuffle_seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0, batch_index = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      Matrix<Scalar> x(static_cast<Eigen::Index>(count), data.inputs.cols());
      std::vector<std::size_t> y(count);
      for (std::size_t i = 0; i < count; ++i) {
        x.row(static_cast<Eigen::Index>(i)) = data.inputs.row(static_cast<Eigen::Index>(order[start + i]));
        y[i] = data.labels[order[start + i]];
      }
      const auto trace = model.forward(x, true, mix_seed(model.config().seed ^ cfg.shuffle_seed, step++));
      Scalar batch_loss = 0;
      for (Eigen::Index b = 0; b < trace.logits.rows(); ++b) {
        const auto row = trace.logits.row(b);
        const Scalar peak = row.maxCoeff();
        batch_loss += peak + std::log((row.array() - peak).exp().sum()) - row(static_cast<Eigen::Index>(y[static_cast<std::size_t>(b)]));
        Eigen::Index predicted = 0;
        trace.probabilities.row(b).maxCoeff(&predicted);
        if (static_cast<std::size_t>(predicted) == y[static_cast<std::size_t>(b)]) ++correct;
      }
      if (!std::isfinite(static_cast<double>(batch_loss))) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      loss_sum += static_cast<double>(batch_loss);
      const auto grads = model.backward(trace, y);

      std::vector<const Matrix<Scalar>*> flat;
      for_each_parameter(grads, model.config(), [&](const std::string&, const Matrix<Scalar>& g) { flat.push_back(&g); });
      std::size_t k = 0;
      const Scalar rate = static_cast<Scalar>(lr);
      for_each_parameter(model.params(), model.config(), [&](const std::string&, Matrix<Scalar>& p) {
        if (velocity.empty()) {
          p.noalias() -= rate * *flat[k];
        } else {
          velocity[k] = static_cast<Scalar>(cfg.momentum) * velocity[k] + *flat[k];
          p.noalias() -= rate * velocity[k];
        }
        ++k;
      });
    }
    EpochLog entry{epoch, lr, loss_sum / static_cast<double>(data.size()),
                   static_cast<double>(correct) / static_cast<double>(data.size())};
    log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

// ----------------------------------------------------------------------------
// Checkpoints: one JSON header line, then the canonical weight text.
// ----------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  FusionModel<float> model;
  TrainConfig train;
  std::size_t epoch;
};

inline std::string serialize_checkpoint(const FusionModel<float>& model, const TrainConfig& train, std::size_t epoch) {
  nlohmann::ordered_json header;
  header["format"] = "avdd-checkpoint";
  header["version"] = kCheckpointVersion;
  header["epoch"] = epoch;
  header["model"] = to_json(model.config());
  header["train"] = to_json(train);
  return header.dump() + "\n" + export_weights(model);
}

inline Checkpoint parse_checkpoint(std::string_view text) {
  const std::size_t newline = text.find('\n');
  if (newline == std::string_view::npos) throw FormatError("checkpoint: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "avdd-checkpoint") {
    throw FormatError("checkpoint: not an avdd checkpoint");
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + header.value("version", nlohmann::json()).dump());
  }
  const ModelConfig model_cfg = model_config_from_json(header.at("model"));
  try {
    model_cfg.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  auto model = import_weights<float>(model_cfg, text.substr(newline + 1));
  return {std::move(model), train_config_from_json(header.at("train")), header.at("epoch").get<std::size_t>()};
}

inline void save_checkpoint(const std::filesystem::path& path, const FusionModel<float>& model,
                            const TrainConfig& train, std::size_t epoch) {
  write_file(path, serialize_checkpoint(model, train, epoch));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

/// Loads and checks the checkpoint against the config the caller expects.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  auto ckpt = load_checkpoint(path);
  const auto& got = ckpt.model.config();
  if (got.num_classes != expected.num_classes) {
    throw FormatError("checkpoint has " + std::to_string(got.num_classes) + " classes, expected " +
                      std::to_string(expected.num_classes));
  }
  if (got.sources != expected.sources) throw FormatError("checkpoint sources differ from the expected sources");
  return ckpt;
}

}  // namespace avdd
