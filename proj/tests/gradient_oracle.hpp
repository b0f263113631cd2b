#pragma once

// Central finite differences over every parameter of a double-precision model.
// Independent of FusionModel::backward: only the forward loss is evaluated.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "avdd/fusion_net.hpp"

namespace avdd::testing {

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t entries = 0;
  std::size_t kink_skips = 0;  // entries whose +-step straddles a ReLU kink
};

// Mean cross-entropy recomputed from the logits, plus the ReLU activation pattern.
struct Probe {
  double loss;
  std::vector<bool> active;
};

inline Probe probe_loss(const FusionModel<double>& model, const Matrix<double>& input,
                        const std::vector<std::size_t>& labels, bool training, std::uint64_t seed) {
  const auto trace = model.forward(input, training, seed);
  Probe p{0.0, {}};
  for (Eigen::Index b = 0; b < trace.logits.rows(); ++b) {
    double norm = 0.0;
    const double peak = trace.logits.row(b).maxCoeff();
    for (Eigen::Index c = 0; c < trace.logits.cols(); ++c) norm += std::exp(trace.logits(b, c) - peak);
    p.loss += peak + std::log(norm) - trace.logits(b, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]));
  }
  p.loss /= static_cast<double>(trace.logits.rows());
  for (Eigen::Index i = 0; i < trace.hidden_pre.size(); ++i) p.active.push_back(trace.hidden_pre.data()[i] > 0.0);
  return p;
}

// Relative error of one parameter tensor: max_i |a_i - n_i| / max_i max(|a_i|, |n_i|).
// Normalising by the tensor's gradient scale keeps near-zero entries from turning
// finite-difference truncation into spurious failures; the floor covers tensors whose
// gradient is identically zero (e.g. key biases, which softmax cancels).
inline double tensor_relative_error(double max_abs_diff, double max_abs_grad, double floor = 1e-6) {
  return max_abs_diff / std::max(max_abs_grad, floor);
}

inline GradientCheck check_gradients(const FusionModel<double>& model, const Matrix<double>& input,
                                     const std::vector<std::size_t>& labels, bool training,
                                     std::uint64_t dropout_seed, double step = 1e-3) {
  const auto analytic = model.loss_and_gradients(input, labels, training, dropout_seed).gradients;
  std::vector<const Matrix<double>*> grads;
  for_each_parameter(analytic, model.config(), [&](const std::string&, const Matrix<double>& m) { grads.push_back(&m); });

  FusionModel<double> probe = model;
  const auto base_pattern = probe_loss(model, input, labels, training, dropout_seed).active;
  GradientCheck result;
  std::size_t index = 0;
  for_each_parameter(probe.params(), probe.config(), [&](const std::string& name, Matrix<double>& m) {
    const Matrix<double>& g = *grads[index++];
    double max_diff = 0.0;
    double max_grad = 0.0;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + step;
      const auto up = probe_loss(probe, input, labels, training, dropout_seed);
      m.data()[i] = saved - step;
      const auto down = probe_loss(probe, input, labels, training, dropout_seed);
      m.data()[i] = saved;
      if (up.active != base_pattern || down.active != base_pattern) {
        ++result.kink_skips;
        continue;
      }
      const double numeric = (up.loss - down.loss) / (2 * step);
      ++result.entries;
      max_diff = std::max(max_diff, std::abs(g.data()[i] - numeric));
      max_grad = std::max({max_grad, std::abs(g.data()[i]), std::abs(numeric)});
    }
    const double err = tensor_relative_error(max_diff, max_grad);
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = name;
    }
  });
  return result;
}

/// Small random config for gradient checks: d_model <= 32, 2-4 sources of both modalities.
inline ModelConfig random_small_config(std::mt19937_64& rng, AttentionPlacement placement, bool double_fc) {
  ModelConfig cfg;
  std::uniform_int_distribution<int> n_visual(1, 2);
  std::uniform_int_distribution<int> n_audio(1, 2);
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  const int v = n_visual(rng);
  const int a = n_audio(rng);
  for (int i = 0; i < v; ++i) cfg.sources.push_back({"v" + std::to_string(i), Modality::visual, dim(rng)});
  for (int i = 0; i < a; ++i) cfg.sources.push_back({"a" + std::to_string(i), Modality::audio, dim(rng)});
  static constexpr std::size_t kHeads[] = {1, 2};
  static constexpr std::size_t kChunks[] = {1, 2};
  cfg.num_heads = kHeads[rng() % 2];
  cfg.es_chunk_tokens = kChunks[rng() % 2];
  cfg.d_model = cfg.num_heads * cfg.es_chunk_tokens * (1 + rng() % 4);  // <= 16
  if (rng() % 2 == 0) cfg.d_model *= 2;                                   // <= 32
  cfg.fc_hidden = 3 + rng() % 6;
  cfg.num_classes = 2 + rng() % 3;
  cfg.dropout_rate = 0.3;
  cfg.attention = placement;
  cfg.double_fc = double_fc;
  cfg.seed = rng();
  return cfg;
}

inline Matrix<double> random_batch(std::mt19937_64& rng, std::size_t rows, std::size_t width) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix<double> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Perturbs every weight and bias away from the zero-bias initial state so that
// the bias gradients and attention paths are exercised in general position.
inline void jitter_parameters(FusionModel<double>& model, std::mt19937_64& rng, double scale = 0.1) {
  std::normal_distribution<double> normal(0.0, scale);
  for_each_parameter(model.params(), model.config(), [&](const std::string&, Matrix<double>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += normal(rng);
  });
}

}  // namespace avdd::testing
