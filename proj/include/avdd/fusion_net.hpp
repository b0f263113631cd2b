#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "avdd/common.hpp"
#include "avdd/model_config.hpp"

namespace avdd {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Groups = std::vector<std::vector<Eigen::Index>>;

/// Affine map y = x W + b applied to row vectors; bias is stored as a 1 x out matrix.
template <typename Scalar>
struct Dense {
  Matrix<Scalar> weight;
  Matrix<Scalar> bias;

  static Dense zeros(Eigen::Index in, Eigen::Index out) {
    return {Matrix<Scalar>::Zero(in, out), Matrix<Scalar>::Zero(1, out)};
  }

  Matrix<Scalar> apply(const Matrix<Scalar>& x) const {
    Matrix<Scalar> y = x * weight;
    y.rowwise() += bias.row(0);
    return y;
  }
};

template <typename Scalar>
struct AttentionWeights {
  Dense<Scalar> query, key, value, output;

  static AttentionWeights zeros(Eigen::Index width) {
    auto d = Dense<Scalar>::zeros(width, width);
    return {d, d, d, d};
  }
};

template <typename Scalar>
struct Parameters {
  std::vector<Dense<Scalar>> projections;
  std::optional<AttentionWeights<Scalar>> early;
  std::optional<AttentionWeights<Scalar>> modality;
  std::optional<AttentionWeights<Scalar>> late;
  std::optional<Dense<Scalar>> hidden;
  Dense<Scalar> classifier;

  /// All-zero parameters with the shapes the config dictates.
  static Parameters zeros(const ModelConfig& cfg) {
    Parameters p;
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    for (const auto& s : cfg.sources) p.projections.push_back(Dense<Scalar>::zeros(static_cast<Eigen::Index>(s.dim), d));
    if (cfg.attention.early) p.early = AttentionWeights<Scalar>::zeros(d / static_cast<Eigen::Index>(cfg.es_chunk_tokens));
    if (cfg.attention.modality) p.modality = AttentionWeights<Scalar>::zeros(d);
    if (cfg.attention.late) p.late = AttentionWeights<Scalar>::zeros(d);
    const auto concat = d * static_cast<Eigen::Index>(cfg.sources.size());
    const auto classes = static_cast<Eigen::Index>(cfg.num_classes);
    if (cfg.double_fc) {
      const auto hidden = static_cast<Eigen::Index>(cfg.fc_hidden);
      p.hidden = Dense<Scalar>::zeros(concat, hidden);
      p.classifier = Dense<Scalar>::zeros(hidden, classes);
    } else {
      p.classifier = Dense<Scalar>::zeros(concat, classes);
    }
    return p;
  }
};

/// Visits every parameter matrix in canonical order: projections by source order,
/// attention stages early/modality/late (query, key, value, output), then the FC layers.
template <typename P, typename Fn>
void for_each_parameter(P& params, const ModelConfig& cfg, Fn&& fn) {
  for (std::size_t s = 0; s < params.projections.size(); ++s) {
    const std::string prefix = "projection." + cfg.sources.at(s).name;
    fn(prefix + ".weight", params.projections[s].weight);
    fn(prefix + ".bias", params.projections[s].bias);
  }
  auto attention = [&](auto& block, const char* stage) {
    if (!block) return;
    const std::string prefix = std::string("attention.") + stage;
    fn(prefix + ".query.weight", block->query.weight);
    fn(prefix + ".query.bias", block->query.bias);
    fn(prefix + ".key.weight", block->key.weight);
    fn(prefix + ".key.bias", block->key.bias);
    fn(prefix + ".value.weight", block->value.weight);
    fn(prefix + ".value.bias", block->value.bias);
    fn(prefix + ".output.weight", block->output.weight);
    fn(prefix + ".output.bias", block->output.bias);
  };
  attention(params.early, "es");
  attention(params.modality, "ms");
  attention(params.late, "ls");
  if (params.hidden) {
    fn(std::string("fc1.weight"), params.hidden->weight);
    fn(std::string("fc1.bias"), params.hidden->bias);
    fn(std::string("fc2.weight"), params.classifier.weight);
    fn(std::string("fc2.bias"), params.classifier.bias);
  } else {
    fn(std::string("fc.weight"), params.classifier.weight);
    fn(std::string("fc.bias"), params.classifier.bias);
  }
}

/// Activations cached by one attention stage.
template <typename Scalar>
struct AttentionCache {
  Matrix<Scalar> input;
  Matrix<Scalar> query, key, value;
  Matrix<Scalar> mixed;                  // head outputs, concatenated, before the output projection
  std::vector<Matrix<Scalar>> weights;   // softmax matrices, index group * heads + head
};

/// Everything a batch forward pass produces; enough to run the exact backward pass.
/// Token matrices hold one row per (sample, source); features is the same memory
/// viewed as one row of S * d_model per sample.
template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> input;
  Matrix<Scalar> tokens;
  std::optional<AttentionCache<Scalar>> early, modality, late;
  Matrix<Scalar> features;
  Matrix<Scalar> hidden_pre;
  Matrix<Scalar> hidden;      // dropout output, fed to the classifier
  Matrix<Scalar> mask;        // inverted-dropout multipliers; empty when dropout is inactive
  Matrix<Scalar> logits;
  Matrix<Scalar> probabilities;

  std::size_t batch_size() const { return static_cast<std::size_t>(input.rows()); }
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> reshape(const Matrix<Scalar>& m, Eigen::Index rows, Eigen::Index cols) {
  return Eigen::Map<const Matrix<Scalar>>(m.data(), rows, cols);
}

template <typename Scalar>
void softmax_rows(Matrix<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

template <typename Scalar>
Matrix<Scalar> column_sum(const Matrix<Scalar>& m) {
  return m.colwise().sum();
}

template <typename Scalar>
Matrix<Scalar> gather(const Matrix<Scalar>& m, const std::vector<Eigen::Index>& rows, Eigen::Index col,
                      Eigen::Index width) {
  Matrix<Scalar> out(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.block(rows[i], col, 1, width);
  return out;
}

template <typename Scalar>
void scatter_add(Matrix<Scalar>& m, const std::vector<Eigen::Index>& rows, Eigen::Index col,
                 const Matrix<Scalar>& values) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.block(rows[i], col, 1, values.cols()) += values.row(static_cast<Eigen::Index>(i));
  }
}

// Multi-head scaled dot-product self-attention within each group, plus a residual.
template <typename Scalar>
Matrix<Scalar> attention_forward(const AttentionWeights<Scalar>& w, const Matrix<Scalar>& x, const Groups& groups,
                                 std::size_t heads, AttentionCache<Scalar>& cache) {
  const Eigen::Index width = x.cols();
  const Eigen::Index head_dim = width / static_cast<Eigen::Index>(heads);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  cache.input = x;
  cache.query = w.query.apply(x);
  cache.key = w.key.apply(x);
  cache.value = w.value.apply(x);
  cache.mixed = Matrix<Scalar>::Zero(x.rows(), width);
  cache.weights.clear();
  cache.weights.reserve(groups.size() * heads);
  for (const auto& group : groups) {
    for (std::size_t h = 0; h < heads; ++h) {
      const Eigen::Index col = static_cast<Eigen::Index>(h) * head_dim;
      Matrix<Scalar> q = gather(cache.query, group, col, head_dim);
      Matrix<Scalar> k = gather(cache.key, group, col, head_dim);
      Matrix<Scalar> v = gather(cache.value, group, col, head_dim);
      Matrix<Scalar> a = (q * k.transpose()) * scale;
      softmax_rows(a);
      scatter_add<Scalar>(cache.mixed, group, col, a * v);
      cache.weights.push_back(std::move(a));
    }
  }
  Matrix<Scalar> y = w.output.apply(cache.mixed);
  y += x;
  return y;
}

template <typename Scalar>
void accumulate_dense(Dense<Scalar>& grad, const Matrix<Scalar>& input, const Matrix<Scalar>& d_out) {
  grad.weight.noalias() += input.transpose() * d_out;
  grad.bias += column_sum(d_out);
}

// Returns d(loss)/d(input) and accumulates parameter gradients into grad.
template <typename Scalar>
Matrix<Scalar> attention_backward(const AttentionWeights<Scalar>& w, const AttentionCache<Scalar>& cache,
                                  const Groups& groups, std::size_t heads, const Matrix<Scalar>& d_y,
                                  AttentionWeights<Scalar>& grad) {
  const Eigen::Index width = cache.input.cols();
  const Eigen::Index head_dim = width / static_cast<Eigen::Index>(heads);
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  accumulate_dense(grad.output, cache.mixed, d_y);
  const Matrix<Scalar> d_mixed = d_y * w.output.weight.transpose();

  Matrix<Scalar> d_query = Matrix<Scalar>::Zero(cache.input.rows(), width);
  Matrix<Scalar> d_key = Matrix<Scalar>::Zero(cache.input.rows(), width);
  Matrix<Scalar> d_value = Matrix<Scalar>::Zero(cache.input.rows(), width);
  std::size_t slot = 0;
  for (const auto& group : groups) {
    for (std::size_t h = 0; h < heads; ++h, ++slot) {
      const Eigen::Index col = static_cast<Eigen::Index>(h) * head_dim;
      const Matrix<Scalar>& a = cache.weights[slot];
      Matrix<Scalar> q = gather(cache.query, group, col, head_dim);
      Matrix<Scalar> k = gather(cache.key, group, col, head_dim);
      Matrix<Scalar> v = gather(cache.value, group, col, head_dim);
      Matrix<Scalar> d_out = gather(d_mixed, group, col, head_dim);

      Matrix<Scalar> d_a = d_out * v.transpose();
      scatter_add<Scalar>(d_value, group, col, a.transpose() * d_out);
      // softmax Jacobian, row by row
      Matrix<Scalar> d_scores = a.array() * (d_a.colwise() - (a.array() * d_a.array()).rowwise().sum().matrix()).array();
      d_scores *= scale;
      scatter_add<Scalar>(d_query, group, col, d_scores * k);
      scatter_add<Scalar>(d_key, group, col, d_scores.transpose() * q);
    }
  }
  accumulate_dense(grad.query, cache.input, d_query);
  accumulate_dense(grad.key, cache.input, d_key);
  accumulate_dense(grad.value, cache.input, d_value);

  Matrix<Scalar> d_x = d_y;
  d_x.noalias() += d_query * w.query.weight.transpose();
  d_x.noalias() += d_key * w.key.weight.transpose();
  d_x.noalias() += d_value * w.value.weight.transpose();
  return d_x;
}

}  // namespace detail

template <typename Scalar>
struct LossAndGradients {
  Scalar loss;
  Parameters<Scalar> gradients;
};

/// Embedding-fusion scene classifier: per-source projection to one token each,
/// optional self-attention stages (early, per modality, late), concatenation,
/// then fc1 + ReLU + dropout + fc2 (or a single fc) and softmax.
template <typename Scalar>
class FusionModel {
 public:
  FusionModel(ModelConfig config, Parameters<Scalar> params) : config_(std::move(config)), params_(std::move(params)) {
    config_.validate();
    if (auto problems = audit_shapes(); !problems.empty()) throw FormatError(problems.front());
  }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) from config.seed; biases zero.
  static FusionModel init(const ModelConfig& config) {
    config.validate();
    auto params = Parameters<Scalar>::zeros(config);
    std::mt19937_64 rng(config.seed);
    for_each_parameter(params, config, [&](const std::string& name, Matrix<Scalar>& m) {
      if (name.ends_with(".bias")) return;
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
    });
    return FusionModel(config, std::move(params));
  }

  const ModelConfig& config() const noexcept { return config_; }
  const Parameters<Scalar>& params() const noexcept { return params_; }
  Parameters<Scalar>& params() noexcept { return params_; }

  /// Empty when every parameter has the shape the config dictates and is finite.
  std::vector<std::string> audit_shapes() const {
    std::vector<std::string> expected_names;
    std::vector<std::pair<Eigen::Index, Eigen::Index>> expected_shapes;
    auto reference = Parameters<Scalar>::zeros(config_);
    for_each_parameter(reference, config_, [&](const std::string& name, const Matrix<Scalar>& m) {
      expected_names.push_back(name);
      expected_shapes.emplace_back(m.rows(), m.cols());
    });
    std::vector<std::string> problems;
    std::size_t i = 0;
    for_each_parameter(params_, config_, [&](const std::string& name, const Matrix<Scalar>& m) {
      if (i >= expected_names.size() || expected_names[i] != name) {
        problems.push_back("unexpected parameter " + name);
      } else if (m.rows() != expected_shapes[i].first || m.cols() != expected_shapes[i].second) {
        problems.push_back("parameter " + name + " has shape " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + ", expected " + std::to_string(expected_shapes[i].first) +
                           "x" + std::to_string(expected_shapes[i].second));
      } else if (!m.allFinite()) {
        problems.push_back("parameter " + name + " is not finite");
      }
      ++i;
    });
    if (i != expected_names.size()) problems.push_back("parameter count mismatch");
    return problems;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_parameter(params_, config_, [&](const std::string&, const Matrix<Scalar>& m) { n += m.size(); });
    return n;
  }

  template <typename To>
  FusionModel<To> cast() const {
    auto out = Parameters<To>::zeros(config_);
    std::vector<const Matrix<Scalar>*> src;
    for_each_parameter(params_, config_, [&](const std::string&, const Matrix<Scalar>& m) { src.push_back(&m); });
    std::size_t i = 0;
    for_each_parameter(out, config_, [&](const std::string&, Matrix<To>& m) { m = src[i++]->template cast<To>(); });
    return FusionModel<To>(config_, std::move(out));
  }

  /// Batch forward pass; one input row per sample. Dropout is active only in training
  /// mode and its mask depends only on (dropout_seed, batch shape).
  ForwardTrace<Scalar> forward(const Matrix<Scalar>& input, bool training, std::uint64_t dropout_seed = 0) const {
    if (input.cols() != static_cast<Eigen::Index>(config_.input_width())) {
      throw ContractError("input width " + std::to_string(input.cols()) + " != model input width " +
                          std::to_string(config_.input_width()));
    }
    if (!input.allFinite()) throw ContractError("input contains non-finite values");

    const Eigen::Index batch = input.rows();
    const Eigen::Index sources = static_cast<Eigen::Index>(config_.sources.size());
    const Eigen::Index d = static_cast<Eigen::Index>(config_.d_model);
    ForwardTrace<Scalar> trace;
    trace.input = input;

    Matrix<Scalar> features(batch, sources * d);
    Eigen::Index offset = 0;
    for (Eigen::Index s = 0; s < sources; ++s) {
      const auto dim = static_cast<Eigen::Index>(config_.sources[static_cast<std::size_t>(s)].dim);
      const auto& proj = params_.projections[static_cast<std::size_t>(s)];
      Matrix<Scalar> z = input.middleCols(offset, dim) * proj.weight;
      z.rowwise() += proj.bias.row(0);
      features.middleCols(s * d, d) = z;
      offset += dim;
    }
    Matrix<Scalar> tokens = detail::reshape(features, batch * sources, d);
    trace.tokens = tokens;

    if (params_.early) {
      const auto chunks = static_cast<Eigen::Index>(config_.es_chunk_tokens);
      Matrix<Scalar> sub = detail::reshape(tokens, batch * sources * chunks, d / chunks);
      trace.early.emplace();
      sub = detail::attention_forward(*params_.early, sub, early_groups(batch), config_.num_heads, *trace.early);
      tokens = detail::reshape(sub, batch * sources, d);
    }
    if (params_.modality) {
      trace.modality.emplace();
      tokens = detail::attention_forward(*params_.modality, tokens, modality_groups(batch), config_.num_heads,
                                         *trace.modality);
    }
    if (params_.late) {
      trace.late.emplace();
      tokens = detail::attention_forward(*params_.late, tokens, late_groups(batch), config_.num_heads, *trace.late);
    }
    trace.features = detail::reshape(tokens, batch, sources * d);

    if (params_.hidden) {
      trace.hidden_pre = params_.hidden->apply(trace.features);
      trace.hidden = trace.hidden_pre.cwiseMax(Scalar(0));
      if (training && config_.dropout_rate > 0.0) {
        trace.mask = dropout_mask(batch, trace.hidden.cols(), dropout_seed);
        trace.hidden.array() *= trace.mask.array();
      }
      trace.logits = params_.classifier.apply(trace.hidden);
    } else {
      trace.logits = params_.classifier.apply(trace.features);
    }
    trace.probabilities = trace.logits;
    detail::softmax_rows(trace.probabilities);
    return trace;
  }

  ForwardTrace<Scalar> forward(std::span<const Scalar> row, bool training, std::uint64_t dropout_seed = 0) const {
    Matrix<Scalar> input = Eigen::Map<const Matrix<Scalar>>(row.data(), 1, static_cast<Eigen::Index>(row.size()));
    return forward(input, training, dropout_seed);
  }

  /// Inference-mode class probabilities, one row per input row.
  Matrix<Scalar> predict_proba(const Matrix<Scalar>& input) const { return forward(input, false).probabilities; }

  /// Mean categorical cross-entropy of a batch.
  Scalar loss(const Matrix<Scalar>& input, std::span<const std::size_t> labels, bool training,
              std::uint64_t dropout_seed = 0) const {
    check_labels(input, labels);
    return cross_entropy(forward(input, training, dropout_seed), labels);
  }

  /// Mean cross-entropy and its exact gradient with respect to every parameter.
  LossAndGradients<Scalar> loss_and_gradients(const Matrix<Scalar>& input, std::span<const std::size_t> labels,
                                              bool training, std::uint64_t dropout_seed = 0) const {
    check_labels(input, labels);
    const auto trace = forward(input, training, dropout_seed);
    return {cross_entropy(trace, labels), backward(trace, labels)};
  }

  Parameters<Scalar> backward(const ForwardTrace<Scalar>& trace, std::span<const std::size_t> labels) const {
    const Eigen::Index batch = trace.input.rows();
    const Eigen::Index sources = static_cast<Eigen::Index>(config_.sources.size());
    const Eigen::Index d = static_cast<Eigen::Index>(config_.d_model);
    auto grads = Parameters<Scalar>::zeros(config_);

    Matrix<Scalar> d_logits = trace.probabilities;
    for (Eigen::Index b = 0; b < batch; ++b) d_logits(b, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)])) -= Scalar(1);
    d_logits /= static_cast<Scalar>(batch);

    Matrix<Scalar> d_features;
    if (params_.hidden) {
      detail::accumulate_dense(grads.classifier, trace.hidden, d_logits);
      Matrix<Scalar> d_hidden = d_logits * params_.classifier.weight.transpose();
      if (trace.mask.size() > 0) d_hidden.array() *= trace.mask.array();
      d_hidden.array() *= (trace.hidden_pre.array() > Scalar(0)).template cast<Scalar>();
      detail::accumulate_dense(*grads.hidden, trace.features, d_hidden);
      d_features = d_hidden * params_.hidden->weight.transpose();
    } else {
      detail::accumulate_dense(grads.classifier, trace.features, d_logits);
      d_features = d_logits * params_.classifier.weight.transpose();
    }

    Matrix<Scalar> d_tokens = detail::reshape(d_features, batch * sources, d);
    if (params_.late) {
      d_tokens = detail::attention_backward(*params_.late, *trace.late, late_groups(batch), config_.num_heads,
                                            d_tokens, *grads.late);
    }
    if (params_.modality) {
      d_tokens = detail::attention_backward(*params_.modality, *trace.modality, modality_groups(batch),
                                            config_.num_heads, d_tokens, *grads.modality);
    }
    if (params_.early) {
      const auto chunks = static_cast<Eigen::Index>(config_.es_chunk_tokens);
      Matrix<Scalar> d_sub = detail::reshape(d_tokens, batch * sources * chunks, d / chunks);
      d_sub = detail::attention_backward(*params_.early, *trace.early, early_groups(batch), config_.num_heads, d_sub,
                                         *grads.early);
      d_tokens = detail::reshape(d_sub, batch * sources, d);
    }

    const Matrix<Scalar> d_flat = detail::reshape(d_tokens, batch, sources * d);
    Eigen::Index offset = 0;
    for (Eigen::Index s = 0; s < sources; ++s) {
      const auto dim = static_cast<Eigen::Index>(config_.sources[static_cast<std::size_t>(s)].dim);
      auto& g = grads.projections[static_cast<std::size_t>(s)];
      const Matrix<Scalar> d_z = d_flat.middleCols(s * d, d);
      g.weight.noalias() += trace.input.middleCols(offset, dim).transpose() * d_z;
      g.bias += d_z.colwise().sum();
      offset += dim;
    }
    return grads;
  }

  /// Token groups of each attention stage, for a batch of the given size.
  Groups early_groups(Eigen::Index batch) const {
    const auto chunks = static_cast<Eigen::Index>(config_.es_chunk_tokens);
    const Eigen::Index tokens = batch * static_cast<Eigen::Index>(config_.sources.size());
    Groups groups(static_cast<std::size_t>(tokens));
    for (Eigen::Index t = 0; t < tokens; ++t) {
      for (Eigen::Index c = 0; c < chunks; ++c) groups[static_cast<std::size_t>(t)].push_back(t * chunks + c);
    }
    return groups;
  }

  Groups modality_groups(Eigen::Index batch) const {
    const auto sources = static_cast<Eigen::Index>(config_.sources.size());
    Groups groups;
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Modality m : {Modality::visual, Modality::audio}) {
        std::vector<Eigen::Index> group;
        for (Eigen::Index s = 0; s < sources; ++s) {
          if (config_.sources[static_cast<std::size_t>(s)].modality == m) group.push_back(b * sources + s);
        }
        if (!group.empty()) groups.push_back(std::move(group));
      }
    }
    return groups;
  }

  Groups late_groups(Eigen::Index batch) const {
    const auto sources = static_cast<Eigen::Index>(config_.sources.size());
    Groups groups(static_cast<std::size_t>(batch));
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index s = 0; s < sources; ++s) groups[static_cast<std::size_t>(b)].push_back(b * sources + s);
    }
    return groups;
  }

 private:
  void check_labels(const Matrix<Scalar>& input, std::span<const std::size_t> labels) const {
    if (input.rows() == 0) throw ContractError("empty batch");
    if (labels.size() != static_cast<std::size_t>(input.rows())) throw ContractError("label count != batch size");
    for (std::size_t y : labels) {
      if (y >= config_.num_classes) throw ContractError("class index " + std::to_string(y) + " out of range");
    }
  }

  static Scalar cross_entropy(const ForwardTrace<Scalar>& trace, std::span<const std::size_t> labels) {
    Scalar total = 0;
    for (Eigen::Index b = 0; b < trace.logits.rows(); ++b) {
      const auto row = trace.logits.row(b);
      const Scalar peak = row.maxCoeff();
      const Scalar log_norm = peak + std::log((row.array() - peak).exp().sum());
      total += log_norm - row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]));
    }
    return total / static_cast<Scalar>(trace.logits.rows());
  }

  Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(1.0 - config_.dropout_rate);
    const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - config_.dropout_rate));
    Matrix<Scalar> mask(rows, cols);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : Scalar(0);
    return mask;
  }

  ModelConfig config_;
  Parameters<Scalar> params_;
};

// ----------------------------------------------------------------------------
// Canonical weight text
// ----------------------------------------------------------------------------

inline constexpr std::string_view kWeightsMagic = "avdd-weights 1";

/// One block per parameter: "<name> <rows> <cols>" then one line per row of
/// decimal values with 9 significant digits (lossless for 32-bit floats).
template <typename Scalar>
std::string export_weights(const FusionModel<Scalar>& model) {
  std::string out(kWeightsMagic);
  out += '\n';
  char buffer[32];
  for_each_parameter(model.params(), model.config(), [&](const std::string& name, const Matrix<Scalar>& m) {
    out += name + ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        std::snprintf(buffer, sizeof(buffer), "%.9g", static_cast<double>(m(r, c)));
        if (c > 0) out += ' ';
        out += buffer;
      }
      out += '\n';
    }
  });
  return out;
}

template <typename Scalar>
FusionModel<Scalar> import_weights(const ModelConfig& config, std::string_view text) {
  config.validate();
  auto params = Parameters<Scalar>::zeros(config);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string_view {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    return text.substr(start, pos - start);
  };
  auto next_line = [&]() -> std::string_view {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const auto line = text.substr(pos, end - pos);
    pos = std::min(end + 1, text.size());
    return line;
  };
  if (next_line() != kWeightsMagic) throw FormatError("weights: missing '" + std::string(kWeightsMagic) + "' header");

  for_each_parameter(params, config, [&](const std::string& name, Matrix<Scalar>& m) {
    const auto found = next_token();
    if (found.empty()) throw FormatError("weights: truncated before parameter " + name);
    if (found != name) throw FormatError("weights: expected parameter " + name + ", found " + std::string(found));
    long long rows = -1;
    long long cols = -1;
    const auto r_tok = next_token();
    const auto c_tok = next_token();
    std::from_chars(r_tok.data(), r_tok.data() + r_tok.size(), rows);
    std::from_chars(c_tok.data(), c_tok.data() + c_tok.size(), cols);
    if (rows != m.rows() || cols != m.cols()) {
      throw FormatError("weights: parameter " + name + " has shape " + std::string(r_tok) + "x" + std::string(c_tok) +
                        ", config expects " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto tok = next_token();
      Scalar value{};
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
      if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw FormatError("weights: parameter " + name + " is truncated or malformed at value " + std::to_string(i));
      }
      m.data()[i] = value;
    }
  });
  if (!next_token().empty()) throw FormatError("weights: trailing data after last parameter");
  return FusionModel<Scalar>(config, std::move(params));
}

}  // namespace avdd
