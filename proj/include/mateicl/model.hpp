#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mateicl/attention.hpp"
#include "mateicl/numerics.hpp"

namespace mateicl {

using TokenId = std::uint32_t;

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  std::size_t n_layers = 0;
  std::size_t max_positions = 0;  // capacity N
  double ln_eps = 1e-5;
  bool tied_unembedding = true;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_width() const { return 4 * d_model; }
  /// Throws ValidationError on an inconsistent configuration.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
  std::vector<float> gain;
  std::vector<float> shift;
  bool operator==(const LayerNormParams&) const = default;
};

/// y = x · weight + bias with weight stored (in × out).
struct Projection {
  Tensor2D weight;
  std::vector<float> bias;
  bool operator==(const Projection&) const = default;
};

struct LayerWeights {
  LayerNormParams ln1;
  Projection query;
  Projection key;
  Projection value;
  Projection out;
  LayerNormParams ln2;
  Projection mlp_up;
  Projection mlp_down;
  bool operator==(const LayerWeights&) const = default;
};

struct WeightStore {
  Tensor2D token_embedding;     // vocab × d
  Tensor2D position_embedding;  // max_positions × d
  std::vector<LayerWeights> layers;
  LayerNormParams final_norm;
  Tensor2D unembedding;  // vocab × d; empty when tied to token_embedding
  bool operator==(const WeightStore&) const = default;
};

/// Flat named view of a weight store, in the canonical on-disk order.
struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
  bool operator==(const NamedTensor&) const = default;
};

std::vector<NamedTensor> to_named_tensors(const ModelConfig& config, const WeightStore& weights);
/// Rejects missing, unexpected and mis-shaped tensors with ValidationError.
WeightStore from_named_tensors(const ModelConfig& config, std::vector<NamedTensor> tensors);

/// An immutable (config, weights) pair; safe to share across threads.
class Model {
 public:
  Model(ModelConfig config, WeightStore weights);

  const ModelConfig& config() const noexcept { return config_; }
  const WeightStore& weights() const noexcept { return weights_; }

 private:
  ModelConfig config_;
  WeightStore weights_;
};

/// Weights drawn i.i.d. uniform on [-scale, scale], deterministic per seed.
WeightStore random_model(const ModelConfig& config, std::uint64_t seed, double scale);

/// Single-layer, single-head model that copies the label of the cached
/// demonstration whose pattern matches the query token. See matching_model.cpp
/// for the construction.
struct MatchingModel {
  ModelConfig config;
  WeightStore weights;
  std::vector<std::string> vocabulary;  // id -> token text
  std::size_t n_patterns = 0;
  std::size_t n_labels = 0;

  TokenId pattern(std::size_t p) const;
  TokenId label(std::size_t l) const;
  TokenId composite(std::size_t p, std::size_t l) const;
  std::string pattern_text(std::size_t p) const;
  std::string label_text(std::size_t l) const;
};

MatchingModel build_matching_model(std::size_t n_patterns, std::size_t n_labels,
                                   double temperature);

struct ForwardRequest {
  std::span<const TokenId> tokens;
  std::span<const std::size_t> positions;
  std::span<const Segment> segments;
  /// new tokens × (cached + new) keys. nullptr: each token sees every cached
  /// key and the new keys up to itself.
  const MaskMatrix* mask = nullptr;
  BiasMode bias = BiasMode::pcw();
  std::size_t windows = 1;
  bool collect_traces = false;
};

struct ForwardResult {
  Tensor2D logits;  // new tokens × vocab
  KVCache cache;    // input cache with the new tokens appended
  std::optional<AttentionTrace> trace;
};

/// Pre-norm transformer stack over `request.tokens`, continuing from `cache`.
/// AtBias (when the mode and window count enable it) is applied in every layer
/// and head, to keys at or after the first task-tagged key.
ForwardResult forward(const Model& model, const ForwardRequest& request, KVCache cache = {});

}  // namespace mateicl
