#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mateicl/attention.hpp"
#include "mateicl/model.hpp"
#include "mateicl/windowing.hpp"

namespace mateicl {

/// Encodes every window on its own (causal mask over the window, remapped
/// positions, window segment tag). Results do not depend on `threads`.
std::vector<KVCache> encode_windows(const Model& model, const PackedContext& packed,
                                    unsigned threads = 1,
                                    std::vector<AttentionTrace>* traces = nullptr);

/// Concatenates caches in the given order. Throws ShapeError on geometry mismatch.
KVCache concat_caches(std::span<const KVCache> caches);

/// The window caches joined into one, plus what the task pass needs to know.
struct EncodedContext {
  KVCache cache;
  std::size_t next_position = 0;  // first task position (c_star)
  std::size_t windows = 1;
  BiasMode bias = BiasMode::mateicl();
  std::vector<AttentionTrace> window_traces;  // filled when requested
};

EncodedContext encode_context(const Model& model, const PackedContext& packed, BiasMode bias,
                              unsigned threads = 1, bool collect_traces = false);

struct QueryResult {
  Tensor2D logits;
  KVCache cache;  // context cache with the task tokens appended (task-tagged)
  std::optional<AttentionTrace> trace;
};

/// Task pass over the cached context. Task tokens continue numbering from
/// context.next_position plus whatever task tokens the cache already holds.
QueryResult run_query(const Model& model, const EncodedContext& context,
                      std::span<const TokenId> task_tokens, bool collect_traces = false);

/// Reference route: one forward pass over the flattened packed context with
/// the composite block mask and the remapped positions.
ForwardResult forward_composite(const Model& model, const PackedContext& packed, BiasMode bias,
                                bool collect_traces = false);

/// log-softmax of one logits row.
std::vector<double> log_probs(std::span<const float> logits);

struct ScoredLabel {
  std::size_t index = 0;  // position in the input label list
  std::vector<TokenId> tokens;
  double total = 0.0;       // summed log-probability
  double normalized = 0.0;  // total / token count
};

/// Teacher-forced log-likelihood of each label after the query, ranked by
/// total log-probability; ties keep input order. Throws DomainError for an
/// empty label set, an empty label or an empty query.
std::vector<ScoredLabel> score_labels(const Model& model, const EncodedContext& context,
                                      std::span<const TokenId> query,
                                      std::span<const std::vector<TokenId>> labels);

/// Summed log-probability of `choice` after the query, divided by its length
/// when `normalize` is set.
double score_choice(const Model& model, const EncodedContext& context,
                    std::span<const TokenId> query, std::span<const TokenId> choice,
                    bool normalize = false);

struct BeamParams {
  std::size_t beam_width = 4;
  double length_penalty = 0.6;  // alpha
  std::size_t max_new_tokens = 16;
  std::vector<TokenId> stop_tokens;
};

/// ((5 + length) / 6) ^ alpha.
double length_penalty(std::size_t length, double alpha);

struct Generation {
  std::vector<TokenId> tokens;  // excludes the stop token
  bool stopped = false;         // ended on a stop token
  double log_prob = 0.0;        // includes the stop token when stopped
  double score = 0.0;           // log_prob / length_penalty(generated length)
};

/// Beam search over continuations of `prompt`, maximising
/// log_prob / length_penalty(len), where len counts generated tokens
/// including a stop token. Each step keeps the best beam_width expansions;
/// expansions ending in a stop token (or reaching the budget) are finished.
/// beam_width = 1 is greedy decoding.
Generation generate(const Model& model, const EncodedContext& context,
                    std::span<const TokenId> prompt, const BeamParams& params);

/// Post-bias attention of one (layer, head) across the whole packed sequence:
/// window rows from the window encodings, task rows from the task pass.
struct Heatmap {
  std::vector<std::vector<double>> rows;
  std::vector<Segment> query_segments;
  std::vector<Segment> key_segments;
};

Heatmap attention_heatmap(const EncodedContext& context, const AttentionTrace& task_trace,
                          std::size_t layer, std::size_t head);

}  // namespace mateicl
