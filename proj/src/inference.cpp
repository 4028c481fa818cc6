#include "mateicl/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mateicl/error.hpp"
#include "mateicl/parallel.hpp"

namespace mateicl {

std::vector<KVCache> encode_windows(const Model& model, const PackedContext& packed,
                                    unsigned threads, std::vector<AttentionTrace>* traces) {
  if (packed.window_positions.size() != packed.windows.size()) {
    throw ContractError("encode_windows: positions have not been assigned");
  }
  const std::size_t count = packed.windows.size();
  std::vector<KVCache> caches(count);
  std::vector<AttentionTrace> collected(traces ? count : 0);
  parallel_for(count, threads, [&](std::size_t w) {
    const auto& tokens = packed.windows[w];
    const std::vector<Segment> segments(tokens.size(), Segment::window(static_cast<std::uint32_t>(w)));
    ForwardRequest request;
    request.tokens = tokens;
    request.positions = packed.window_positions[w];
    request.segments = segments;
    request.collect_traces = traces != nullptr;
    ForwardResult result = forward(model, request);
    caches[w] = std::move(result.cache);
    if (traces) collected[w] = std::move(*result.trace);
  });
  if (traces) *traces = std::move(collected);
  return caches;
}

KVCache concat_caches(std::span<const KVCache> caches) {
  if (caches.empty()) return {};
  KVCache out(caches.front().n_layers(), caches.front().width());
  for (const KVCache& c : caches) {
    if (c.n_layers() != out.n_layers() || c.width() != out.width()) {
      throw ShapeError("concat_caches: caches have different layer count or width");
    }
    out.append_tokens(c.positions(), c.segments());
    for (std::size_t l = 0; l < c.n_layers(); ++l) {
      out.append_layer(l, c.layer(l).keys, c.layer(l).values);
    }
  }
  out.validate();
  return out;
}

EncodedContext encode_context(const Model& model, const PackedContext& packed, BiasMode bias,
                              unsigned threads, bool collect_traces) {
  EncodedContext context;
  const auto caches =
      encode_windows(model, packed, threads, collect_traces ? &context.window_traces : nullptr);
  context.cache = concat_caches(caches);
  if (context.cache.n_layers() == 0) {
    context.cache = KVCache(model.config().n_layers, model.config().d_model);
  }
  context.next_position = packed.c_star;
  context.windows = packed.window_count();
  context.bias = bias;
  return context;
}

namespace {

ForwardResult task_forward(const Model& model, const EncodedContext& context, KVCache cache,
                           std::span<const TokenId> tokens, bool collect_traces) {
  const std::size_t offset = context.next_position + (cache.size() - cache.task_start());
  std::vector<std::size_t> positions(tokens.size());
  std::iota(positions.begin(), positions.end(), offset);
  const std::vector<Segment> segments(tokens.size(), Segment::task());
  ForwardRequest request;
  request.tokens = tokens;
  request.positions = positions;
  request.segments = segments;
  request.bias = context.bias;
  request.windows = context.windows;
  request.collect_traces = collect_traces;
  return forward(model, request, std::move(cache));
}

}  // namespace

QueryResult run_query(const Model& model, const EncodedContext& context,
                      std::span<const TokenId> task_tokens, bool collect_traces) {
  ForwardResult r = task_forward(model, context, context.cache, task_tokens, collect_traces);
  return {std::move(r.logits), std::move(r.cache), std::move(r.trace)};
}

ForwardResult forward_composite(const Model& model, const PackedContext& packed, BiasMode bias,
                                bool collect_traces) {
  const FlatSequence flat = flatten(packed);
  const AttentionMask mask = build_mask(packed);
  ForwardRequest request;
  request.tokens = flat.tokens;
  request.positions = flat.positions;
  request.segments = flat.segments;
  request.mask = &mask.allowed;
  request.bias = bias;
  request.windows = packed.window_count();
  request.collect_traces = collect_traces;
  return forward(model, request);
}

std::vector<double> log_probs(std::span<const float> logits) {
  std::vector<double> values(logits.begin(), logits.end());
  const double lse = log_sum_exp(values);
  for (double& v : values) v -= lse;
  return values;
}

namespace {

// Log-probability of `continuation` given that `first_logits` predicts its
// first token and `cache` already holds everything before it.
double continuation_log_prob(const Model& model, const EncodedContext& context,
                             const KVCache& cache, std::span<const float> first_logits,
                             std::span<const TokenId> continuation) {
  double total = log_probs(first_logits)[continuation.front()];
  if (continuation.size() > 1) {
    const ForwardResult rest =
        task_forward(model, context, cache, continuation.first(continuation.size() - 1), false);
    for (std::size_t i = 1; i < continuation.size(); ++i) {
      total += log_probs(rest.logits.row(i - 1))[continuation[i]];
    }
  }
  return total;
}

}  // namespace

std::vector<ScoredLabel> score_labels(const Model& model, const EncodedContext& context,
                                      std::span<const TokenId> query,
                                      std::span<const std::vector<TokenId>> labels) {
  if (labels.empty()) throw DomainError("score_labels needs at least one label");
  if (query.empty()) throw DomainError("score_labels needs a nonempty query");
  const QueryResult prefix = run_query(model, context, query);
  const auto last = prefix.logits.row(prefix.logits.rows() - 1);
  std::vector<ScoredLabel> scored;
  scored.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].empty()) throw DomainError("label " + std::to_string(i) + " has no tokens");
    ScoredLabel s;
    s.index = i;
    s.tokens = labels[i];
    s.total = continuation_log_prob(model, context, prefix.cache, last, labels[i]);
    s.normalized = s.total / static_cast<double>(labels[i].size());
    scored.push_back(std::move(s));
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredLabel& a, const ScoredLabel& b) { return a.total > b.total; });
  return scored;
}

double score_choice(const Model& model, const EncodedContext& context,
                    std::span<const TokenId> query, std::span<const TokenId> choice,
                    bool normalize) {
  if (choice.empty()) throw DomainError("score_choice needs a nonempty choice");
  if (query.empty()) throw DomainError("score_choice needs a nonempty query");
  const QueryResult prefix = run_query(model, context, query);
  const double total = continuation_log_prob(model, context, prefix.cache,
                                             prefix.logits.row(prefix.logits.rows() - 1), choice);
  return normalize ? total / static_cast<double>(choice.size()) : total;
}

double length_penalty(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

Generation generate(const Model& model, const EncodedContext& context,
                    std::span<const TokenId> prompt, const BeamParams& params) {
  if (params.beam_width == 0) throw DomainError("beam_width must be at least 1");
  if (!(params.length_penalty >= 0.0)) throw DomainError("length penalty must be non-negative");
  if (params.max_new_tokens == 0) throw DomainError("max_new_tokens must be at least 1");
  if (prompt.empty()) throw DomainError("generate needs a nonempty prompt");

  struct Beam {
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    KVCache cache;
    std::vector<double> next;  // log-probs of the following token
  };
  struct Candidate {
    double log_prob;
    std::size_t beam;
    TokenId token;
  };
  const auto is_stop = [&](TokenId t) {
    return std::find(params.stop_tokens.begin(), params.stop_tokens.end(), t) !=
           params.stop_tokens.end();
  };

  QueryResult first = run_query(model, context, prompt);
  std::vector<Beam> alive;
  alive.push_back({{}, 0.0, std::move(first.cache), log_probs(first.logits.row(first.logits.rows() - 1))});
  std::vector<Generation> finished;

  for (std::size_t step = 1; step <= params.max_new_tokens && !alive.empty(); ++step) {
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      for (std::size_t t = 0; t < alive[b].next.size(); ++t) {
        candidates.push_back({alive[b].log_prob + alive[b].next[t], b, static_cast<TokenId>(t)});
      }
    }
    const std::size_t keep = std::min(params.beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        if (a.beam != b.beam) return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Beam> next_alive;
    for (std::size_t c = 0; c < keep; ++c) {
      const Candidate& cand = candidates[c];
      const Beam& parent = alive[cand.beam];
      std::vector<TokenId> tokens = parent.tokens;
      tokens.push_back(cand.token);
      const bool stop = is_stop(cand.token);
      if (stop || step == params.max_new_tokens) {
        Generation g;
        g.stopped = stop;
        g.log_prob = cand.log_prob;
        g.score = cand.log_prob / length_penalty(tokens.size(), params.length_penalty);
        if (stop) tokens.pop_back();
        g.tokens = std::move(tokens);
        finished.push_back(std::move(g));
        continue;
      }
      const TokenId token = cand.token;
      ForwardResult r = task_forward(model, context, parent.cache, std::span(&token, 1), false);
      next_alive.push_back({std::move(tokens), cand.log_prob, std::move(r.cache), log_probs(r.logits.row(0))});
    }
    alive = std::move(next_alive);
  }
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const Generation& a, const Generation& b) { return a.score < b.score; });
  return *best;
}

Heatmap attention_heatmap(const EncodedContext& context, const AttentionTrace& task_trace,
                          std::size_t layer, std::size_t head) {
  Heatmap map;
  map.key_segments = task_trace.key_segments;
  const std::size_t total = map.key_segments.size();
  std::size_t offset = 0;
  for (const AttentionTrace& wt : context.window_traces) {
    const HeadTrace& h = wt.at(layer, head);
    for (std::size_t q = 0; q < h.post_bias.size(); ++q) {
      std::vector<double> row(total, 0.0);
      std::copy(h.post_bias[q].begin(), h.post_bias[q].end(), row.begin() + static_cast<std::ptrdiff_t>(offset));
      map.rows.push_back(std::move(row));
      map.query_segments.push_back(wt.query_segments[q]);
    }
    offset += wt.key_segments.size();
  }
  const HeadTrace& h = task_trace.at(layer, head);
  for (std::size_t q = 0; q < h.post_bias.size(); ++q) {
    map.rows.push_back(h.post_bias[q]);
    map.query_segments.push_back(task_trace.query_segments[q]);
  }
  return map;
}

}  // namespace mateicl
