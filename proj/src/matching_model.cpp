// Construction of the retrieval ("matching") model.
//
// The residual stream has three blocks:
//   [ key block (d1) | query block (d2) | label block (d3) ]
// Pattern p and label l own rows p+1 and l+1 of a Sylvester Hadamard matrix,
// so every code is a zero-mean ±1 vector and distinct codes are orthogonal.
//
//   pattern token p        -> [ 0     | u_p | 0   ]
//   label token l          -> [ 0     | 0   | v_l ]
//   demonstration D(p, l)  -> [ u_p   | 0   | v_l ]
//   byte tokens            -> 0
//
// Zero-mean inputs make layer norm a positive per-token rescale. Queries read
// the query block, keys read the key block, so a pattern token scores exactly
// `temperature` against demonstrations of its own pattern and 0 against every
// other key. Values carry the label block, the MLP contributes nothing, and
// the tied unembedding turns the label block back into label logits
// proportional to the attention mass on each label.
#include <cmath>
#include <cstdio>
#include <string>

#include "mateicl/error.hpp"
#include "mateicl/model.hpp"

namespace mateicl {

namespace {

std::size_t next_pow2_above(std::size_t n) {
  std::size_t p = 1;
  while (p <= n) p <<= 1;
  return p;
}

float hadamard(std::size_t row, std::size_t col) {
  return (__builtin_popcountll(row & col) % 2 == 0) ? 1.0f : -1.0f;
}

Projection zero_projection(std::size_t in, std::size_t out) {
  return {Tensor2D(in, out), std::vector<float>(out, 0.0f)};
}

LayerNormParams unit_norm(std::size_t d) {
  return {std::vector<float>(d, 1.0f), std::vector<float>(d, 0.0f)};
}

}  // namespace

TokenId MatchingModel::pattern(std::size_t p) const { return static_cast<TokenId>(p); }

TokenId MatchingModel::label(std::size_t l) const { return static_cast<TokenId>(n_patterns + l); }

TokenId MatchingModel::composite(std::size_t p, std::size_t l) const {
  return static_cast<TokenId>(n_patterns + n_labels + p * n_labels + l);
}

std::string MatchingModel::pattern_text(std::size_t p) const { return vocabulary.at(pattern(p)); }

std::string MatchingModel::label_text(std::size_t l) const { return vocabulary.at(label(l)); }

MatchingModel build_matching_model(std::size_t n_patterns, std::size_t n_labels,
                                   double temperature) {
  if (n_patterns == 0 || n_labels == 0) throw DomainError("matching model needs patterns and labels");
  if (!(temperature >= 10.0)) throw DomainError("matching model temperature must be >= 10");

  MatchingModel m;
  m.n_patterns = n_patterns;
  m.n_labels = n_labels;
  for (std::size_t p = 0; p < n_patterns; ++p) m.vocabulary.push_back("p" + std::to_string(p));
  for (std::size_t l = 0; l < n_labels; ++l) m.vocabulary.push_back("l" + std::to_string(l));
  for (std::size_t p = 0; p < n_patterns; ++p) {
    for (std::size_t l = 0; l < n_labels; ++l) {
      m.vocabulary.push_back("p" + std::to_string(p) + "l" + std::to_string(l));
    }
  }
  for (int b = 0; b < 256; ++b) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "<0x%02X>", b);
    m.vocabulary.push_back(buf);
  }

  const std::size_t d1 = next_pow2_above(n_patterns);
  const std::size_t d2 = d1;
  const std::size_t d3 = next_pow2_above(n_labels);
  const std::size_t d = d1 + d2 + d3;
  const std::size_t key_off = 0;
  const std::size_t query_off = d1;
  const std::size_t label_off = d1 + d2;

  ModelConfig& c = m.config;
  c.vocab_size = m.vocabulary.size();
  c.d_model = d;
  c.n_heads = 1;
  c.n_layers = 1;
  c.max_positions = 512;
  c.ln_eps = 1e-5;
  c.tied_unembedding = true;

  WeightStore& w = m.weights;
  w.token_embedding = Tensor2D(c.vocab_size, d);
  for (std::size_t p = 0; p < n_patterns; ++p) {
    for (std::size_t j = 0; j < d2; ++j) w.token_embedding(m.pattern(p), query_off + j) = hadamard(p + 1, j);
  }
  for (std::size_t l = 0; l < n_labels; ++l) {
    for (std::size_t j = 0; j < d3; ++j) w.token_embedding(m.label(l), label_off + j) = hadamard(l + 1, j);
  }
  for (std::size_t p = 0; p < n_patterns; ++p) {
    for (std::size_t l = 0; l < n_labels; ++l) {
      const TokenId id = m.composite(p, l);
      for (std::size_t j = 0; j < d1; ++j) w.token_embedding(id, key_off + j) = hadamard(p + 1, j);
      for (std::size_t j = 0; j < d3; ++j) w.token_embedding(id, label_off + j) = hadamard(l + 1, j);
    }
  }
  w.position_embedding = Tensor2D(c.max_positions, d);

  // Layer-norm scales of a pattern token and of a demonstration token.
  const double dd = static_cast<double>(d);
  const double query_scale = 1.0 / std::sqrt(static_cast<double>(d2) / dd + c.ln_eps);
  const double demo_scale = 1.0 / std::sqrt(static_cast<double>(d1 + d3) / dd + c.ln_eps);
  const double query_gain =
      temperature * std::sqrt(dd) / (query_scale * demo_scale * static_cast<double>(d1));

  LayerWeights layer;
  layer.ln1 = unit_norm(d);
  layer.ln2 = unit_norm(d);
  layer.query = zero_projection(d, d);
  layer.key = zero_projection(d, d);
  layer.value = zero_projection(d, d);
  layer.out = zero_projection(d, d);
  for (std::size_t j = 0; j < d1; ++j) {
    layer.query.weight(query_off + j, key_off + j) = static_cast<float>(query_gain);
    layer.key.weight(key_off + j, key_off + j) = 1.0f;
  }
  for (std::size_t j = 0; j < d3; ++j) {
    layer.value.weight(label_off + j, label_off + j) = 1.0f;
    layer.out.weight(label_off + j, label_off + j) = 1.0f;
  }
  layer.mlp_up = zero_projection(d, c.mlp_width());
  layer.mlp_down = zero_projection(c.mlp_width(), d);
  w.layers.push_back(std::move(layer));
  w.final_norm = unit_norm(d);
  return m;
}

}  // namespace mateicl
