#pragma once

#include <cstddef>
#include <vector>

#include "mateicl/model.hpp"
#include "mateicl/rng.hpp"
#include "mateicl/windowing.hpp"

namespace testing_util {

inline mateicl::ModelConfig tiny_config(std::size_t max_positions = 64) {
  mateicl::ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.max_positions = max_positions;
  return c;
}

inline mateicl::Model tiny_model(std::uint64_t seed, double scale = 0.5) {
  const auto cfg = tiny_config();
  return mateicl::Model(cfg, mateicl::random_model(cfg, seed, scale));
}

inline std::vector<mateicl::TokenId> random_tokens(mateicl::Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<mateicl::TokenId> out(n);
  for (auto& t : out) t = static_cast<mateicl::TokenId>(rng.below(vocab));
  return out;
}

inline mateicl::Tensor2D random_tensor(mateicl::Rng& rng, std::size_t rows, std::size_t cols,
                                       double scale = 1.0) {
  mateicl::Tensor2D t(rows, cols);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

/// W windows of the given lengths, one demonstration each, with positions assigned.
inline mateicl::PackedContext packed_context(mateicl::Rng& rng, const std::vector<std::size_t>& lengths,
                                             std::size_t task_len, const mateicl::ModelConfig& cfg) {
  std::vector<mateicl::Demonstration> demos;
  std::size_t longest = 1;
  for (std::size_t len : lengths) {
    demos.push_back(random_tokens(rng, len, cfg.vocab_size));
    longest = std::max(longest, len);
  }
  mateicl::PackOptions opts;
  opts.capacity = longest;
  opts.windows = lengths.size();
  opts.max_per_window = 1;
  auto packed = mateicl::pack_windows(demos, opts);
  packed = mateicl::with_task(std::move(packed), random_tokens(rng, task_len, cfg.vocab_size));
  return mateicl::assign_positions(std::move(packed), cfg.max_positions);
}

/// Reference visibility for a packed context laid out as [window 0 ... window W-1, task].
struct CompositeLayout {
  std::vector<int> owner;  // window index, -1 for task
  bool visible(std::size_t i, std::size_t j) const {
    if (owner[i] < 0) return owner[j] >= 0 || j <= i;
    return owner[j] == owner[i] && j <= i;
  }
};

inline CompositeLayout composite_layout(const mateicl::PackedContext& p) {
  CompositeLayout layout;
  for (std::size_t w = 0; w < p.windows.size(); ++w) layout.owner.insert(layout.owner.end(), p.windows[w].size(), static_cast<int>(w));
  layout.owner.insert(layout.owner.end(), p.task_tokens.size(), -1);
  return layout;
}

}  // namespace testing_util
