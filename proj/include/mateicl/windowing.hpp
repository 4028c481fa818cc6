#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mateicl/attention.hpp"
#include "mateicl/model.hpp"

namespace mateicl {

/// One fully rendered demonstration (prompt and label), already tokenised.
using Demonstration = std::vector<TokenId>;

enum class PackStrategy { kGreedyFill, kRoundRobin };

struct PackOptions {
  std::size_t capacity = 0;  // per-window token budget C
  std::size_t windows = 1;   // W
  PackStrategy strategy = PackStrategy::kGreedyFill;
  /// Upper bound on demonstrations per window (k); unbounded when unset.
  std::optional<std::size_t> max_per_window;
};

/// Demonstrations laid out in W parallel windows plus the task tokens.
struct PackedContext {
  std::vector<std::vector<TokenId>> windows;
  std::vector<std::vector<std::size_t>> window_demos;  // input indices per window
  std::vector<std::vector<std::size_t>> window_positions;
  std::vector<TokenId> task_tokens;
  std::vector<std::size_t> task_positions;
  std::size_t c_star = 0;       // longest window, in tokens
  std::size_t task_budget = 0;  // T: positions reserved for task tokens

  std::size_t window_count() const noexcept { return windows.size(); }
  std::size_t context_tokens() const;
};

/// C = N - T. Throws CapacityError when task_reserve >= N.
std::size_t window_capacity(std::size_t max_positions, std::size_t task_reserve);

/// Assigns each demonstration, verbatim, to exactly one window.
/// greedy_fill fills windows in input order; round_robin deals demonstration
/// i to window i mod W. Throws PackingError (item-too-large / overflow).
PackedContext pack_windows(std::span<const Demonstration> demos, const PackOptions& options);

/// Sets the task tokens and reserves max(budget, tokens.size()) task positions.
PackedContext with_task(PackedContext packed, std::vector<TokenId> task_tokens,
                        std::size_t budget = 0);

/// Right-aligns every window so it ends at position c_star - 1 (equal-length
/// windows share one position range) and numbers the task tokens from c_star.
/// Throws CapacityError if c_star + T exceeds max_positions.
PackedContext assign_positions(PackedContext packed, std::size_t max_positions);

/// Composite visibility over [window 0 ... window W-1, task]: a context token
/// sees earlier-or-equal tokens of its own window only; a task token sees all
/// context tokens and earlier-or-equal task tokens.
struct AttentionMask {
  MaskMatrix allowed;
  std::vector<Segment> key_segments;
  std::size_t task_start = 0;  // first task key index
};

AttentionMask build_mask(const PackedContext& packed);

/// The packed context as a single sequence in mask order.
struct FlatSequence {
  std::vector<TokenId> tokens;
  std::vector<std::size_t> positions;
  std::vector<Segment> segments;
};

FlatSequence flatten(const PackedContext& packed);

/// Tab-separated layout: window, demos, tokens, positions (first-last).
std::string layout_report(const PackedContext& packed);

}  // namespace mateicl
