#include "mateicl/windowing.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include "mateicl/error.hpp"

namespace mateicl {

std::size_t PackedContext::context_tokens() const {
  std::size_t total = 0;
  for (const auto& w : windows) total += w.size();
  return total;
}

std::size_t window_capacity(std::size_t max_positions, std::size_t task_reserve) {
  if (task_reserve >= max_positions) {
    throw CapacityError("task reserve " + std::to_string(task_reserve) +
                        " leaves no context in capacity " + std::to_string(max_positions));
  }
  return max_positions - task_reserve;
}

PackedContext pack_windows(std::span<const Demonstration> demos, const PackOptions& options) {
  if (options.windows == 0) throw DomainError("at least one window is required");
  if (options.max_per_window && *options.max_per_window == 0) {
    throw DomainError("max_per_window must be positive");
  }
  for (std::size_t i = 0; i < demos.size(); ++i) {
    if (demos[i].empty()) throw DomainError("demonstration " + std::to_string(i) + " is empty");
    if (demos[i].size() > options.capacity) {
      throw PackingError(PackingError::Reason::kItemTooLarge, i,
                         "demonstration " + std::to_string(i) + " has " +
                             std::to_string(demos[i].size()) + " tokens, window capacity is " +
                             std::to_string(options.capacity));
    }
  }
  const std::size_t per_window_cap =
      options.max_per_window.value_or(std::numeric_limits<std::size_t>::max());

  PackedContext packed;
  packed.windows.resize(options.windows);
  packed.window_demos.resize(options.windows);
  const auto place = [&](std::size_t w, std::size_t i) {
    packed.windows[w].insert(packed.windows[w].end(), demos[i].begin(), demos[i].end());
    packed.window_demos[w].push_back(i);
  };
  const auto overflow = [&](std::size_t i) {
    return PackingError(PackingError::Reason::kOverflow, i,
                        "demonstration " + std::to_string(i) + " does not fit in " +
                            std::to_string(options.windows) + " windows of " +
                            std::to_string(options.capacity) + " tokens");
  };

  if (options.strategy == PackStrategy::kGreedyFill) {
    std::size_t w = 0;
    for (std::size_t i = 0; i < demos.size(); ++i) {
      while (w < options.windows && (packed.windows[w].size() + demos[i].size() > options.capacity ||
                                     packed.window_demos[w].size() >= per_window_cap)) {
        ++w;
      }
      if (w == options.windows) throw overflow(i);
      place(w, i);
    }
  } else {
    for (std::size_t i = 0; i < demos.size(); ++i) {
      const std::size_t w = i % options.windows;
      if (packed.windows[w].size() + demos[i].size() > options.capacity ||
          packed.window_demos[w].size() >= per_window_cap) {
        throw overflow(i);
      }
      place(w, i);
    }
  }
  for (const auto& w : packed.windows) packed.c_star = std::max(packed.c_star, w.size());
  return packed;
}

PackedContext with_task(PackedContext packed, std::vector<TokenId> task_tokens, std::size_t budget) {
  packed.task_budget = std::max(budget, task_tokens.size());
  packed.task_tokens = std::move(task_tokens);
  packed.task_positions.clear();
  return packed;
}

PackedContext assign_positions(PackedContext packed, std::size_t max_positions) {
  const std::size_t budget = std::max(packed.task_budget, packed.task_tokens.size());
  if (packed.c_star + budget > max_positions) {
    throw CapacityError("windows of " + std::to_string(packed.c_star) + " tokens plus " +
                        std::to_string(budget) + " task positions exceed capacity " +
                        std::to_string(max_positions));
  }
  packed.task_budget = budget;
  packed.window_positions.assign(packed.windows.size(), {});
  for (std::size_t w = 0; w < packed.windows.size(); ++w) {
    auto& pos = packed.window_positions[w];
    pos.resize(packed.windows[w].size());
    std::iota(pos.begin(), pos.end(), packed.c_star - packed.windows[w].size());
  }
  packed.task_positions.resize(packed.task_tokens.size());
  std::iota(packed.task_positions.begin(), packed.task_positions.end(), packed.c_star);
  return packed;
}

AttentionMask build_mask(const PackedContext& packed) {
  const std::size_t context = packed.context_tokens();
  const std::size_t total = context + packed.task_tokens.size();
  AttentionMask mask;
  mask.allowed = MaskMatrix(total, total);
  mask.task_start = context;
  mask.key_segments.reserve(total);
  std::size_t offset = 0;
  for (std::size_t w = 0; w < packed.windows.size(); ++w) {
    const std::size_t len = packed.windows[w].size();
    for (std::size_t i = 0; i < len; ++i) {
      mask.key_segments.push_back(Segment::window(static_cast<std::uint32_t>(w)));
      for (std::size_t j = 0; j <= i; ++j) mask.allowed.set(offset + i, offset + j, true);
    }
    offset += len;
  }
  for (std::size_t t = 0; t < packed.task_tokens.size(); ++t) {
    mask.key_segments.push_back(Segment::task());
    for (std::size_t k = 0; k <= context + t; ++k) mask.allowed.set(context + t, k, true);
  }
  return mask;
}

FlatSequence flatten(const PackedContext& packed) {
  if (packed.window_positions.size() != packed.windows.size() ||
      packed.task_positions.size() != packed.task_tokens.size()) {
    throw ContractError("flatten: positions have not been assigned");
  }
  FlatSequence flat;
  for (std::size_t w = 0; w < packed.windows.size(); ++w) {
    flat.tokens.insert(flat.tokens.end(), packed.windows[w].begin(), packed.windows[w].end());
    flat.positions.insert(flat.positions.end(), packed.window_positions[w].begin(),
                          packed.window_positions[w].end());
    flat.segments.insert(flat.segments.end(), packed.windows[w].size(),
                         Segment::window(static_cast<std::uint32_t>(w)));
  }
  flat.tokens.insert(flat.tokens.end(), packed.task_tokens.begin(), packed.task_tokens.end());
  flat.positions.insert(flat.positions.end(), packed.task_positions.begin(),
                        packed.task_positions.end());
  flat.segments.insert(flat.segments.end(), packed.task_tokens.size(), Segment::task());
  return flat;
}

std::string layout_report(const PackedContext& packed) {
  const auto span_text = [](const std::vector<std::size_t>& pos) {
    return pos.empty() ? std::string("-")
                       : std::to_string(pos.front()) + "-" + std::to_string(pos.back());
  };
  std::ostringstream out;
  out << "window\tdemos\ttokens\tpositions\n";
  for (std::size_t w = 0; w < packed.windows.size(); ++w) {
    const std::size_t demos = w < packed.window_demos.size() ? packed.window_demos[w].size() : 0;
    out << w << '\t' << demos << '\t' << packed.windows[w].size() << '\t'
        << (w < packed.window_positions.size() ? span_text(packed.window_positions[w]) : "-")
        << '\n';
  }
  out << "task\t-\t" << packed.task_tokens.size() << '\t' << span_text(packed.task_positions) << '\n';
  return out.str();
}

}  // namespace mateicl
