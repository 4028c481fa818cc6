#include "mateicl/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "mateicl/attention.hpp"
#include "mateicl/error.hpp"
#include "mateicl/eval.hpp"
#include "mateicl/inference.hpp"
#include "mateicl/model.hpp"
#include "mateicl/numerics.hpp"
#include "mateicl/rng.hpp"
#include "mateicl/weights_io.hpp"
#include "mateicl/windowing.hpp"

namespace mateicl {

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 32;
  c.n_heads = 2;
  c.n_layers = 2;
  c.max_positions = 64;
  return c;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab));
  return out;
}

PackedContext random_packed(Rng& rng, std::size_t windows, std::size_t window_len,
                            std::size_t task_len, const ModelConfig& cfg) {
  std::vector<Demonstration> demos;
  for (std::size_t w = 0; w < windows; ++w) demos.push_back(random_tokens(rng, window_len, cfg.vocab_size));
  PackOptions opts;
  opts.capacity = window_len;
  opts.windows = windows;
  PackedContext packed = pack_windows(demos, opts);
  packed = with_task(std::move(packed), random_tokens(rng, task_len, cfg.vocab_size));
  return assign_positions(std::move(packed), cfg.max_positions);
}

double logit_error(const Model& model, const PackedContext& packed, BiasMode bias) {
  const EncodedContext ctx = encode_context(model, packed, bias);
  const QueryResult windowed = run_query(model, ctx, packed.task_tokens);
  const ForwardResult full = forward_composite(model, packed, bias);
  const std::size_t t = packed.task_tokens.size();
  const std::size_t offset = full.logits.rows() - t;
  double worst = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    worst = std::max(worst, max_relative_error(windowed.logits.row(i), full.logits.row(offset + i)));
  }
  return worst;
}

}  // namespace

SelftestResult run_selftest(std::ostream* log) {
  SelftestResult result;
  const auto check = [&](const std::string& name, const std::function<bool()>& property) {
    ++result.checked;
    bool passed = false;
    std::string detail;
    try {
      passed = property();
    } catch (const std::exception& e) {
      detail = std::string(": threw ") + e.what();
    }
    if (!passed) result.failures.push_back(name + detail);
    if (log) *log << (passed ? "ok    " : "FAIL  ") << name << detail << '\n';
  };

  check("softmax rows sum to one and ignore shifts", [] {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<double> row(1 + rng.below(12));
      for (double& v : row) v = rng.uniform(-30.0, 30.0);
      const auto p = stable_softmax(row);
      double sum = 0.0;
      for (double v : p) sum += v;
      if (std::abs(sum - 1.0) > 1e-12) return false;
      std::vector<double> shifted = row;
      for (double& v : shifted) v += 123.0;
      if (max_abs_error(p, stable_softmax(shifted)) > 1e-12) return false;
    }
    return true;
  });

  check("bias schedule table", [] {
    const std::pair<std::size_t, double> table[] = {{2, 2}, {3, 2}, {4, 3}, {5, 3}, {6, 4}, {9, 5}};
    if (bias_value(BiasMode::mateicl(), 1).has_value()) return false;
    for (const auto& [w, b] : table) {
      if (bias_value(BiasMode::mateicl(), w) != b) return false;
    }
    return true;
  });

  check("AtBias follows the mass law and preserves row sums", [] {
    Rng rng(2);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> scores(2 + rng.below(20));
      for (double& v : scores) v = rng.uniform(-5.0, 5.0);
      const auto row = stable_softmax(scores);
      const std::size_t split = 1 + rng.below(row.size() - 1);
      const double b = rng.uniform(1.0, 8.0);
      const double m = task_mass(row, split);
      const auto biased = apply_atbias(row, split, b);
      double sum = 0.0;
      for (double v : biased) sum += v;
      if (std::abs(sum - 1.0) > 1e-9) return false;
      if (std::abs(task_mass(biased, split) - b * m / (1.0 + (b - 1.0) * m)) > 1e-9) return false;
    }
    return true;
  });

  check("AtBias with b = 1 is the identity", [] {
    const std::vector<double> row{0.1, 0.2, 0.3, 0.4};
    return apply_atbias(row, 2, 1.0) == row;
  });

  check("softmax decomposition reconstructs full attention", [] {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t d = 1 + rng.below(8), nd = 1 + rng.below(6), nq = 1 + rng.below(6);
      const auto fill = [&](std::size_t r) {
        Tensor2D t(r, d);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < d; ++j) t(i, j) = static_cast<float>(rng.uniform(-1.0, 1.0));
        return t;
      };
      std::vector<double> q(d);
      for (double& v : q) v = rng.uniform(-1.0, 1.0);
      const Tensor2D kd = fill(nd), vd = fill(nd), kq = fill(nq), vq = fill(nq);
      const auto dec = decompose_softmax_attention(q, kd, vd, kq, vq);
      std::vector<double> scores;
      for (std::size_t i = 0; i < nd; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q[j] * kd(i, j);
        scores.push_back(s);
      }
      for (std::size_t i = 0; i < nq; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += q[j] * kq(i, j);
        scores.push_back(s);
      }
      const auto p = stable_softmax(scores);
      std::vector<double> full(d, 0.0);
      for (std::size_t i = 0; i < nd + nq; ++i)
        for (std::size_t j = 0; j < d; ++j) full[j] += p[i] * (i < nd ? vd(i, j) : vq(i - nd, j));
      if (max_abs_error(full, dec.reconstruction) > 1e-9) return false;
    }
    return true;
  });

  const ModelConfig cfg = tiny_config();
  const Model model(cfg, random_model(cfg, 7, 0.3));

  check("windowed inference matches the composite full pass", [&] {
    Rng rng(4);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t w = 1 + rng.below(4);
      const auto packed = random_packed(rng, w, 1 + rng.below(8), 1 + rng.below(6), cfg);
      if (logit_error(model, packed, BiasMode::mateicl()) >= 1e-5) return false;
    }
    return true;
  });

  check("one window reduces to plain causal inference", [&] {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const auto packed = random_packed(rng, 1, 1 + rng.below(8), 1 + rng.below(6), cfg);
      const EncodedContext ctx = encode_context(model, packed, BiasMode::mateicl());
      const QueryResult windowed = run_query(model, ctx, packed.task_tokens);
      std::vector<TokenId> tokens = packed.windows[0];
      tokens.insert(tokens.end(), packed.task_tokens.begin(), packed.task_tokens.end());
      std::vector<std::size_t> positions(tokens.size());
      for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
      const std::vector<Segment> segments(tokens.size(), Segment::window(0));
      ForwardRequest req;
      req.tokens = tokens;
      req.positions = positions;
      req.segments = segments;
      const ForwardResult plain = forward(model, req);
      const std::size_t offset = tokens.size() - packed.task_tokens.size();
      for (std::size_t i = 0; i < packed.task_tokens.size(); ++i) {
        if (max_relative_error(windowed.logits.row(i), plain.logits.row(offset + i)) > 1e-7) return false;
      }
    }
    return true;
  });

  check("equal-length window order does not change task logits", [&] {
    Rng rng(6);
    auto packed = random_packed(rng, 3, 5, 3, cfg);
    const QueryResult a = run_query(model, encode_context(model, packed, BiasMode::mateicl()), packed.task_tokens);
    std::reverse(packed.windows.begin(), packed.windows.end());
    const QueryResult b = run_query(model, encode_context(model, packed, BiasMode::mateicl()), packed.task_tokens);
    for (std::size_t i = 0; i < a.logits.rows(); ++i) {
      if (max_relative_error(a.logits.row(i), b.logits.row(i)) > 1e-5) return false;
    }
    return true;
  });

  check("weights survive an MTW1 round trip", [&] {
    std::stringstream buffer;
    const auto tensors = to_named_tensors(cfg, model.weights());
    write_mtw1(buffer, tensors);
    const auto back = read_mtw1(buffer);
    return from_named_tensors(cfg, back) == model.weights();
  });

  check("matching model retrieves the demonstrated label", [] {
    const MatchingModel mm = build_matching_model(4, 3, 40.0);
    const Model m(mm.config, mm.weights);
    for (std::size_t p = 0; p < 4; ++p) {
      std::vector<Demonstration> demos;
      for (std::size_t q = 0; q < 4; ++q) demos.push_back({mm.composite(q, (q + 1) % 3)});
      PackOptions opts;
      opts.capacity = 2;
      opts.windows = 2;
      auto packed = assign_positions(with_task(pack_windows(demos, opts), {mm.pattern(p)}), mm.config.max_positions);
      const QueryResult r = run_query(m, encode_context(m, packed, BiasMode::mateicl()), packed.task_tokens);
      const auto row = r.logits.row(0);
      std::size_t best = 0;
      for (std::size_t l = 1; l < 3; ++l)
        if (row[mm.label(l)] > row[mm.label(best)]) best = l;
      if (best != (p + 1) % 3) return false;
    }
    return true;
  });

  check("exact match implies unit F1", [] {
    const char* pairs[][2] = {{"Cat.", "cat"}, {"the cat", "cat"}, {"An apple pie", "apple  pie!"}};
    for (const auto& p : pairs) {
      if (metric_em(p[0], p[1]) && metric_f1(p[0], p[1]) != 1.0) return false;
    }
    return metric_em("Cat.", "cat") && metric_f1("the cat", "cat") == 1.0;
  });

  check("report summary round-trips", [] {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      const double mean = rng.uniform(0.0, 100.0), sd = rng.uniform(0.0, 50.0);
      const auto [m, s] = parse_mean_std(format_mean_std(mean, sd));
      if (std::abs(m - mean) > 0.05 + 1e-9 || std::abs(s - sd) > 0.05 + 1e-9) return false;
    }
    return true;
  });

  check("packing places every demonstration exactly once", [] {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Demonstration> demos(1 + rng.below(12));
      for (auto& d : demos) d.assign(1 + rng.below(4), 1);
      PackOptions opts;
      opts.capacity = 16;
      opts.windows = 1 + rng.below(4);
      opts.strategy = rng.below(2) ? PackStrategy::kRoundRobin : PackStrategy::kGreedyFill;
      PackedContext packed;
      try {
        packed = pack_windows(demos, opts);
      } catch (const PackingError&) {
        continue;
      }
      std::vector<int> seen(demos.size(), 0);
      for (const auto& w : packed.window_demos)
        for (std::size_t i : w) ++seen[i];
      if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) return false;
    }
    return true;
  });

  return result;
}

}  // namespace mateicl
