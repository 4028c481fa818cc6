// Straightforward reference implementations used to check the library.
// Everything here runs in double precision and shares no code with src/.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "mateicl/model.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline std::vector<double> softmax(const std::vector<double>& x) {
  double top = -std::numeric_limits<double>::infinity();
  for (double v : x) top = std::max(top, v);
  std::vector<double> e(x.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(x[i] - top);
    sum += e[i];
  }
  for (double& v : e) v /= sum;
  return e;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<float>& g,
                                      const std::vector<float>& b, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
  return y;
}

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

inline std::vector<double> project(const std::vector<double>& x, const mateicl::Projection& p) {
  const std::size_t out = p.weight.cols();
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = p.bias[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * p.weight(i, j);
    y[j] = s;
  }
  return y;
}

/// Post-softmax task-key reweighting: multiply columns >= task_start by b, renormalise.
inline std::vector<double> reweight(std::vector<double> row, std::size_t task_start, double b) {
  double sum = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j >= task_start) row[j] *= b;
    sum += row[j];
  }
  for (double& v : row) v /= sum;
  return row;
}

struct Recalibration {
  std::size_t task_start;
  double b;
};

/// Full forward pass over one sequence; `visible(i, j)` says whether token i
/// may attend to token j. Returns logits rows.
inline Matrix forward(const mateicl::ModelConfig& cfg, const mateicl::WeightStore& w,
                      const std::vector<mateicl::TokenId>& tokens, const std::vector<std::size_t>& positions,
                      const std::function<bool(std::size_t, std::size_t)>& visible,
                      std::optional<Recalibration> recal = std::nullopt) {
  const std::size_t n = tokens.size(), d = cfg.d_model, heads = cfg.n_heads, dh = d / heads;
  Matrix x(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      x[i][c] = static_cast<double>(w.token_embedding(tokens[i], c)) + w.position_embedding(positions[i], c);

  for (const auto& layer : w.layers) {
    Matrix q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = layer_norm(x[i], layer.ln1.gain, layer.ln1.shift, cfg.ln_eps);
      q[i] = project(a, layer.query);
      k[i] = project(a, layer.key);
      v[i] = project(a, layer.value);
    }
    Matrix mixed(n, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores;
        std::vector<std::size_t> keys;
        for (std::size_t j = 0; j < n; ++j) {
          if (!visible(i, j)) continue;
          double s = 0.0;
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += q[i][c] * k[j][c];
          scores.push_back(s / std::sqrt(static_cast<double>(dh)));
          keys.push_back(j);
        }
        std::vector<double> p = softmax(scores);
        if (recal) {
          const auto split = std::lower_bound(keys.begin(), keys.end(), recal->task_start) - keys.begin();
          p = reweight(p, static_cast<std::size_t>(split), recal->b);
        }
        for (std::size_t t = 0; t < keys.size(); ++t)
          for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) mixed[i][c] += p[t] * v[keys[t]][c];
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto o = project(mixed[i], layer.out);
      for (std::size_t c = 0; c < d; ++c) x[i][c] += o[c];
      const auto m = layer_norm(x[i], layer.ln2.gain, layer.ln2.shift, cfg.ln_eps);
      auto up = project(m, layer.mlp_up);
      for (double& u : up) u = gelu(u);
      const auto down = project(up, layer.mlp_down);
      for (std::size_t c = 0; c < d; ++c) x[i][c] += down[c];
    }
  }
  const auto& unembed = cfg.tied_unembedding ? w.token_embedding : w.unembedding;
  Matrix logits(n, std::vector<double>(cfg.vocab_size));
  for (std::size_t i = 0; i < n; ++i) {
    const auto hfin = layer_norm(x[i], w.final_norm.gain, w.final_norm.shift, cfg.ln_eps);
    for (std::size_t t = 0; t < cfg.vocab_size; ++t) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += hfin[c] * unembed(t, c);
      logits[i][t] = s;
    }
  }
  return logits;
}

/// Recalibration factor for W parallel windows written out as a table
/// (nullopt = disabled).
inline std::optional<double> schedule(std::size_t windows) {
  if (windows <= 1) return std::nullopt;
  if (windows <= 3) return 2.0;
  return static_cast<double>(windows / 3 + 2);
}

/// Post-reweighting task mass given the pre-reweighting mass m.
inline double reweighted_mass(double m, double b) { return b * m / (1.0 + (b - 1.0) * m); }

inline std::pair<double, double> population_mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double v : xs) mean += v;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double v : xs) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return den == 0.0 ? num : num / den;
}

}  // namespace oracle
