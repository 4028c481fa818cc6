#include "mateicl/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>

#include "mateicl/error.hpp"

namespace mateicl {

std::string Segment::label() const {
  return is_task() ? std::string("task") : "w" + std::to_string(window_index());
}

MaskMatrix::MaskMatrix(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

MaskMatrix MaskMatrix::causal(std::size_t new_tokens, std::size_t past) {
  MaskMatrix mask(new_tokens, past + new_tokens);
  for (std::size_t q = 0; q < new_tokens; ++q) {
    for (std::size_t k = 0; k <= past + q; ++k) mask.set(q, k, true);
  }
  return mask;
}

KVCache::KVCache(std::size_t n_layers, std::size_t width) : width_(width), layers_(n_layers) {
  for (auto& layer : layers_) {
    layer.keys = Tensor2D(0, width);
    layer.values = Tensor2D(0, width);
  }
}

std::size_t KVCache::task_start() const {
  const auto it = std::find_if(segments_.begin(), segments_.end(),
                               [](const Segment& s) { return s.is_task(); });
  return static_cast<std::size_t>(it - segments_.begin());
}

void KVCache::append_tokens(std::span<const std::size_t> positions,
                            std::span<const Segment> segments) {
  if (positions.size() != segments.size()) {
    throw ContractError("KVCache: positions and segments differ in length");
  }
  bool seen_task = !segments_.empty() && segments_.back().is_task();
  for (const Segment& s : segments) {
    if (seen_task && !s.is_task()) {
      throw ContractError("KVCache: window-tagged key after task-tagged keys");
    }
    seen_task = seen_task || s.is_task();
  }
  positions_.insert(positions_.end(), positions.begin(), positions.end());
  segments_.insert(segments_.end(), segments.begin(), segments.end());
}

void KVCache::append_layer(std::size_t l, const Tensor2D& keys, const Tensor2D& values) {
  auto& layer = layers_.at(l);
  if (keys.cols() != width_ || values.cols() != width_ || keys.rows() != values.rows()) {
    throw ShapeError("KVCache: appended keys/values do not match cache width");
  }
  layer.keys.append_rows(keys);
  layer.values.append_rows(values);
}

void KVCache::validate() const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].keys.rows() != size() || layers_[l].values.rows() != size()) {
      throw ContractError("KVCache: layer " + std::to_string(l) + " holds " +
                          std::to_string(layers_[l].keys.rows()) + " keys, metadata has " +
                          std::to_string(size()));
    }
  }
}

BiasMode BiasMode::fixed(double b) {
  if (!(b >= 1.0)) throw DomainError("fixed bias requires b >= 1, got " + std::to_string(b));
  return {Kind::kFixed, b};
}

BiasMode BiasMode::parse(const std::string& text) {
  if (text == "pcw") return pcw();
  if (text == "mateicl") return mateicl();
  if (text == "structured") return structured();
  if (text.rfind("fixed:", 0) == 0) {
    const std::string number = text.substr(6);
    std::size_t used = 0;
    double b = 0.0;
    try {
      b = std::stod(number, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != number.size()) throw DomainError("bad fixed bias value '" + number + "'");
    return fixed(b);
  }
  throw DomainError("unknown bias mode '" + text + "' (expected pcw|mateicl|structured|fixed:<b>)");
}

std::string BiasMode::to_string() const {
  switch (kind) {
    case Kind::kPcw: return "pcw";
    case Kind::kMateIcl: return "mateicl";
    case Kind::kStructured: return "structured";
    case Kind::kFixed: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "fixed:%g", fixed_b);
      return buf;
    }
  }
  return "?";
}

std::optional<double> bias_value(const BiasMode& mode, std::size_t windows) {
  if (windows == 0) throw DomainError("window count must be at least 1");
  if (windows == 1) return std::nullopt;
  switch (mode.kind) {
    case BiasMode::Kind::kPcw: return std::nullopt;
    case BiasMode::Kind::kMateIcl:
      return windows > 3 ? static_cast<double>(windows / 3 + 2) : 2.0;
    case BiasMode::Kind::kStructured: return static_cast<double>(windows);
    case BiasMode::Kind::kFixed: return mode.fixed_b;
  }
  return std::nullopt;
}

std::vector<double> apply_atbias(std::span<const double> row, std::size_t task_start, double b) {
  if (!(b >= 1.0)) throw DomainError("AtBias requires b >= 1, got " + std::to_string(b));
  if (task_start > row.size()) throw DomainError("AtBias task_start past the end of the row");
  double total = 0.0;
  for (double w : row) total += w;
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("AtBias input row sums to " + std::to_string(total));
  }
  std::vector<double> out(row.begin(), row.end());
  if (b == 1.0) return out;
  double context = 0.0;
  double task = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) (j < task_start ? context : task) += row[j];
  const double norm = context + b * task;
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = (j < task_start ? out[j] : b * out[j]) / norm;
  }
  return out;
}

double task_mass(std::span<const double> row, std::size_t task_start) {
  double mass = 0.0;
  for (std::size_t j = std::min(task_start, row.size()); j < row.size(); ++j) mass += row[j];
  return mass;
}

double compute_nu(std::span<const double> demo_scores, std::span<const double> query_scores) {
  if (demo_scores.empty() && query_scores.empty()) {
    throw DomainError("compute_nu needs at least one key");
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (double s : demo_scores) peak = std::max(peak, s);
  for (double s : query_scores) peak = std::max(peak, s);
  double demo = 0.0;
  double query = 0.0;
  for (double s : demo_scores) demo += std::exp(s - peak);
  for (double s : query_scores) query += std::exp(s - peak);
  return demo / (demo + query);
}

AttendResult attend(const Tensor2D& queries, const Tensor2D& keys, const Tensor2D& values,
                    const MaskMatrix& mask, double scale, const AttendOptions& options) {
  const std::size_t nq = queries.rows();
  const std::size_t nk = keys.rows();
  if (keys.cols() != queries.cols()) throw ShapeError("attend: query/key width mismatch");
  if (values.rows() != nk) throw ShapeError("attend: key/value count mismatch");
  if (mask.rows() != nq || mask.cols() != nk) {
    throw ShapeError("attend: mask is " + std::to_string(mask.rows()) + "x" +
                     std::to_string(mask.cols()) + ", expected " + std::to_string(nq) + "x" +
                     std::to_string(nk));
  }
  const std::size_t dv = values.cols();
  const std::size_t split = std::min(options.task_start, nk);
  AttendResult result;
  result.outputs = Tensor2D(nq, dv);
  result.weights.reserve(nq);
  std::vector<double> scores(nk);
  std::vector<double> acc(dv);
  for (std::size_t q = 0; q < nq; ++q) {
    const auto qrow = queries.row(q);
    const auto allowed = mask.row(q);
    for (std::size_t k = 0; k < nk; ++k) {
      if (!allowed[k]) {
        scores[k] = -std::numeric_limits<double>::infinity();
        continue;
      }
      const auto krow = keys.row(k);
      double dot = 0.0;
      for (std::size_t i = 0; i < qrow.size(); ++i) dot += static_cast<double>(qrow[i]) * krow[i];
      scores[k] = dot * scale;
    }
    MaskedSoftmax sm = masked_softmax(scores, allowed);
    if (sm.degenerate) {
      throw ContractError("attend: query row " + std::to_string(q) + " has no visible key");
    }
    if (options.diagnostics) {
      std::vector<double> demo;
      std::vector<double> query;
      for (std::size_t k = 0; k < nk; ++k) {
        if (allowed[k]) (k < split ? demo : query).push_back(scores[k]);
      }
      result.nu.push_back(compute_nu(demo, query));
      result.pre_bias_weights.push_back(sm.probs);
    }
    std::vector<double> weights =
        options.bias ? apply_atbias(sm.probs, split, *options.bias) : std::move(sm.probs);
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < nk; ++k) {
      const double w = weights[k];
      if (w == 0.0) continue;
      const auto vrow = values.row(k);
      for (std::size_t i = 0; i < dv; ++i) acc[i] += w * vrow[i];
    }
    for (std::size_t i = 0; i < dv; ++i) result.outputs(q, i) = static_cast<float>(acc[i]);
    result.weights.push_back(std::move(weights));
  }
  return result;
}

namespace {

std::vector<double> dot_scores(std::span<const double> query, const Tensor2D& keys, double scale) {
  if (keys.rows() > 0 && keys.cols() != query.size()) throw ShapeError("query/key width mismatch");
  std::vector<double> scores(keys.rows());
  for (std::size_t k = 0; k < keys.rows(); ++k) {
    const auto krow = keys.row(k);
    double dot = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) dot += query[i] * krow[i];
    scores[k] = dot * scale;
  }
  return scores;
}

std::vector<double> weighted_sum(std::span<const double> weights, const Tensor2D& values,
                                 std::size_t width) {
  std::vector<double> out(width, 0.0);
  for (std::size_t k = 0; k < values.rows(); ++k) {
    const auto vrow = values.row(k);
    for (std::size_t i = 0; i < width; ++i) out[i] += weights[k] * vrow[i];
  }
  return out;
}

}  // namespace

SoftmaxDecomposition decompose_softmax_attention(std::span<const double> query,
                                                 const Tensor2D& demo_keys,
                                                 const Tensor2D& demo_values,
                                                 const Tensor2D& query_keys,
                                                 const Tensor2D& query_values, double scale) {
  if (demo_keys.rows() == 0 || query_keys.rows() == 0) {
    throw DomainError("softmax decomposition needs both a demonstration and a query segment");
  }
  if (demo_values.rows() != demo_keys.rows() || query_values.rows() != query_keys.rows() ||
      demo_values.cols() != query_values.cols()) {
    throw ShapeError("softmax decomposition: key/value shapes disagree");
  }
  const std::size_t width = query_values.cols();
  const auto demo_scores = dot_scores(query, demo_keys, scale);
  const auto query_scores = dot_scores(query, query_keys, scale);

  SoftmaxDecomposition out;
  out.query_part = weighted_sum(stable_softmax(query_scores), query_values, width);
  out.demo_part = weighted_sum(stable_softmax(demo_scores), demo_values, width);
  out.nu = compute_nu(demo_scores, query_scores);
  out.reconstruction.resize(width);
  for (std::size_t i = 0; i < width; ++i) {
    out.reconstruction[i] = (1.0 - out.nu) * out.query_part[i] + out.nu * out.demo_part[i];
  }
  return out;
}

LinearDecomposition decompose_linear_attention(std::span<const double> query,
                                               const Tensor2D& demo_keys,
                                               const Tensor2D& demo_values,
                                               const Tensor2D& query_keys,
                                               const Tensor2D& query_values) {
  if (demo_values.rows() != demo_keys.rows() || query_values.rows() != query_keys.rows()) {
    throw ShapeError("linear decomposition: key/value counts disagree");
  }
  const std::size_t width = std::max(demo_values.cols(), query_values.cols());
  if ((demo_values.rows() > 0 && demo_values.cols() != width) ||
      (query_values.rows() > 0 && query_values.cols() != width)) {
    throw ShapeError("linear decomposition: value widths disagree");
  }
  LinearDecomposition out;
  out.zsl_part = weighted_sum(dot_scores(query, query_keys, 1.0), query_values, width);
  out.icl_part = weighted_sum(dot_scores(query, demo_keys, 1.0), demo_values, width);
  out.sum.resize(width);
  for (std::size_t i = 0; i < width; ++i) out.sum[i] = out.zsl_part[i] + out.icl_part[i];
  return out;
}

const HeadTrace& AttentionTrace::at(std::size_t layer, std::size_t head) const {
  for (const auto& h : heads) {
    if (h.layer == layer && h.head == head) return h;
  }
  throw DomainError("no trace for layer " + std::to_string(layer) + " head " + std::to_string(head));
}

void write_attention_csv(std::ostream& out, const std::vector<std::vector<double>>& rows,
                         std::span<const Segment> query_segments,
                         std::span<const Segment> key_segments) {
  if (rows.size() != query_segments.size()) throw ShapeError("attention dump: row/segment count mismatch");
  out << "query";
  for (const Segment& s : key_segments) out << ',' << s.label();
  out << '\n';
  char buf[32];
  for (std::size_t q = 0; q < rows.size(); ++q) {
    if (rows[q].size() != key_segments.size()) throw ShapeError("attention dump: ragged row");
    out << query_segments[q].label();
    for (double w : rows[q]) {
      std::snprintf(buf, sizeof buf, "%.10g", w);
      out << ',' << buf;
    }
    out << '\n';
  }
}

std::string attention_dump_meta_line(const AttentionDumpMeta& meta) {
  return "layer=" + std::to_string(meta.layer) + ",head=" + std::to_string(meta.head) +
         ",W=" + std::to_string(meta.windows) + ",bias=" + meta.bias.to_string();
}

}  // namespace mateicl
