#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mateicl/numerics.hpp"

namespace mateicl {

/// Which segment a token belongs to: one of the parallel context windows, or
/// the task segment (query plus anything generated after it).
class Segment {
 public:
  static constexpr Segment task() { return Segment(-1); }
  static constexpr Segment window(std::uint32_t index) {
    return Segment(static_cast<std::int32_t>(index));
  }

  constexpr bool is_task() const noexcept { return id_ < 0; }
  constexpr std::uint32_t window_index() const noexcept { return static_cast<std::uint32_t>(id_); }
  /// "w<index>" or "task".
  std::string label() const;

  constexpr auto operator<=>(const Segment&) const = default;

 private:
  constexpr explicit Segment(std::int32_t id) : id_(id) {}
  std::int32_t id_;
};

/// Boolean query × key visibility matrix.
class MaskMatrix {
 public:
  MaskMatrix() = default;
  MaskMatrix(std::size_t rows, std::size_t cols, bool fill = false);

  /// Every new token sees all `past` keys plus new keys up to itself.
  static MaskMatrix causal(std::size_t new_tokens, std::size_t past = 0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool allowed(std::size_t q, std::size_t k) const { return bits_[q * cols_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool value) { bits_[q * cols_ + k] = value ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t q) const { return {bits_.data() + q * cols_, cols_}; }

  bool operator==(const MaskMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct LayerKV {
  Tensor2D keys;    // key count × d_model (heads side by side)
  Tensor2D values;  // key count × d_model
  bool operator==(const LayerKV&) const = default;
};

/// Per-layer keys/values with the position id and segment of each cached token.
/// Window-tagged entries always precede task-tagged ones.
class KVCache {
 public:
  KVCache() = default;
  KVCache(std::size_t n_layers, std::size_t width);

  std::size_t size() const noexcept { return positions_.size(); }
  std::size_t n_layers() const noexcept { return layers_.size(); }
  std::size_t width() const noexcept { return width_; }
  const LayerKV& layer(std::size_t l) const { return layers_.at(l); }
  const std::vector<std::size_t>& positions() const noexcept { return positions_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  /// Index of the first task-tagged key, or size() when there is none.
  std::size_t task_start() const;

  /// Registers metadata for new tokens. Throws ContractError if a window tag
  /// would follow a task tag.
  void append_tokens(std::span<const std::size_t> positions, std::span<const Segment> segments);
  void append_layer(std::size_t l, const Tensor2D& keys, const Tensor2D& values);
  /// Throws ContractError unless every layer holds size() keys and values.
  void validate() const;

  bool operator==(const KVCache&) const = default;

 private:
  std::size_t width_ = 0;
  std::vector<LayerKV> layers_;
  std::vector<std::size_t> positions_;
  std::vector<Segment> segments_;
};

/// Attention recalibration policy.
struct BiasMode {
  enum class Kind { kPcw, kMateIcl, kStructured, kFixed };

  Kind kind = Kind::kMateIcl;
  double fixed_b = 1.0;  // only read when kind == kFixed

  static BiasMode pcw() { return {Kind::kPcw, 1.0}; }
  static BiasMode mateicl() { return {Kind::kMateIcl, 1.0}; }
  static BiasMode structured() { return {Kind::kStructured, 1.0}; }
  /// Throws DomainError when b < 1.
  static BiasMode fixed(double b);
  /// Accepts pcw | mateicl | structured | fixed:<b>.
  static BiasMode parse(const std::string& text);

  std::string to_string() const;
  bool operator==(const BiasMode&) const = default;
};

/// Task-key multiplier for a run with `windows` parallel windows, or nullopt
/// when attention is left untouched. MateICL: off at one window, 2 up to three
/// windows, floor(W/3)+2 beyond. Structured: W. Fixed: the supplied b.
std::optional<double> bias_value(const BiasMode& mode, std::size_t windows);

/// Multiplies weights at indices >= task_start by b and renormalises. b == 1
/// returns the row unchanged. Throws DomainError for b < 1 and ContractError
/// when the row does not sum to one within 1e-6.
std::vector<double> apply_atbias(std::span<const double> row, std::size_t task_start, double b);

/// Sum of the weights at indices >= task_start.
double task_mass(std::span<const double> row, std::size_t task_start);

/// Share of exp-score mass on demonstration keys:
/// sum exp(s_d) / (sum exp(s_d) + sum exp(s_q)). Throws DomainError when both are empty.
double compute_nu(std::span<const double> demo_scores, std::span<const double> query_scores);

struct AttendOptions {
  /// First key index of the task segment; clamped to the key count.
  std::size_t task_start = static_cast<std::size_t>(-1);
  /// AtBias multiplier for task keys; nullopt leaves the softmax untouched.
  std::optional<double> bias;
  /// Keep pre-bias rows and nu per query row.
  bool diagnostics = false;
};

struct AttendResult {
  Tensor2D outputs;
  std::vector<std::vector<double>> weights;           // after bias
  std::vector<std::vector<double>> pre_bias_weights;  // only filled with diagnostics on
  std::vector<double> nu;                             // only filled with diagnostics on
};

/// Masked scaled dot-product attention with optional post-softmax AtBias.
/// queries: nq × dh, keys: nk × dh, values: nk × dv, mask: nq × nk.
/// Throws ContractError if some query row has no visible key.
AttendResult attend(const Tensor2D& queries, const Tensor2D& keys, const Tensor2D& values,
                    const MaskMatrix& mask, double scale, const AttendOptions& options = {});

struct SoftmaxDecomposition {
  std::vector<double> query_part;
  std::vector<double> demo_part;
  double nu = 0.0;
  std::vector<double> reconstruction;  // (1 - nu) * query_part + nu * demo_part
};

/// Splits softmax attention of `query` over [demo ; query] keys into the
/// attention restricted to each segment and the mixing ratio nu.
SoftmaxDecomposition decompose_softmax_attention(std::span<const double> query,
                                                 const Tensor2D& demo_keys,
                                                 const Tensor2D& demo_values,
                                                 const Tensor2D& query_keys,
                                                 const Tensor2D& query_values,
                                                 double scale = 1.0);

struct LinearDecomposition {
  std::vector<double> zsl_part;  // unnormalised attention over query keys
  std::vector<double> icl_part;  // unnormalised attention over demonstration keys
  std::vector<double> sum;
};

/// Softmax-free attention split into its query and demonstration parts.
LinearDecomposition decompose_linear_attention(std::span<const double> query,
                                               const Tensor2D& demo_keys,
                                               const Tensor2D& demo_values,
                                               const Tensor2D& query_keys,
                                               const Tensor2D& query_values);

/// Attention captured for one (layer, head) of one forward call.
struct HeadTrace {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<std::vector<double>> pre_bias;   // one row per query, over all keys
  std::vector<std::vector<double>> post_bias;
  std::vector<double> task_mass;  // post-bias
  std::vector<double> nu;         // pre-bias demonstration share
  Tensor2D outputs;               // head output rows
};

struct AttentionTrace {
  std::vector<Segment> key_segments;    // cached keys followed by new ones
  std::vector<Segment> query_segments;  // new tokens
  std::size_t task_start = 0;
  std::optional<double> bias;  // b in effect, if any
  std::vector<HeadTrace> heads;  // layer-major

  const HeadTrace& at(std::size_t layer, std::size_t head) const;
};

struct AttentionDumpMeta {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t windows = 1;
  BiasMode bias;
};

/// CSV heatmap: header "query,<key segment labels...>", then one line per
/// query row with its segment label followed by the weights.
void write_attention_csv(std::ostream& out, const std::vector<std::vector<double>>& rows,
                         std::span<const Segment> query_segments,
                         std::span<const Segment> key_segments);

/// Single sidecar line: layer=<l>,head=<h>,W=<w>,bias=<mode>.
std::string attention_dump_meta_line(const AttentionDumpMeta& meta);

}  // namespace mateicl
