#include "mateicl/model.hpp"

#include <cmath>
#include <map>
#include <string>
#include <type_traits>

#include "mateicl/error.hpp"
#include "mateicl/rng.hpp"

namespace mateicl {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ValidationError("vocab_size must be at least 2");
  if (d_model == 0 || n_heads == 0) throw ValidationError("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    throw ValidationError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
  }
  if (max_positions < 1) throw ValidationError("max_positions must be at least 1");
  if (!(ln_eps > 0.0)) throw ValidationError("ln_eps must be positive");
}

namespace {

struct Slot {
  std::string name;
  std::vector<std::uint64_t> dims;
};

// Canonical tensor list; the order is the on-disk order.
std::vector<Slot> tensor_slots(const ModelConfig& c) {
  const std::uint64_t d = c.d_model;
  const std::uint64_t h = c.mlp_width();
  std::vector<Slot> slots;
  slots.push_back({"token_embedding", {c.vocab_size, d}});
  slots.push_back({"position_embedding", {c.max_positions, d}});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    slots.push_back({p + "ln1.gain", {d}});
    slots.push_back({p + "ln1.shift", {d}});
    for (const char* proj : {"query", "key", "value", "out"}) {
      slots.push_back({p + "attn." + proj + ".weight", {d, d}});
      slots.push_back({p + "attn." + proj + ".bias", {d}});
    }
    slots.push_back({p + "ln2.gain", {d}});
    slots.push_back({p + "ln2.shift", {d}});
    slots.push_back({p + "mlp.up.weight", {d, h}});
    slots.push_back({p + "mlp.up.bias", {h}});
    slots.push_back({p + "mlp.down.weight", {h, d}});
    slots.push_back({p + "mlp.down.bias", {d}});
  }
  slots.push_back({"final_norm.gain", {d}});
  slots.push_back({"final_norm.shift", {d}});
  if (!c.tied_unembedding) slots.push_back({"unembedding", {c.vocab_size, d}});
  return slots;
}

// Visits the tensors of a store in slot order; `fn` receives either a
// Tensor2D or a std::vector<float>, const-qualified like the store.
template <typename Store, typename Fn>
void for_each_tensor(const ModelConfig& c, Store& w, Fn&& fn) {
  fn(w.token_embedding);
  fn(w.position_embedding);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& layer = w.layers[l];
    fn(layer.ln1.gain);
    fn(layer.ln1.shift);
    for (auto* proj : {&layer.query, &layer.key, &layer.value, &layer.out}) {
      fn(proj->weight);
      fn(proj->bias);
    }
    fn(layer.ln2.gain);
    fn(layer.ln2.shift);
    fn(layer.mlp_up.weight);
    fn(layer.mlp_up.bias);
    fn(layer.mlp_down.weight);
    fn(layer.mlp_down.bias);
  }
  fn(w.final_norm.gain);
  fn(w.final_norm.shift);
  if (!c.tied_unembedding) fn(w.unembedding);
}

template <typename T>
constexpr bool is_matrix_v = std::is_same_v<std::remove_cvref_t<T>, Tensor2D>;

std::string dims_text(const std::vector<std::uint64_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "," : "") + std::to_string(dims[i]);
  return s + "]";
}

WeightStore empty_store(const ModelConfig& c) {
  WeightStore w;
  w.layers.resize(c.n_layers);
  return w;
}

}  // namespace

std::vector<NamedTensor> to_named_tensors(const ModelConfig& config, const WeightStore& weights) {
  config.validate();
  if (weights.layers.size() != config.n_layers) {
    throw ValidationError("weight store has " + std::to_string(weights.layers.size()) +
                          " layers, config expects " + std::to_string(config.n_layers));
  }
  const auto slots = tensor_slots(config);
  std::vector<NamedTensor> out;
  out.reserve(slots.size());
  for_each_tensor(config, weights, [&](const auto& tensor) {
    const Slot& slot = slots[out.size()];
    NamedTensor t{slot.name, slot.dims, {}};
    if constexpr (is_matrix_v<decltype(tensor)>) {
      const auto data = tensor.data();
      t.data.assign(data.begin(), data.end());
    } else {
      t.data = tensor;
    }
    out.push_back(std::move(t));
  });
  return out;
}

WeightStore from_named_tensors(const ModelConfig& config, std::vector<NamedTensor> tensors) {
  config.validate();
  std::map<std::string, NamedTensor*> by_name;
  for (auto& t : tensors) {
    if (!by_name.emplace(t.name, &t).second) throw ValidationError("duplicate tensor '" + t.name + "'");
  }
  WeightStore store = empty_store(config);
  const auto slots = tensor_slots(config);
  std::size_t index = 0;
  for_each_tensor(config, store, [&](auto& tensor) {
    const Slot& slot = slots[index++];
    const auto it = by_name.find(slot.name);
    if (it == by_name.end()) throw ValidationError("missing tensor '" + slot.name + "'");
    NamedTensor& t = *it->second;
    if (t.dims != slot.dims) {
      throw ValidationError("tensor '" + t.name + "' has shape " + dims_text(t.dims) +
                            ", expected " + dims_text(slot.dims));
    }
    if constexpr (is_matrix_v<decltype(tensor)>) {
      tensor = Tensor2D(t.dims[0], t.dims[1], std::move(t.data));
    } else {
      tensor = std::move(t.data);
    }
    by_name.erase(it);
  });
  if (!by_name.empty()) throw ValidationError("unexpected tensor '" + by_name.begin()->first + "'");
  return store;
}

Model::Model(ModelConfig config, WeightStore weights)
    : config_(config), weights_(std::move(weights)) {
  // Round-tripping through the named view checks every shape.
  weights_ = from_named_tensors(config_, to_named_tensors(config_, weights_));
}

WeightStore random_model(const ModelConfig& config, std::uint64_t seed, double scale) {
  config.validate();
  if (!(scale > 0.0)) throw DomainError("random_model scale must be positive");
  Rng rng(seed);
  std::vector<NamedTensor> tensors;
  for (const Slot& slot : tensor_slots(config)) {
    std::uint64_t count = 1;
    for (auto dim : slot.dims) count *= dim;
    NamedTensor t{slot.name, slot.dims, std::vector<float>(count)};
    for (float& v : t.data) v = static_cast<float>(rng.uniform(-scale, scale));
    tensors.push_back(std::move(t));
  }
  return from_named_tensors(config, std::move(tensors));
}

namespace {

Tensor2D layer_norm_rows(const Tensor2D& x, const LayerNormParams& p, double eps) {
  Tensor2D out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto normed = layer_norm(x.row(i), p.gain, p.shift, eps);
    std::copy(normed.begin(), normed.end(), out.row(i).begin());
  }
  return out;
}

Tensor2D column_slice(const Tensor2D& x, std::size_t begin, std::size_t width) {
  Tensor2D out(x.rows(), width);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto src = x.row(i).subspan(begin, width);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void add_in_place(Tensor2D& x, const Tensor2D& delta) {
  auto dst = x.data();
  const auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

ForwardResult forward(const Model& model, const ForwardRequest& request, KVCache cache) {
  const ModelConfig& cfg = model.config();
  const WeightStore& w = model.weights();
  const std::size_t n = request.tokens.size();
  if (request.positions.size() != n || request.segments.size() != n) {
    throw ShapeError("forward: tokens, positions and segments must have equal length");
  }
  if (cache.n_layers() == 0 && cache.size() == 0) cache = KVCache(cfg.n_layers, cfg.d_model);
  if (cache.n_layers() != cfg.n_layers || cache.width() != cfg.d_model) {
    throw ShapeError("forward: cache geometry does not match the model");
  }
  const std::size_t past = cache.size();
  const std::size_t keys_total = past + n;
  for (std::size_t i = 0; i < n; ++i) {
    if (request.tokens[i] >= cfg.vocab_size) {
      throw VocabError("token id " + std::to_string(request.tokens[i]) + " >= vocab size " +
                       std::to_string(cfg.vocab_size));
    }
    if (request.positions[i] >= cfg.max_positions) {
      throw CapacityError("position " + std::to_string(request.positions[i]) +
                          " exceeds model capacity " + std::to_string(cfg.max_positions));
    }
  }
  MaskMatrix default_mask;
  const MaskMatrix* mask = request.mask;
  if (mask == nullptr) {
    default_mask = MaskMatrix::causal(n, past);
    mask = &default_mask;
  }
  if (mask->rows() != n || mask->cols() != keys_total) {
    throw ShapeError("forward: mask must be " + std::to_string(n) + "x" + std::to_string(keys_total));
  }

  cache.append_tokens(request.positions, request.segments);
  const std::size_t task_start = cache.task_start();
  AttendOptions options;
  options.task_start = task_start;
  options.diagnostics = request.collect_traces;
  if (const auto b = bias_value(request.bias, request.windows); b && task_start < keys_total) {
    options.bias = *b;
  }

  ForwardResult result;
  if (request.collect_traces) {
    AttentionTrace trace;
    trace.key_segments = cache.segments();
    trace.query_segments.assign(request.segments.begin(), request.segments.end());
    trace.task_start = task_start;
    trace.bias = options.bias;
    result.trace = std::move(trace);
  }

  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor2D x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tok = w.token_embedding.row(request.tokens[i]);
    const auto pos = w.position_embedding.row(request.positions[i]);
    auto dst = x.row(i);
    for (std::size_t j = 0; j < d; ++j) dst[j] = tok[j] + pos[j];
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    const Tensor2D a = layer_norm_rows(x, lw.ln1, cfg.ln_eps);
    const Tensor2D q = linear(a, lw.query.weight, lw.query.bias);
    cache.append_layer(l, linear(a, lw.key.weight, lw.key.bias),
                       linear(a, lw.value.weight, lw.value.bias));
    const LayerKV& kv = cache.layer(l);

    Tensor2D merged(n, d);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      AttendResult head = attend(column_slice(q, h * dh, dh), column_slice(kv.keys, h * dh, dh),
                                 column_slice(kv.values, h * dh, dh), *mask, scale, options);
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = head.outputs.row(i);
        std::copy(src.begin(), src.end(), merged.row(i).begin() + static_cast<std::ptrdiff_t>(h * dh));
      }
      if (result.trace) {
        HeadTrace ht;
        ht.layer = l;
        ht.head = h;
        ht.task_mass.reserve(n);
        for (const auto& row : head.weights) ht.task_mass.push_back(task_mass(row, task_start));
        ht.pre_bias = std::move(head.pre_bias_weights);
        ht.post_bias = std::move(head.weights);
        ht.nu = std::move(head.nu);
        ht.outputs = std::move(head.outputs);
        result.trace->heads.push_back(std::move(ht));
      }
    }
    add_in_place(x, linear(merged, lw.out.weight, lw.out.bias));

    const Tensor2D m = layer_norm_rows(x, lw.ln2, cfg.ln_eps);
    Tensor2D up = linear(m, lw.mlp_up.weight, lw.mlp_up.bias);
    for (float& v : up.data()) v = static_cast<float>(gelu(v));
    add_in_place(x, linear(up, lw.mlp_down.weight, lw.mlp_down.bias));
  }
  cache.validate();

  const Tensor2D final_hidden = layer_norm_rows(x, w.final_norm, cfg.ln_eps);
  const Tensor2D& unembed = cfg.tied_unembedding ? w.token_embedding : w.unembedding;
  result.logits = Tensor2D(n, cfg.vocab_size);
  for (std::size_t i = 0; i < n; ++i) {
    const auto hrow = final_hidden.row(i);
    for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
      const auto erow = unembed.row(v);
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += static_cast<double>(hrow[j]) * erow[j];
      result.logits(i, v) = static_cast<float>(dot);
    }
  }
  result.cache = std::move(cache);
  return result;
}

}  // namespace mateicl
