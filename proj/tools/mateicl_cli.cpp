// mateicl: command-line front end for windowed in-context inference,
// evaluation runs and attention dumps.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mateicl/attention.hpp"
#include "mateicl/error.hpp"
#include "mateicl/eval.hpp"
#include "mateicl/inference.hpp"
#include "mateicl/model.hpp"
#include "mateicl/parallel.hpp"
#include "mateicl/rng.hpp"
#include "mateicl/selftest.hpp"
#include "mateicl/tokenizer.hpp"
#include "mateicl/weights_io.hpp"
#include "mateicl/windowing.hpp"

namespace fs = std::filesystem;
using namespace mateicl;

namespace {

struct LoadedModel {
  std::unique_ptr<Model> model;
  std::unique_ptr<Tokenizer> tokenizer;
  std::optional<MatchingModel> matching;
};

struct Options {
  std::string model = "random:";
  std::size_t heads = 1;
  std::string vocab;
  std::string bpe_vocab;
  std::string bpe_merges;
  std::optional<unsigned> threads;

  std::string task;
  std::string template_path;
  std::size_t windows = 1;
  std::string bias = "mateicl";
  std::optional<std::size_t> k;
  std::optional<std::size_t> capacity;
  std::optional<std::size_t> reserve;
  std::string strategy = "greedy";
  std::optional<std::size_t> n_seeds;
  std::string seed_list;
  std::uint64_t seed = 0;

  std::string demos;
  std::string query;
  std::string labels;
  std::string random_tokens;

  std::size_t beam = 4;
  double len_penalty = 0.6;
  std::size_t max_new = 16;
  std::string stop;
  bool normalize_choices = false;

  std::string out;
  std::string dump_attn;
  std::string b_values = "1,2,3,4,5,6,7";
  std::string w_values;
};

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ValidationError("expected key=value in '" + item + "'");
    out[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream field(item);
    T value{};
    if (!(field >> value) || !(field >> std::ws).eof()) {
      throw ValidationError("bad " + what + " entry '" + item + "'");
    }
    out.push_back(value);
  }
  if (out.empty()) throw ValidationError(what + " list is empty");
  return out;
}

std::size_t kv_size(const std::map<std::string, std::string>& kv, const std::string& key,
                    std::size_t fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_list<std::size_t>(it->second, key).front();
}

double kv_double(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? fallback : parse_list<double>(it->second, key).front();
}

LoadedModel load_model(const Options& opt) {
  LoadedModel out;
  if (opt.model.rfind("random:", 0) == 0) {
    const auto kv = parse_kv(opt.model.substr(7));
    ModelConfig cfg;
    cfg.vocab_size = kv_size(kv, "V", 64);
    cfg.d_model = kv_size(kv, "d", 32);
    cfg.n_heads = kv_size(kv, "h", 2);
    cfg.n_layers = kv_size(kv, "L", 2);
    cfg.max_positions = kv_size(kv, "N", 256);
    cfg.validate();
    const auto weights = random_model(cfg, kv_size(kv, "seed", 0), kv_double(kv, "scale", 0.3));
    out.model = std::make_unique<Model>(cfg, weights);
  } else if (opt.model.rfind("matching:", 0) == 0) {
    const auto kv = parse_kv(opt.model.substr(9));
    out.matching = build_matching_model(kv_size(kv, "P", 4), kv_size(kv, "M", 3), kv_double(kv, "tau", 40.0));
    out.model = std::make_unique<Model>(out.matching->config, out.matching->weights);
    out.tokenizer = std::make_unique<SimpleTokenizer>(out.matching->vocabulary);
  } else {
    std::ifstream in(opt.model, std::ios::binary);
    if (!in) throw FormatError("cannot open model file " + opt.model);
    auto tensors = read_mtw1(in);
    const ModelConfig cfg = infer_config(tensors, opt.heads, 1e-5);
    out.model = std::make_unique<Model>(cfg, from_named_tensors(cfg, std::move(tensors)));
  }
  if (!opt.bpe_vocab.empty() || !opt.bpe_merges.empty()) {
    if (opt.bpe_vocab.empty() || opt.bpe_merges.empty()) {
      throw ValidationError("--bpe-vocab and --bpe-merges go together");
    }
    out.tokenizer = std::make_unique<BpeTokenizer>(BpeTokenizer::from_files(opt.bpe_vocab, opt.bpe_merges));
  } else if (!opt.vocab.empty()) {
    out.tokenizer = std::make_unique<SimpleTokenizer>(SimpleTokenizer::from_file(opt.vocab));
  }
  if (!out.tokenizer) out.tokenizer = std::make_unique<IdTokenizer>(out.model->config().vocab_size);
  if (out.tokenizer->vocab_size() > out.model->config().vocab_size) {
    throw VocabError("tokenizer has " + std::to_string(out.tokenizer->vocab_size()) +
                     " entries but the model vocabulary is " +
                     std::to_string(out.model->config().vocab_size));
  }
  return out;
}

Task load_task_option(const Options& opt, const LoadedModel& lm) {
  const auto synthetic = [&](bool completion) {
    if (!lm.matching) throw ValidationError(opt.task + " needs a matching:... model");
    return completion ? synthetic_completion_task(*lm.matching, 3) : synthetic_matching_task(*lm.matching, 3);
  };
  Task task;
  if (opt.task == "synthetic:matching") {
    task = synthetic(false);
  } else if (opt.task == "synthetic:completion") {
    task = synthetic(true);
  } else if (opt.task.empty()) {
    throw ValidationError("--task is required");
  } else {
    task = load_task(opt.task);
  }
  if (!opt.template_path.empty()) {
    TemplateFile tf = load_template_file(opt.template_path);
    task.spec.template_text = std::move(tf.template_text);
    if (!tf.labels.empty()) task.spec.labels = std::move(tf.labels);
    task.spec.validate();
  }
  return task;
}

std::vector<std::uint64_t> seeds_option(const Options& opt) {
  if (!opt.seed_list.empty()) return parse_list<std::uint64_t>(opt.seed_list, "seed");
  return seed_list(opt.n_seeds.value_or(30));
}

PackStrategy strategy_option(const Options& opt) {
  if (opt.strategy == "greedy") return PackStrategy::kGreedyFill;
  if (opt.strategy == "round-robin") return PackStrategy::kRoundRobin;
  throw ValidationError("unknown packing strategy '" + opt.strategy + "'");
}

std::string unescape(const std::string& s) { return render_template(s, {}); }

// Demonstrations plus task tokens for the single-context subcommands.
struct ContextInput {
  std::vector<Demonstration> demos;
  std::vector<TokenId> task;
  std::optional<std::size_t> fixed_capacity;
};

ContextInput context_input(const Options& opt, const LoadedModel& lm, std::size_t windows) {
  ContextInput in;
  const Tokenizer& tok = *lm.tokenizer;
  if (!opt.random_tokens.empty()) {
    const auto sizes = parse_list<std::size_t>(opt.random_tokens, "random-tokens");
    if (sizes.size() != 2) throw ValidationError("--random-tokens expects C,T");
    Rng rng(opt.seed);
    const auto draw = [&](std::size_t n) {
      std::vector<TokenId> t(n);
      for (auto& id : t) id = static_cast<TokenId>(rng.below(lm.model->config().vocab_size));
      return t;
    };
    for (std::size_t w = 0; w < windows; ++w) in.demos.push_back(draw(sizes[0]));
    in.task = draw(sizes[1]);
    in.fixed_capacity = sizes[0];
    return in;
  }
  if (!opt.demos.empty()) {
    std::ifstream file(opt.demos);
    if (!file) throw FormatError("cannot open " + opt.demos);
    std::string line;
    while (std::getline(file, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      in.demos.push_back(tok.encode(unescape(line)));
    }
    in.task = tok.encode(unescape(opt.query));
  } else if (!opt.task.empty()) {
    const Task task = load_task_option(opt, lm);
    const std::size_t k = opt.k ? *opt.k : task.spec.k ? *task.spec.k : task.train.size() / windows;
    const std::uint64_t seed = seeds_option(opt).front();
    const auto sets = sample_demo_sets(task.train.size(), k * windows, std::span(&seed, 1));
    for (const std::size_t i : sets.front()) {
      in.demos.push_back(tok.encode(render_demonstration(task.spec, task.train[i])));
    }
    const std::string prompt = opt.query.empty() ? render_query(task.spec, task.test.front()).prompt
                                                 : unescape(opt.query);
    in.task = tok.encode(prompt);
  } else {
    in.task = tok.encode(unescape(opt.query));
  }
  if (in.task.empty()) throw ValidationError("the query is empty");
  return in;
}

PackedContext pack_input(const Options& opt, const LoadedModel& lm, const ContextInput& in,
                         std::size_t windows, std::size_t reserve) {
  const std::size_t n = lm.model->config().max_positions;
  PackOptions po;
  po.windows = windows;
  po.strategy = strategy_option(opt);
  po.capacity = opt.capacity.value_or(in.fixed_capacity.value_or(window_capacity(n, reserve)));
  po.max_per_window = opt.k;
  PackedContext packed = with_task(pack_windows(in.demos, po), in.task, reserve);
  return assign_positions(std::move(packed), n);
}

void emit(const Options& opt, const std::string& text) {
  if (opt.out.empty() || opt.out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream file(opt.out, std::ios::binary);
  if (!file) throw FormatError("cannot write " + opt.out);
  file << text;
}

int cmd_pack(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const ContextInput in = context_input(opt, lm, opt.windows);
  const std::size_t reserve = opt.reserve.value_or(in.task.size());
  emit(opt, layout_report(pack_input(opt, lm, in, opt.windows, reserve)));
  return 0;
}

int cmd_score(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const ContextInput in = context_input(opt, lm, opt.windows);
  if (opt.labels.empty()) throw ValidationError("--labels a|b|c is required");
  std::vector<std::string> names;
  std::vector<std::vector<TokenId>> labels;
  std::stringstream ls(opt.labels);
  std::string item;
  std::size_t longest = 0;
  while (std::getline(ls, item, '|')) {
    names.push_back(item);
    labels.push_back(lm.tokenizer->encode(unescape(item)));
    longest = std::max(longest, labels.back().size());
  }
  const std::size_t reserve = opt.reserve.value_or(in.task.size() + longest);
  const PackedContext packed = pack_input(opt, lm, in, opt.windows, reserve);
  const EncodedContext ctx =
      encode_context(*lm.model, packed, BiasMode::parse(opt.bias), resolve_threads(opt.threads));
  std::string text = "rank\tlabel\ttotal\tnormalized\n";
  const auto ranked = score_labels(*lm.model, ctx, packed.task_tokens, labels);
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\n", ranked[r].total, ranked[r].normalized);
    text += std::to_string(r + 1) + "\t" + names[ranked[r].index] + buf;
  }
  emit(opt, text);
  return 0;
}

int cmd_generate(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const ContextInput in = context_input(opt, lm, opt.windows);
  BeamParams params;
  params.beam_width = opt.beam;
  params.length_penalty = opt.len_penalty;
  params.max_new_tokens = opt.max_new;
  if (!opt.stop.empty()) params.stop_tokens = lm.tokenizer->encode(unescape(opt.stop));
  const std::size_t reserve = opt.reserve.value_or(in.task.size() + opt.max_new);
  const PackedContext packed = pack_input(opt, lm, in, opt.windows, reserve);
  const EncodedContext ctx =
      encode_context(*lm.model, packed, BiasMode::parse(opt.bias), resolve_threads(opt.threads));
  const Generation g = generate(*lm.model, ctx, packed.task_tokens, params);
  emit(opt, lm.tokenizer->decode(g.tokens) + "\n");
  return 0;
}

EvalRequest eval_request(const Options& opt, const LoadedModel& lm, const Task& task) {
  EvalRequest req;
  req.model = lm.model.get();
  req.tokenizer = lm.tokenizer.get();
  req.task = &task;
  req.model_id = opt.model;
  req.windows = opt.windows;
  req.bias = BiasMode::parse(opt.bias);
  req.k = opt.k;
  req.seeds = seeds_option(opt);
  req.capacity = opt.capacity;
  req.task_reserve = opt.reserve;
  req.strategy = strategy_option(opt);
  req.beam.beam_width = opt.beam;
  req.beam.length_penalty = opt.len_penalty;
  req.beam.max_new_tokens = opt.max_new;
  if (!opt.stop.empty()) req.beam.stop_tokens = lm.tokenizer->encode(unescape(opt.stop));
  req.normalize_choices = opt.normalize_choices;
  req.threads = resolve_threads(opt.threads);
  return req;
}

int cmd_eval(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const Task task = load_task_option(opt, lm);
  const EvalReport report = run_eval(eval_request(opt, lm, task));
  if (!opt.out.empty() && opt.out != "-") emit(opt, report.to_json() + "\n");
  std::cout << report.summary() << "\n";
  return 0;
}

int cmd_bias_sweep(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const Task task = load_task_option(opt, lm);
  const auto b_values = parse_list<double>(opt.b_values, "b");
  const auto w_values = parse_list<std::size_t>(opt.w_values.empty() ? "3,6,9" : opt.w_values, "W");
  const auto cells = bias_sweep(eval_request(opt, lm, task), b_values, w_values);
  emit(opt, sweep_csv(cells));
  return 0;
}

int cmd_nu_curve(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const auto w_values = parse_list<std::size_t>(opt.w_values.empty() ? "1,3,6,9" : opt.w_values, "W");
  std::vector<PackedContext> contexts;
  for (const std::size_t w : w_values) {
    const ContextInput in = context_input(opt, lm, w);
    contexts.push_back(pack_input(opt, lm, in, w, opt.reserve.value_or(in.task.size())));
  }
  const auto rows = dispersion_report(*lm.model, contexts, BiasMode::parse(opt.bias), resolve_threads(opt.threads));
  emit(opt, dispersion_csv(rows));
  return 0;
}

void write_dump(const fs::path& csv, const Heatmap& map, const AttentionDumpMeta& meta) {
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw FormatError("cannot write " + csv.string());
  write_attention_csv(out, map.rows, map.query_segments, map.key_segments);
  std::ofstream side(csv.string() + ".meta", std::ios::binary);
  if (!side) throw FormatError("cannot write " + csv.string() + ".meta");
  side << attention_dump_meta_line(meta) << "\n";
}

int cmd_attn_dump(const Options& opt) {
  const LoadedModel lm = load_model(opt);
  const ContextInput in = context_input(opt, lm, opt.windows);
  const PackedContext packed = pack_input(opt, lm, in, opt.windows, opt.reserve.value_or(in.task.size()));
  const BiasMode bias = BiasMode::parse(opt.bias);
  const EncodedContext ctx = encode_context(*lm.model, packed, bias, resolve_threads(opt.threads), true);
  const QueryResult result = run_query(*lm.model, ctx, packed.task_tokens, true);
  const auto& cfg = lm.model->config();

  if (!opt.dump_attn.empty()) {
    const auto lh = parse_list<std::size_t>(opt.dump_attn, "layer,head");
    if (lh.size() != 2 || lh[0] >= cfg.n_layers || lh[1] >= cfg.n_heads) {
      throw ValidationError("--dump-attn expects layer,head within " + std::to_string(cfg.n_layers) +
                            " layers and " + std::to_string(cfg.n_heads) + " heads");
    }
    const Heatmap map = attention_heatmap(ctx, *result.trace, lh[0], lh[1]);
    const AttentionDumpMeta meta{lh[0], lh[1], packed.window_count(), bias};
    if (opt.out.empty() || opt.out == "-") {
      write_attention_csv(std::cout, map.rows, map.query_segments, map.key_segments);
    } else {
      write_dump(opt.out, map, meta);
    }
    return 0;
  }
  if (opt.out.empty()) throw ValidationError("dumping every head needs --out <directory>");
  fs::create_directories(opt.out);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const fs::path csv = fs::path(opt.out) / ("attn_L" + std::to_string(l) + "_H" + std::to_string(h) + ".csv");
      write_dump(csv, attention_heatmap(ctx, *result.trace, l, h), {l, h, packed.window_count(), bias});
    }
  }
  return 0;
}

int cmd_selftest(const Options&) {
  const SelftestResult result = run_selftest(&std::cout);
  std::cout << "properties checked: " << result.checked << ", failed: " << result.failures.size() << "\n";
  return result.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel-window in-context inference with attention recalibration"};
  app.require_subcommand(1);
  Options opt;

  const auto add_model = [&](CLI::App* sub) {
    sub->add_option("--model", opt.model, "MTW1 file, random:V=..,d=..,h=..,L=..,N=..,seed=..,scale=.. or matching:P=..,M=..,tau=..");
    sub->add_option("--heads", opt.heads, "attention heads for MTW1 files");
    sub->add_option("--vocab", opt.vocab, "token table, one token per line");
    sub->add_option("--bpe-vocab", opt.bpe_vocab, "BPE vocabulary (token<TAB>id)");
    sub->add_option("--bpe-merges", opt.bpe_merges, "BPE merges");
    sub->add_option("--threads", opt.threads, "worker threads (default: MATEICL_THREADS or all cores)");
    sub->add_option("--out", opt.out, "output path");
  };
  const auto add_context = [&](CLI::App* sub) {
    sub->add_option("-W,--windows", opt.windows, "parallel context windows")->check(CLI::PositiveNumber);
    sub->add_option("--bias", opt.bias, "pcw | mateicl | structured | fixed:<b>");
    sub->add_option("--k", opt.k, "demonstrations per window");
    sub->add_option("--capacity", opt.capacity, "per-window token budget");
    sub->add_option("--reserve", opt.reserve, "positions reserved for task tokens");
    sub->add_option("--strategy", opt.strategy, "greedy | round-robin");
    sub->add_option("--task", opt.task, "task JSON, synthetic:matching or synthetic:completion");
    sub->add_option("--template", opt.template_path, "template file overriding the task's");
    sub->add_option("--seeds", opt.n_seeds, "use seeds 0..n-1");
    sub->add_option("--seed-list", opt.seed_list, "comma-separated seeds");
    sub->add_option("--seed", opt.seed, "seed for --random-tokens");
    sub->add_option("--demos", opt.demos, "demonstrations, one per line");
    sub->add_option("--query", opt.query, "query text");
    sub->add_option("--random-tokens", opt.random_tokens, "C,T: one random window of C tokens per window, T task tokens");
  };
  const auto add_beam = [&](CLI::App* sub) {
    sub->add_option("--beam", opt.beam, "beam width")->check(CLI::PositiveNumber);
    sub->add_option("--len-penalty", opt.len_penalty, "length penalty exponent");
    sub->add_option("--max-new", opt.max_new, "generation budget")->check(CLI::PositiveNumber);
    sub->add_option("--stop", opt.stop, "stop text (its tokens end a hypothesis)");
  };

  auto* pack = app.add_subcommand("pack", "print the window layout");
  add_model(pack);
  add_context(pack);
  auto* score = app.add_subcommand("score", "rank labels for one query");
  add_model(score);
  add_context(score);
  score->add_option("--labels", opt.labels, "a|b|c");
  auto* gen = app.add_subcommand("generate", "beam-decode a continuation");
  add_model(gen);
  add_context(gen);
  add_beam(gen);
  auto* eval = app.add_subcommand("eval", "seeded evaluation over a task");
  add_model(eval);
  add_context(eval);
  add_beam(eval);
  eval->add_flag("--normalize-choices", opt.normalize_choices, "length-normalise choice scores");
  auto* sweep = app.add_subcommand("bias-sweep", "evaluate a grid of fixed biases");
  add_model(sweep);
  add_context(sweep);
  add_beam(sweep);
  sweep->add_flag("--normalize-choices", opt.normalize_choices, "length-normalise choice scores");
  sweep->add_option("--b-values", opt.b_values, "comma-separated biases");
  sweep->add_option("--w-values", opt.w_values, "comma-separated window counts");
  auto* nu = app.add_subcommand("nu-curve", "task mass and dispersion per window count");
  add_model(nu);
  add_context(nu);
  nu->add_option("--w-values", opt.w_values, "comma-separated window counts");
  auto* dump = app.add_subcommand("attn-dump", "write attention heatmaps as CSV");
  add_model(dump);
  add_context(dump);
  dump->add_option("--dump-attn", opt.dump_attn, "layer,head (default: every head into --out directory)");
  auto* self = app.add_subcommand("selftest", "run the invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 2;
  }

  const auto one_line = [](std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
  };
  try {
    if (*pack) return cmd_pack(opt);
    if (*score) return cmd_score(opt);
    if (*gen) return cmd_generate(opt);
    if (*eval) return cmd_eval(opt);
    if (*sweep) return cmd_bias_sweep(opt);
    if (*nu) return cmd_nu_curve(opt);
    if (*dump) return cmd_attn_dump(opt);
    if (*self) return cmd_selftest(opt);
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
