#include "mateicl/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "mateicl/error.hpp"
#include "mateicl/parallel.hpp"
#include "mateicl/rng.hpp"

namespace mateicl {

using json = nlohmann::json;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kMultipleChoice: return "multiple_choice";
    case TaskKind::kExtraction: return "extraction";
  }
  return "classification";
}

std::string to_string(Metric metric) {
  switch (metric) {
    case Metric::kAccuracy: return "accuracy";
    case Metric::kExactMatch: return "em";
    case Metric::kF1: return "f1";
  }
  return "accuracy";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "classification") return TaskKind::kClassification;
  if (text == "multiple_choice") return TaskKind::kMultipleChoice;
  if (text == "extraction") return TaskKind::kExtraction;
  throw ValidationError("unknown task kind '" + text + "'");
}

Metric parse_metric(const std::string& text) {
  if (text == "accuracy") return Metric::kAccuracy;
  if (text == "em") return Metric::kExactMatch;
  if (text == "f1") return Metric::kF1;
  throw ValidationError("unknown metric '" + text + "'");
}

std::string TaskSpec::answer_field() const {
  if (!answer_key.empty()) return answer_key;
  switch (kind) {
    case TaskKind::kClassification: return "label";
    case TaskKind::kMultipleChoice: return "answer";
    case TaskKind::kExtraction: return "answers";
  }
  return "label";
}

void TaskSpec::validate() const {
  if (kind == TaskKind::kClassification && labels.empty()) {
    throw ValidationError("task '" + name + "': classification needs a nonempty label set");
  }
  if (k && *k == 0) throw ValidationError("task '" + name + "': k must be positive");
  const std::string placeholder = "{" + answer_field() + "}";
  const auto at = template_text.find(placeholder);
  if (at == std::string::npos) {
    throw ValidationError("task '" + name + "': template has no " + placeholder + " placeholder");
  }
  if (template_text.find('{', at + placeholder.size()) != std::string::npos) {
    throw ValidationError("task '" + name + "': " + placeholder + " must be the last placeholder");
  }
  if (kind == TaskKind::kClassification && metric != Metric::kAccuracy) {
    throw ValidationError("task '" + name + "': classification is scored by accuracy");
  }
  if (kind == TaskKind::kMultipleChoice && metric != Metric::kAccuracy) {
    throw ValidationError("task '" + name + "': multiple choice is scored by accuracy");
  }
}

std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '\\' && i + 1 < tmpl.size() && tmpl[i + 1] == 'n') {
      out += '\n';
      i += 2;
    } else if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close == std::string::npos) {
        out.append(tmpl, i, std::string::npos);
        break;
      }
      const std::string name = tmpl.substr(i + 1, close - i - 1);
      const auto it = fields.find(name);
      if (it == fields.end()) throw TemplateError("missing template field '" + name + "'");
      out += it->second;
      i = close + 1;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

namespace {

std::string gold_answer(const TaskSpec& spec, const Example& ex) {
  switch (spec.kind) {
    case TaskKind::kClassification:
      return ex.label;
    case TaskKind::kMultipleChoice:
      if (ex.answer >= ex.choices.size()) {
        throw ValidationError("answer index " + std::to_string(ex.answer) + " is out of range for " +
                              std::to_string(ex.choices.size()) + " choices");
      }
      return ex.choices[ex.answer];
    case TaskKind::kExtraction:
      if (ex.answers.empty()) throw ValidationError("extraction example has no gold answers");
      return ex.answers.front();
  }
  return {};
}

std::map<std::string, std::string> with_answer(const TaskSpec& spec, const Example& ex,
                                               const std::string& answer) {
  auto fields = ex.fields;
  fields[spec.answer_field()] = answer;
  return fields;
}

}  // namespace

std::string render_demonstration(const TaskSpec& spec, const Example& example) {
  return render_template(spec.template_text, with_answer(spec, example, gold_answer(spec, example))) +
         spec.separator;
}

QueryText render_query(const TaskSpec& spec, const Example& example) {
  const std::string placeholder = "{" + spec.answer_field() + "}";
  const auto at = spec.template_text.find(placeholder);
  if (at == std::string::npos) throw TemplateError("template has no " + placeholder + " placeholder");
  QueryText q;
  q.prompt = render_template(spec.template_text.substr(0, at), example.fields);
  switch (spec.kind) {
    case TaskKind::kClassification: q.candidates = spec.labels; break;
    case TaskKind::kMultipleChoice: q.candidates = example.choices; break;
    case TaskKind::kExtraction: q.candidates = {gold_answer(spec, example)}; break;
  }
  if (!q.prompt.empty() && q.prompt.back() == ' ') {
    q.prompt.pop_back();
    for (auto& c : q.candidates) c.insert(c.begin(), ' ');
  }
  return q;
}

std::vector<Example> parse_jsonl(std::istream& in, TaskKind kind) {
  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!row.is_object()) throw FormatError(where + ": expected a JSON object");
    Example ex;
    for (const auto& [key, value] : row.items()) {
      if (value.is_string()) ex.fields[key] = value.get<std::string>();
    }
    const auto need = [&](const char* key) -> const json& {
      if (!row.contains(key)) throw FormatError(where + ": missing \"" + key + "\"");
      return row.at(key);
    };
    try {
      switch (kind) {
        case TaskKind::kClassification:
          need("text").get<std::string>();
          ex.label = need("label").get<std::string>();
          break;
        case TaskKind::kMultipleChoice:
          need("question").get<std::string>();
          ex.choices = need("choices").get<std::vector<std::string>>();
          ex.answer = need("answer").get<std::size_t>();
          if (ex.answer >= ex.choices.size()) {
            throw FormatError(where + ": answer index out of range");
          }
          break;
        case TaskKind::kExtraction:
          need("context").get<std::string>();
          need("question").get<std::string>();
          ex.answers = need("answers").get<std::vector<std::string>>();
          if (ex.answers.empty()) throw FormatError(where + ": \"answers\" is empty");
          break;
      }
    } catch (const json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_jsonl(const std::filesystem::path& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return parse_jsonl(in, kind);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

TemplateFile parse_template_file(const std::string& content) {
  TemplateFile out;
  std::istringstream in(content);
  std::string line;
  std::vector<std::string> body;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("labels:", 0) == 0) {
      std::string rest = line.substr(7);
      const auto first = rest.find_first_not_of(' ');
      rest = first == std::string::npos ? "" : rest.substr(first);
      std::size_t start = 0;
      while (start <= rest.size()) {
        const auto bar = rest.find('|', start);
        out.labels.push_back(rest.substr(start, bar == std::string::npos ? std::string::npos : bar - start));
        if (bar == std::string::npos) break;
        start = bar + 1;
      }
    } else {
      body.push_back(line);
    }
  }
  while (!body.empty() && body.back().empty()) body.pop_back();
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (i) out.template_text += '\n';
    out.template_text += body[i];
  }
  return out;
}

TemplateFile load_template_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return parse_template_file(std::string(std::istreambuf_iterator<char>(in), {}));
}

Task load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const auto dir = path.parent_path();
  Task task;
  TaskSpec& spec = task.spec;
  try {
    spec.name = doc.value("name", path.stem().string());
    spec.kind = parse_task_kind(doc.value("kind", std::string("classification")));
    spec.metric = parse_metric(doc.value("metric", std::string("accuracy")));
    if (doc.contains("k")) spec.k = doc.at("k").get<std::size_t>();
    spec.separator = doc.value("separator", std::string("\n"));
    spec.answer_key = doc.value("answer_field", std::string());
    if (doc.contains("template_file")) {
      TemplateFile tf = load_template_file(dir / doc.at("template_file").get<std::string>());
      spec.template_text = std::move(tf.template_text);
      spec.labels = std::move(tf.labels);
    }
    if (doc.contains("template")) spec.template_text = doc.at("template").get<std::string>();
    if (doc.contains("labels")) spec.labels = doc.at("labels").get<std::vector<std::string>>();
    if (!doc.contains("train") || !doc.contains("test")) {
      throw FormatError(path.string() + ": \"train\" and \"test\" are required");
    }
    task.train = load_jsonl(dir / doc.at("train").get<std::string>(), spec.kind);
    task.test = load_jsonl(dir / doc.at("test").get<std::string>(), spec.kind);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  spec.validate();
  return task;
}

namespace {

std::size_t mapped_label(std::size_t pattern, std::size_t n_labels) { return pattern % n_labels; }

}  // namespace

Task synthetic_matching_task(const MatchingModel& model, std::size_t repeats) {
  if (repeats == 0) throw DomainError("repeats must be positive");
  Task task;
  task.spec.name = "synthetic:matching";
  task.spec.kind = TaskKind::kClassification;
  task.spec.template_text = "{text}{label}";
  task.spec.separator = "";
  for (std::size_t l = 0; l < model.n_labels; ++l) task.spec.labels.push_back(model.label_text(l));
  const auto example = [&](std::size_t p) {
    Example ex;
    ex.fields["text"] = model.pattern_text(p);
    ex.label = model.label_text(mapped_label(p, model.n_labels));
    return ex;
  };
  for (std::size_t r = 0; r < repeats; ++r) {
    for (std::size_t p = 0; p < model.n_patterns; ++p) task.train.push_back(example(p));
  }
  for (std::size_t p = 0; p < model.n_patterns; ++p) task.test.push_back(example(p));
  return task;
}

Task synthetic_completion_task(const MatchingModel& model, std::size_t repeats) {
  if (repeats == 0) throw DomainError("repeats must be positive");
  Task task;
  task.spec.name = "synthetic:completion";
  task.spec.kind = TaskKind::kMultipleChoice;
  task.spec.template_text = "{question}{answer}";
  task.spec.separator = "";
  std::vector<std::string> choices;
  for (std::size_t l = 0; l < model.n_labels; ++l) choices.push_back(model.label_text(l));
  const auto example = [&](std::size_t p) {
    Example ex;
    ex.fields["question"] = model.pattern_text(p);
    ex.choices = choices;
    ex.answer = mapped_label(p, model.n_labels);
    return ex;
  };
  for (std::size_t r = 0; r < repeats; ++r) {
    for (std::size_t p = 0; p < model.n_patterns; ++p) task.train.push_back(example(p));
  }
  for (std::size_t p = 0; p < model.n_patterns; ++p) task.test.push_back(example(p));
  return task;
}

std::vector<std::vector<std::size_t>> sample_demo_sets(std::size_t pool_size, std::size_t k_total,
                                                       std::span<const std::uint64_t> seeds) {
  if (pool_size < k_total) {
    throw DomainError("pool of " + std::to_string(pool_size) + " examples cannot supply " +
                      std::to_string(k_total) + " demonstrations");
  }
  std::vector<std::vector<std::size_t>> sets;
  sets.reserve(seeds.size());
  for (const std::uint64_t seed : seeds) {
    Rng rng(seed);
    std::vector<std::size_t> order(pool_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = 0; i < k_total; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool_size - i));
      std::swap(order[i], order[j]);
    }
    order.resize(k_total);
    sets.push_back(std::move(order));
  }
  return sets;
}

std::vector<std::uint64_t> seed_list(std::size_t n, std::uint64_t base) {
  std::vector<std::uint64_t> seeds(n);
  std::iota(seeds.begin(), seeds.end(), base);
  return seeds;
}

std::string normalize_answer(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (const char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::ispunct(u)) continue;
    cleaned += static_cast<char>(std::tolower(u));
  }
  std::istringstream words(cleaned);
  std::string word, out;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

bool metric_em(const std::string& prediction, const std::string& gold) {
  return normalize_answer(prediction) == normalize_answer(gold);
}

double metric_f1(const std::string& prediction, const std::string& gold) {
  const auto split = [](const std::string& s) {
    std::istringstream in(normalize_answer(s));
    std::vector<std::string> tokens{std::istream_iterator<std::string>(in), {}};
    std::sort(tokens.begin(), tokens.end());
    return tokens;
  };
  const auto pred = split(prediction);
  const auto ref = split(gold);
  if (pred.empty() || ref.empty()) return pred.empty() && ref.empty() ? 1.0 : 0.0;
  std::vector<std::string> common;
  std::set_intersection(pred.begin(), pred.end(), ref.begin(), ref.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double precision = static_cast<double>(common.size()) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(common.size()) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

double metric_accuracy(std::span<const std::string> predictions, std::span<const std::string> golds) {
  if (predictions.size() != golds.size()) {
    throw ShapeError("metric_accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(golds.size()) + " golds");
  }
  if (golds.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(golds.size());
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) throw DomainError("mean_std of an empty list");
  double sum = 0.0;
  for (const double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f\xC2\xB1%.1f", mean, std);
  return buf;
}

std::pair<double, double> parse_mean_std(const std::string& text) {
  const std::string sep = "\xC2\xB1";
  const auto at = text.find(sep);
  if (at == std::string::npos) throw FormatError("expected MM.M±S.S, got '" + text + "'");
  const auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size()) throw FormatError("expected MM.M±S.S, got '" + text + "'");
    return v;
  };
  return {number(text.substr(0, at)), number(text.substr(at + sep.size()))};
}

std::string EvalReport::summary() const { return format_mean_std(mean, std); }

std::string EvalReport::to_json() const {
  json doc;
  doc["task"] = task;
  doc["model"] = model_id;
  doc["windows"] = windows;
  doc["bias"] = bias;
  doc["bias_factor"] = bias_factor ? json(*bias_factor) : json(nullptr);
  doc["k"] = k;
  doc["metric"] = metric;
  doc["seeds"] = seeds;
  doc["scores"] = scores;
  doc["mean"] = mean;
  doc["std"] = std;
  doc["summary"] = summary();
  return doc.dump(2);
}

namespace {

struct PreparedQuery {
  std::vector<TokenId> prompt;
  std::vector<std::vector<TokenId>> candidates;
};

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Score in [0, 1] for one test example.
double score_example(const EvalRequest& req, const EncodedContext& context, const Example& ex,
                     const PreparedQuery& q) {
  const Model& model = *req.model;
  const TaskSpec& spec = req.task->spec;
  switch (spec.kind) {
    case TaskKind::kClassification: {
      const auto ranked = score_labels(model, context, q.prompt, q.candidates);
      return spec.labels[ranked.front().index] == ex.label ? 1.0 : 0.0;
    }
    case TaskKind::kMultipleChoice: {
      std::size_t best = 0;
      double best_score = -INFINITY;
      for (std::size_t c = 0; c < q.candidates.size(); ++c) {
        const double s = score_choice(model, context, q.prompt, q.candidates[c], req.normalize_choices);
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      return best == ex.answer ? 1.0 : 0.0;
    }
    case TaskKind::kExtraction: {
      const Generation g = generate(model, context, q.prompt, req.beam);
      const std::string text = trimmed(req.tokenizer->decode(g.tokens));
      double best = 0.0;
      for (const auto& gold : ex.answers) {
        best = std::max(best, spec.metric == Metric::kF1 ? metric_f1(text, gold)
                                                         : (metric_em(text, gold) ? 1.0 : 0.0));
      }
      return best;
    }
  }
  return 0.0;
}

}  // namespace

EvalReport run_eval(const EvalRequest& req) {
  if (!req.model || !req.tokenizer || !req.task) throw ContractError("run_eval: model, tokenizer and task are required");
  if (req.seeds.empty()) throw DomainError("run_eval needs at least one seed");
  if (req.windows == 0) throw DomainError("at least one window is required");
  const Task& task = *req.task;
  const TaskSpec& spec = task.spec;
  spec.validate();
  if (task.test.empty()) throw DomainError("task '" + spec.name + "' has no test examples");
  const Model& model = *req.model;
  const Tokenizer& tok = *req.tokenizer;
  const std::size_t k = req.k ? *req.k : spec.k ? *spec.k : task.train.size() / req.windows;
  if (k == 0) {
    throw DomainError("k must be positive (pool of " + std::to_string(task.train.size()) + " for " +
                      std::to_string(req.windows) + " windows)");
  }

  std::vector<PreparedQuery> queries(task.test.size());
  std::size_t reserve = 0;
  for (std::size_t i = 0; i < task.test.size(); ++i) {
    const QueryText text = render_query(spec, task.test[i]);
    queries[i].prompt = tok.encode(text.prompt);
    if (queries[i].prompt.empty()) {
      throw DomainError("test example " + std::to_string(i) + " renders to an empty query");
    }
    std::size_t longest = 0;
    for (const auto& c : text.candidates) {
      queries[i].candidates.push_back(tok.encode(c));
      longest = std::max(longest, queries[i].candidates.back().size());
    }
    if (spec.kind == TaskKind::kExtraction) longest = req.beam.max_new_tokens;
    reserve = std::max(reserve, queries[i].prompt.size() + longest);
  }
  if (req.task_reserve) {
    if (*req.task_reserve < reserve) {
      throw CapacityError("task reserve " + std::to_string(*req.task_reserve) +
                          " is below the longest query plus answer (" + std::to_string(reserve) + ")");
    }
    reserve = *req.task_reserve;
  }
  const std::size_t capacity =
      req.capacity.value_or(window_capacity(model.config().max_positions, reserve));

  std::vector<Demonstration> pool(task.train.size());
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    pool[i] = tok.encode(render_demonstration(spec, task.train[i]));
  }

  EvalReport report;
  report.task = spec.name;
  report.model_id = req.model_id;
  report.windows = req.windows;
  const auto factor = bias_value(req.bias, req.windows);
  if (factor && *factor != 1.0) {
    report.bias = req.bias.to_string();
    report.bias_factor = factor;
  } else {
    report.bias = BiasMode::pcw().to_string();
  }
  report.k = k;
  report.metric = to_string(spec.metric);
  report.seeds = req.seeds;

  const auto sets = sample_demo_sets(pool.size(), k * req.windows, req.seeds);
  for (std::size_t s = 0; s < sets.size(); ++s) {
    try {
      std::vector<Demonstration> demos;
      demos.reserve(sets[s].size());
      for (const std::size_t idx : sets[s]) demos.push_back(pool[idx]);
      PackOptions options;
      options.capacity = capacity;
      options.windows = req.windows;
      options.strategy = req.strategy;
      options.max_per_window = k;
      PackedContext packed = with_task(pack_windows(demos, options), {}, reserve);
      packed = assign_positions(std::move(packed), model.config().max_positions);
      const EncodedContext context = encode_context(model, packed, req.bias, req.threads);

      std::vector<double> per_example(task.test.size(), 0.0);
      parallel_for(task.test.size(), req.threads, [&](std::size_t i) {
        per_example[i] = score_example(req, context, task.test[i], queries[i]);
      });
      double total = 0.0;
      for (const double v : per_example) total += v;
      report.scores.push_back(100.0 * total / static_cast<double>(per_example.size()));
    } catch (const Error& e) {
      throw Error(e.kind(), "seed index " + std::to_string(s) + " (seed " +
                                std::to_string(req.seeds[s]) + "): " + e.what());
    }
  }
  std::tie(report.mean, report.std) = mean_std(report.scores);
  return report;
}

std::vector<SweepCell> bias_sweep(const EvalRequest& base, std::span<const double> b_values,
                                  std::span<const std::size_t> w_values) {
  std::vector<SweepCell> cells;
  cells.reserve(b_values.size() * w_values.size());
  for (const double b : b_values) {
    for (const std::size_t w : w_values) {
      EvalRequest req = base;
      req.bias = BiasMode::fixed(b);
      req.windows = w;
      cells.push_back({b, w, run_eval(req)});
    }
  }
  return cells;
}

std::string sweep_csv(std::span<const SweepCell> cells) {
  std::string out = "b,W,mean,std\n";
  char buf[128];
  for (const auto& c : cells) {
    std::snprintf(buf, sizeof buf, "%g,%zu,%.4f,%.4f\n", c.b, c.windows, c.report.mean, c.report.std);
    out += buf;
  }
  return out;
}

std::vector<DispersionRow> dispersion_report(const Model& model,
                                             std::span<const PackedContext> contexts,
                                             BiasMode bias, unsigned threads) {
  std::vector<DispersionRow> rows;
  const auto& cfg = model.config();
  for (const PackedContext& packed : contexts) {
    if (packed.task_tokens.empty()) throw DomainError("dispersion_report needs task tokens");
    const EncodedContext context = encode_context(model, packed, bias, threads);
    const QueryResult result = run_query(model, context, packed.task_tokens, true);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const HeadTrace& trace = result.trace->at(l, h);
        DispersionRow row;
        row.windows = packed.window_count();
        row.layer = l;
        row.head = h;
        for (std::size_t q = 0; q < trace.task_mass.size(); ++q) {
          row.task_mass += trace.task_mass[q];
          row.nu += trace.nu[q];
        }
        row.task_mass /= static_cast<double>(trace.task_mass.size());
        row.nu /= static_cast<double>(trace.nu.size());
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string dispersion_csv(std::span<const DispersionRow> rows) {
  std::string out = "W,layer,head,task_mass,nu\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.10g,%.10g\n", r.windows, r.layer, r.head, r.task_mass, r.nu);
    out += buf;
  }
  return out;
}

}  // namespace mateicl
