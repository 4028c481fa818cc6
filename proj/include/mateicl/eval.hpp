#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mateicl/inference.hpp"
#include "mateicl/model.hpp"
#include "mateicl/tokenizer.hpp"
#include "mateicl/windowing.hpp"

namespace mateicl {

enum class TaskKind { kClassification, kMultipleChoice, kExtraction };
enum class Metric { kAccuracy, kExactMatch, kF1 };

std::string to_string(TaskKind kind);
std::string to_string(Metric metric);
TaskKind parse_task_kind(const std::string& text);
Metric parse_metric(const std::string& text);

struct Example {
  std::map<std::string, std::string> fields;  // string fields usable in templates
  std::string label;                          // classification
  std::vector<std::string> choices;           // multiple choice
  std::size_t answer = 0;                     // index into choices
  std::vector<std::string> answers;           // extraction golds
};

struct TaskSpec {
  std::string name = "task";
  TaskKind kind = TaskKind::kClassification;
  /// `{field}` placeholders; the answer placeholder must come last.
  std::string template_text;
  std::vector<std::string> labels;  // classification label set
  Metric metric = Metric::kAccuracy;
  /// Demonstrations per window; unset means the whole training pool split
  /// evenly across the windows.
  std::optional<std::size_t> k;
  std::string separator = "\n";     // appended to every rendered demonstration
  /// Placeholder that receives the answer; empty means the kind's default
  /// ("label", "answer" or "answers").
  std::string answer_key;

  std::string answer_field() const;
  /// Throws ValidationError on an inconsistent spec.
  void validate() const;
};

struct Task {
  TaskSpec spec;
  std::vector<Example> train;
  std::vector<Example> test;
};

/// Literal `{field}` substitution; the two-character sequence `\n` becomes a
/// newline. Throws TemplateError naming the first missing placeholder.
std::string render_template(const std::string& tmpl, const std::map<std::string, std::string>& fields);

/// The text rendered for an example as a demonstration (answer filled in).
std::string render_demonstration(const TaskSpec& spec, const Example& example);

/// Query prompt (template up to the answer placeholder) and the text that
/// would complete it. A trailing space on the prompt moves onto the answer.
struct QueryText {
  std::string prompt;
  std::vector<std::string> candidates;  // labels or choices; one gold answer for extraction
};
QueryText render_query(const TaskSpec& spec, const Example& example);

/// JSONL rows: classification {"text","label"}; multiple choice
/// {"question","choices","answer"}; extraction {"context","question","answers"}.
/// Other string members become template fields.
std::vector<Example> load_jsonl(const std::filesystem::path& path, TaskKind kind);
std::vector<Example> parse_jsonl(std::istream& in, TaskKind kind);

struct TemplateFile {
  std::string template_text;
  std::vector<std::string> labels;  // from a "labels: a|b|c" line
};
TemplateFile parse_template_file(const std::string& content);
TemplateFile load_template_file(const std::filesystem::path& path);

/// JSON task description: name, kind, template or template_file, labels,
/// metric, k, separator, train, test (paths relative to the spec file).
Task load_task(const std::filesystem::path& path);

/// Pattern -> label retrieval for build_matching_model vocabularies: every
/// pattern appears `repeats` times in the pool and once in the test set. k is
/// left unset, so each seed uses the whole pool.
Task synthetic_matching_task(const MatchingModel& model, std::size_t repeats);
/// Same mapping posed as multiple choice over all label texts.
Task synthetic_completion_task(const MatchingModel& model, std::size_t repeats);

/// One index set per seed, drawn without replacement (partial Fisher-Yates).
/// Throws DomainError when pool_size < k_total.
std::vector<std::vector<std::size_t>> sample_demo_sets(std::size_t pool_size, std::size_t k_total,
                                                       std::span<const std::uint64_t> seeds);
/// Seed list 0, 1, ..., n-1 offset by `base`.
std::vector<std::uint64_t> seed_list(std::size_t n, std::uint64_t base = 0);

/// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(const std::string& text);
bool metric_em(const std::string& prediction, const std::string& gold);
double metric_f1(const std::string& prediction, const std::string& gold);
/// Percentage of positions where prediction equals gold. Throws ShapeError on length mismatch.
double metric_accuracy(std::span<const std::string> predictions, std::span<const std::string> golds);

struct EvalReport {
  std::string task;
  std::string model_id;
  std::size_t windows = 1;
  /// Effective recalibration: "pcw" whenever the requested mode leaves the
  /// weights untouched at this window count (b absent or 1).
  std::string bias;
  std::optional<double> bias_factor;
  std::size_t k = 0;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<double> scores;  // percent, one per seed
  double mean = 0.0;
  double std = 0.0;  // population

  /// "MM.M±S.S".
  std::string summary() const;
  std::string to_json() const;
};

/// Mean and population standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);
std::string format_mean_std(double mean, double std);
/// Inverse of format_mean_std; throws FormatError on anything else.
std::pair<double, double> parse_mean_std(const std::string& text);

struct EvalRequest {
  const Model* model = nullptr;
  const Tokenizer* tokenizer = nullptr;
  const Task* task = nullptr;
  std::string model_id = "model";
  std::size_t windows = 1;
  BiasMode bias = BiasMode::mateicl();
  std::optional<std::size_t> k;  // overrides the task's k
  std::vector<std::uint64_t> seeds;
  std::optional<std::size_t> capacity;      // per-window budget override
  std::optional<std::size_t> task_reserve;  // default: longest query + answer
  PackStrategy strategy = PackStrategy::kGreedyFill;
  BeamParams beam;
  bool normalize_choices = false;
  unsigned threads = 1;
};

EvalReport run_eval(const EvalRequest& request);

struct SweepCell {
  double b = 1.0;
  std::size_t windows = 1;
  EvalReport report;
};

/// Fixed-bias grid; every cell reuses `base` with bias = fixed(b), W = windows.
std::vector<SweepCell> bias_sweep(const EvalRequest& base, std::span<const double> b_values,
                                  std::span<const std::size_t> w_values);
/// Header "b,W,mean,std".
std::string sweep_csv(std::span<const SweepCell> cells);

struct DispersionRow {
  std::size_t windows = 1;
  std::size_t layer = 0;
  std::size_t head = 0;
  double task_mass = 0.0;  // mean post-bias task mass over task rows
  double nu = 0.0;         // mean pre-bias demonstration share over task rows
};

/// For each packed context (positions assigned, task tokens attached), runs
/// the task pass with traces and averages over task rows per layer and head.
std::vector<DispersionRow> dispersion_report(const Model& model,
                                             std::span<const PackedContext> contexts,
                                             BiasMode bias, unsigned threads = 1);
/// Header "W,layer,head,task_mass,nu".
std::string dispersion_csv(std::span<const DispersionRow> rows);

}  // namespace mateicl
