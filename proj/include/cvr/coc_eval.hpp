#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvr/gateway.hpp"
#include "cvr/prompt_template.hpp"
#include "cvr/task_model.hpp"

namespace cvr {

enum class ComparisonStep { Direct, InitialPerception, RecognizingIncongruity, ContextualAnalysis, LinkingToQuestion };
enum class Outcome { OptionABetter, OptionBBetter, Equal, Unparseable };
enum class Protocol { Direct, CoC };

inline constexpr std::array<ComparisonStep, 4> kCocSteps{
    ComparisonStep::InitialPerception, ComparisonStep::RecognizingIncongruity, ComparisonStep::ContextualAnalysis,
    ComparisonStep::LinkingToQuestion};

std::string_view to_string(ComparisonStep step);
std::string_view to_string(Outcome outcome);
std::string_view to_string(Protocol protocol);
Protocol parse_protocol(std::string_view name);
/// Template name used for a step: "direct", "step1" ... "step4".
std::string_view template_name(ComparisonStep step);

/// A swaps with B; Equal and Unparseable stay.
Outcome invert(Outcome outcome);

/// Case-insensitive whole-word scan for true / false / equal. Exactly one
/// distinct word must appear. True means Option B is better.
Outcome parse_verdict(std::string_view raw);

// Option A is the generic caption, option B the context-aware description.
struct ComparisonCase {
  std::string id;
  std::string task_text;
  std::string option_a;
  std::string option_b;
  TaskKind kind = TaskKind::GenericMCQ;

  /// Throws ConfigError when an option is empty or both are identical.
  void validate() const;
  ComparisonCase swapped() const;
};

struct ComparisonVerdict {
  ComparisonStep step = ComparisonStep::Direct;
  Outcome outcome = Outcome::Unparseable;
  std::string raw;
  bool reprompted = false;
  std::string error;  // backend failure for this step, if any

  nlohmann::json to_json() const;
};

class ComparisonJudge {
 public:
  ComparisonJudge(Gateway& gateway, const TemplateSet& templates, SamplingParams sampling = {});
  ComparisonJudge(Gateway&, TemplateSet&&, SamplingParams = {}) = delete;  // would dangle

  /// One Judge call (two when the first reply is unreadable).
  ComparisonVerdict direct_compare(const ComparisonCase& c);
  /// Four Judge calls, one per step, in step order. A failing step does not
  /// stop the others.
  std::vector<ComparisonVerdict> coc_compare(const ComparisonCase& c);
  std::vector<ComparisonVerdict> compare(const ComparisonCase& c, Protocol protocol);

  /// Generated explanation (B) against the reference (A). Accepted when the
  /// judge answers True or Equal.
  ComparisonVerdict judge_explanation(std::string_view task, std::string_view reference, std::string_view explanation);
  static bool accepted(const ComparisonVerdict& v) {
    return v.outcome == Outcome::OptionBBetter || v.outcome == Outcome::Equal;
  }

 private:
  ComparisonVerdict ask(ComparisonStep step, const std::string& prompt);

  Gateway& gateway_;
  const TemplateSet& templates_;
  SamplingParams sampling_;
};

struct BucketPercent {
  double caption_better = 0.0;
  double description_better = 0.0;
  double equal = 0.0;

  bool operator==(const BucketPercent&) const = default;
};

struct StepReport {
  ComparisonStep step = ComparisonStep::Direct;
  std::size_t total = 0;
  std::size_t parsed = 0;
  std::size_t unparsed = 0;
  std::size_t caption_better = 0;
  std::size_t description_better = 0;
  std::size_t equal = 0;
  BucketPercent percent;       // over parsed verdicts
  BucketPercent percent_all;   // over all verdicts, unparsed included
  bool flagged = false;        // no parsed verdicts; left out of the average

  bool operator==(const StepReport&) const = default;
};

struct CoCReport {
  Protocol protocol = Protocol::CoC;
  std::size_t cases = 0;
  std::size_t unparsed = 0;
  std::vector<StepReport> steps;
  // Mean of the unflagged step percentages, rounded to one decimal. Absent
  // when every step is flagged.
  std::optional<BucketPercent> average;

  bool operator==(const CoCReport&) const = default;

  /// Rows Caption Better / Description Better / Equal; one column per step
  /// plus Average.
  std::string render_table() const;
  /// One record per step, then one for the average.
  std::string to_jsonl() const;
  nlohmann::json to_json() const;
};

/// Folds per-case verdict lists. Throws ConfigError when cases ran
/// different protocols.
CoCReport aggregate_verdicts(const std::vector<std::vector<ComparisonVerdict>>& cases);

/// Rounds to one decimal, half away from zero.
double round1(double x);

}  // namespace cvr
