#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace cvr {

enum class TaskKind { WinoGAViL, Winoground, Whoops, VCR, NYCCC, GenericMCQ };

std::string_view to_string(TaskKind kind);
/// Accepts the canonical names ("winogavil", "winoground", "whoops", "vcr",
/// "nyccc", "mcq"), case-insensitively.
TaskKind parse_task_kind(std::string_view name);

struct ImageRef {
  std::string id;
  std::string uri;

  bool operator==(const ImageRef&) const = default;
};

struct Candidate {
  std::string id;
  std::string text;
  // VCR splits candidates into "answer" and "rationale" groups; empty elsewhere.
  std::string group;

  bool operator==(const Candidate&) const = default;
};

// Gold label variants. Which one applies is fixed by the task kind:
//   GenericMCQ -> OptionId, WinoGAViL -> OptionIdSet, Winoground -> PairingMap,
//   Whoops -> ReferenceText, VCR / NYCCC -> LabeledChoices.
struct OptionId {
  std::string id;
  bool operator==(const OptionId&) const = default;
};
struct OptionIdSet {
  std::set<std::string> ids;
  bool operator==(const OptionIdSet&) const = default;
};
struct PairingMap {
  std::map<int, int> caption_to_image;
  bool operator==(const PairingMap&) const = default;
};
struct ReferenceText {
  std::string text;
  bool operator==(const ReferenceText&) const = default;
};
struct LabeledChoices {
  std::map<std::string, std::string> choices;
  bool operator==(const LabeledChoices&) const = default;
};

using GoldLabel = std::variant<OptionId, OptionIdSet, PairingMap, ReferenceText, LabeledChoices>;

struct TaskInstance {
  std::string id;
  TaskKind kind = TaskKind::GenericMCQ;
  std::string task_text;
  std::vector<ImageRef> images;
  std::vector<Candidate> candidates;
  std::optional<GoldLabel> gold;
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const TaskInstance&) const = default;

  /// Candidates of one group, in declaration order.
  std::vector<const Candidate*> group(std::string_view name) const;
};

/// Throws ShapeError describing the first schema violation.
void validate(const TaskInstance& instance);

/// Parses line-delimited records. Blank lines are skipped. Errors carry the
/// 1-based line number and the offending field.
std::vector<TaskInstance> parse_dataset(std::istream& source, TaskKind kind);
std::vector<TaskInstance> parse_dataset(std::string_view source, TaskKind kind);
std::vector<TaskInstance> load_dataset(const std::string& path, TaskKind kind);

nlohmann::json to_json(const TaskInstance& instance);
TaskInstance instance_from_json(const nlohmann::json& record, TaskKind kind);
std::string serialize_dataset(const std::vector<TaskInstance>& instances);

/// Same instance, gold label removed. Used before any model sees the record.
TaskInstance without_gold(TaskInstance instance);

/// Task text followed by the enumerated candidates, lettered A, B, C, ... in
/// candidate order (per group for VCR).
std::string render_task_text(const TaskInstance& instance);

// ---------------------------------------------------------------------------
// Predictions

// Winoground answers carry both directions so text and image scores differ.
struct WinogroundAnswer {
  std::array<int, 2> caption_to_image{0, 1};
  std::array<int, 2> image_to_caption{0, 1};
  bool operator==(const WinogroundAnswer&) const = default;
};

using Answer = std::variant<OptionId, OptionIdSet, WinogroundAnswer, LabeledChoices, ReferenceText>;

enum class ParseStatus { Clean, Recovered, Failed };
std::string_view to_string(ParseStatus status);

struct Prediction {
  std::string raw_text;
  std::optional<Answer> parsed;  // present iff status != Failed
  ParseStatus status = ParseStatus::Failed;

  static Prediction clean(std::string raw, Answer answer);
  static Prediction recovered(std::string raw, Answer answer);
  static Prediction failed(std::string raw);

  bool operator==(const Prediction&) const = default;
};

nlohmann::json to_json(const Answer& answer);
Answer answer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Prediction& prediction);
Prediction prediction_from_json(const nlohmann::json& j);

/// "Answer: B" style rendering in the instance's lettering.
std::string format_answer(const TaskInstance& instance, const Answer& answer);

// ---------------------------------------------------------------------------
// Scoring

struct InstanceScore {
  TaskKind kind = TaskKind::GenericMCQ;
  std::string instance_id;
  std::map<std::string, double> components;
  // String-valued metadata copied from the instance (split tags).
  std::map<std::string, std::string> tags;

  bool operator==(const InstanceScore&) const = default;
};

/// Per-kind scoring. Failed predictions score 0 on every component. Throws
/// ShapeError if the parsed answer does not match the kind, if gold is
/// missing, or if called for Whoops (use score_judged).
InstanceScore score_instance(const TaskInstance& instance, const Prediction& prediction);

/// Whoops explanations: 1 when the judge accepted the generated explanation.
InstanceScore score_judged(const TaskInstance& instance, bool accepted);

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

struct SplitFilter {
  std::string key;
  std::string value;
  bool operator==(const SplitFilter&) const = default;
};

struct MetricValue {
  double mean = 0.0;  // percent
  std::size_t n = 0;
  bool operator==(const MetricValue&) const = default;
};

struct MetricReport {
  TaskKind kind = TaskKind::GenericMCQ;
  std::size_t n = 0;
  std::optional<SplitFilter> split;
  // Empty when n == 0: means are undefined, not zero.
  std::map<std::string, MetricValue> metrics;

  bool defined() const { return n > 0; }
  bool operator==(const MetricReport&) const = default;
};

MetricReport aggregate_scores(TaskKind kind, const std::vector<InstanceScore>& scores,
                              const std::optional<SplitFilter>& split = std::nullopt);

nlohmann::json to_json(const MetricReport& report);
std::string render_table(const MetricReport& report);

}  // namespace cvr
