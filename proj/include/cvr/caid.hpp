#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvr/gateway.hpp"
#include "cvr/prompt_template.hpp"
#include "cvr/task_model.hpp"

namespace cvr {

enum class PipelineMode { Base, BaseCaID, BaseICL, Full };

std::string_view to_string(PipelineMode mode);
/// "base", "caid", "icl", "full".
PipelineMode parse_mode(std::string_view name);
constexpr bool uses_caid(PipelineMode m) { return m == PipelineMode::BaseCaID || m == PipelineMode::Full; }
constexpr bool uses_icl(PipelineMode m) { return m == PipelineMode::BaseICL || m == PipelineMode::Full; }

/// Strict "Answer: ..." grammar first, then a recovery grammar. Never throws
/// on model output; returns a Failed prediction instead.
Prediction parse_prediction(const TaskInstance& instance, std::string_view raw);

/// First sentence ending in '?', else the first non-empty line. Strips a
/// leading "Question:" label. Empty when the text has no content.
std::string extract_first_question(std::string_view text);

/// "Image 1: ...\nImage 2: ..." in image order.
std::string render_descriptions(std::span<const std::string> descriptions);

/// Text form of an instance for retrieval and ICL examples: task text plus
/// its image descriptions.
std::string render_case_text(const TaskInstance& instance, std::span<const std::string> descriptions);

/// Answer-format instruction for the instance's kind.
std::string answer_format(const TaskInstance& instance, const TemplateSet& templates);

// In-context examples picked for one target instance.
struct IclSelection {
  std::string block;
  std::vector<std::string> exemplar_ids;
  std::vector<std::string> skipped_ids;  // dropped for unusable pseudo-labels
};

// Supplies in-context examples. Implemented by the retrieval module.
class ExemplarSource {
 public:
  virtual ~ExemplarSource() = default;
  virtual IclSelection select(const TaskInstance& target, std::span<const std::string> descriptions) = 0;
};

struct CaidOptions {
  // Refinement passes after the first prediction; the dual loop is one.
  int max_refinements = 1;
  // Ask the LLM to rewrite the follow-up question before captioning instead
  // of filling the revise template directly.
  bool llm_revise = false;
  SamplingParams sampling;
};

struct FollowupQuery {
  std::string text;
  bool fallback = false;  // LLM gave nothing usable; task text used verbatim
};

struct RefinementPass {
  Prediction prediction;  // prediction the follow-up question was asked about
  std::string followup_query;
  bool followup_fallback = false;
  std::string revised_prompt;
  std::vector<std::string> revised_descriptions;
};

struct DescriptionTrace {
  std::string instance_id;
  PipelineMode mode = PipelineMode::Base;
  std::string feature_prompt;  // generic caption prompt outside CaID modes
  bool feature_prompt_fallback = false;
  std::vector<std::string> initial_descriptions;
  std::vector<RefinementPass> refinements;
  std::optional<Prediction> final_prediction;
  IclSelection icl;

  std::optional<std::string> failed_stage;
  std::string error;

  bool ok() const { return !failed_stage.has_value(); }
  /// Descriptions the final prediction was made from.
  const std::vector<std::string>& final_descriptions() const;
  /// The intermediate prediction p of the first refinement pass, if any.
  const Prediction* intermediate_prediction() const;

  nlohmann::json to_json() const;
};

// Runs the description/prediction loop for one instance. Stateless apart
// from references; one engine can serve many threads.
class CaidEngine {
 public:
  CaidEngine(Gateway& gateway, const TemplateSet& templates, CaidOptions options = {});
  CaidEngine(Gateway&, TemplateSet&&, CaidOptions = {}) = delete;  // would dangle

  /// One TextLLM call turning the task text into a captioner prompt.
  std::string build_feature_prompt(std::string_view task_text, bool* fallback = nullptr);
  /// One Captioner call per image, sequentially in image order.
  std::vector<std::string> describe(const TaskInstance& instance, std::string_view prompt);
  std::vector<std::string> initial_descriptions(const TaskInstance& instance, std::string_view feature_prompt) {
    return describe(instance, feature_prompt);
  }
  /// One TextLLM call (plus one reprompt if the answer is unreadable).
  Prediction predict(const TaskInstance& instance, std::span<const std::string> descriptions,
                     std::string_view icl_block = {});
  /// One TextLLM call; on empty output one retry, then the task text.
  FollowupQuery generate_followup_query(std::string_view task_text, std::span<const std::string> descriptions,
                                        const Prediction& prediction);
  /// Template over (task text, query); no model call.
  std::string build_revised_prompt(std::string_view task_text, std::string_view query) const;

  /// Full pipeline for one instance. Never throws for backend or parse
  /// failures: they mark the trace failed with the stage name.
  DescriptionTrace run(const TaskInstance& instance, PipelineMode mode, ExemplarSource* retriever = nullptr);

  const CaidOptions& options() const { return options_; }
  const TemplateSet& templates() const { return templates_; }

 private:
  std::string ask(const std::vector<ChatMessage>& messages);

  Gateway& gateway_;
  const TemplateSet& templates_;
  CaidOptions options_;
};

}  // namespace cvr
