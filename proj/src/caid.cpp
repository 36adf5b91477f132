#include "cvr/caid.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;

std::string_view to_string(PipelineMode mode) {
  switch (mode) {
    case PipelineMode::Base: return "base";
    case PipelineMode::BaseCaID: return "caid";
    case PipelineMode::BaseICL: return "icl";
    case PipelineMode::Full: return "full";
  }
  return "unknown";
}

PipelineMode parse_mode(std::string_view name) {
  const std::string n = to_lower_ascii(trim(name));
  if (n == "base") return PipelineMode::Base;
  if (n == "caid" || n == "base+caid") return PipelineMode::BaseCaID;
  if (n == "icl" || n == "base+icl" || n == "base+cvr-icl") return PipelineMode::BaseICL;
  if (n == "full") return PipelineMode::Full;
  throw ConfigError("unknown pipeline mode '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Prediction parsing

namespace {

std::vector<std::string> lines_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    out.emplace_back(trim(line));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// Candidate id for a letter within a group, or empty.
std::string id_for_letter(const std::vector<const Candidate*>& group, const std::string& letter) {
  const std::size_t i = option_index(upper(letter));
  return (i != std::string::npos && i < group.size()) ? group[i]->id : std::string();
}

// A letter either in parentheses or followed by punctuation / end of line,
// so "the answer is a cat" does not read as option A.
constexpr const char* kLetter = R"((?:\(([a-z]{1,2})\)|([a-z]{1,2})(?=\s*(?:[.,;:!)]|$))))";

std::set<std::string> find_letters(const std::vector<std::string>& lines, const std::regex& re) {
  std::set<std::string> out;
  for (const auto& line : lines) {
    for (std::sregex_iterator it(line.begin(), line.end(), re), end; it != end; ++it) {
      for (std::size_t g = 1; g < it->size(); ++g) {
        if ((*it)[g].matched) out.insert(upper((*it)[g].str()));
      }
    }
  }
  return out;
}

std::set<std::string> ids_for(const std::vector<const Candidate*>& group, const std::set<std::string>& letters) {
  std::set<std::string> ids;
  for (const auto& l : letters) {
    if (auto id = id_for_letter(group, l); !id.empty()) ids.insert(id);
  }
  return ids;
}

// Candidates whose text occurs verbatim (case-insensitive) in the reply.
std::set<std::string> ids_by_text(const std::vector<const Candidate*>& group, std::string_view raw) {
  const std::string hay = to_lower_ascii(raw);
  std::set<std::string> ids;
  for (const auto* c : group) {
    const std::string needle = to_lower_ascii(trim(c->text));
    if (needle.size() >= 3 && hay.find(needle) != std::string::npos) ids.insert(c->id);
  }
  return ids;
}

Prediction parse_single_choice(const TaskInstance& inst, std::string_view raw) {
  const auto group = inst.group("");
  const auto lines = lines_of(raw);
  static const std::regex strict(R"(^Answer:\s*\(?([A-Z]{1,2})\)?\.?$)");
  std::set<std::string> strict_ids;
  for (const auto& line : lines) {
    std::smatch m;
    if (std::regex_match(line, m, strict)) {
      if (auto id = id_for_letter(group, m[1].str()); !id.empty()) strict_ids.insert(id);
    }
  }
  if (strict_ids.size() == 1) return Prediction::clean(std::string(raw), OptionId{*strict_ids.begin()});

  static const std::regex after_answer(std::string(R"(answer\s*(?:is|:|=)\s*(?:option\s*)?)") + kLetter,
                                       std::regex::icase | std::regex::ECMAScript);
  static const std::regex paren(R"(\(([a-z]{1,2})\))", std::regex::icase);
  static const std::regex after_option(std::string(R"(option\s+)") + kLetter, std::regex::icase);
  std::set<std::string> ids;
  for (const auto* re : {&after_answer, &paren, &after_option}) {
    const auto found = ids_for(group, find_letters(lines, *re));
    ids.insert(found.begin(), found.end());
  }
  if (ids.empty()) ids = ids_by_text(group, raw);
  if (ids.size() == 1) return Prediction::recovered(std::string(raw), OptionId{*ids.begin()});
  return Prediction::failed(std::string(raw));
}

Prediction parse_multi_choice(const TaskInstance& inst, std::string_view raw) {
  const auto group = inst.group("");
  const auto lines = lines_of(raw);
  static const std::regex strict(R"(^Answer:\s*([A-Z]{1,2}(?:\s*(?:,|and)\s*[A-Z]{1,2})*)\.?$)");
  static const std::regex letter(R"([A-Z]{1,2})");
  for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
    std::smatch m;
    if (!std::regex_match(*it, m, strict)) continue;
    const std::string list = m[1].str();
    std::set<std::string> ids;
    bool valid = true;
    for (std::sregex_iterator li(list.begin(), list.end(), letter), end; li != end; ++li) {
      auto id = id_for_letter(group, li->str());
      if (id.empty()) valid = false;
      ids.insert(id);
    }
    if (valid && !ids.empty()) return Prediction::clean(std::string(raw), OptionIdSet{ids});
  }

  static const std::regex paren(R"(\(([a-z]{1,2})\))", std::regex::icase);
  static const std::regex listed(R"(answers?\s*(?:are|is|:)\s*([a-z]{1,2}(?:\s*(?:,|and|&)\s*[a-z]{1,2})+))",
                                 std::regex::icase);
  std::set<std::string> letters = find_letters(lines, paren);
  for (const auto& line : lines) {
    for (std::sregex_iterator it(line.begin(), line.end(), listed), end; it != end; ++it) {
      static const std::regex word_letter(R"(\b[A-Z]{1,2}\b)");
      const std::string list = upper((*it)[1].str());
      for (std::sregex_iterator li(list.begin(), list.end(), word_letter), e2; li != e2; ++li) {
        letters.insert(li->str());
      }
    }
  }
  auto ids = ids_for(group, letters);
  if (ids.empty()) ids = ids_by_text(group, raw);
  if (!ids.empty()) return Prediction::recovered(std::string(raw), OptionIdSet{ids});
  return Prediction::failed(std::string(raw));
}

Prediction parse_winoground(std::string_view raw) {
  const auto lines = lines_of(raw);
  static const std::regex strict(
      R"(^Answer:\s*A\s*->\s*([12])\s*,\s*B\s*->\s*([12])\s*;\s*1\s*->\s*([AB])\s*,\s*2\s*->\s*([AB])\s*\.?$)");
  for (const auto& line : lines) {
    std::smatch m;
    if (std::regex_match(line, m, strict)) {
      WinogroundAnswer a;
      a.caption_to_image = {std::stoi(m[1].str()) - 1, std::stoi(m[2].str()) - 1};
      a.image_to_caption = {m[3].str()[0] - 'A', m[4].str()[0] - 'A'};
      return Prediction::clean(std::string(raw), a);
    }
  }

  static const std::regex c2i(R"((?:caption\s*)?\b([ab])\s*(?:->|=>|:|=|-|matches|goes with)\s*(?:image\s*)?([12])\b)",
                              std::regex::icase);
  static const std::regex i2c(R"((?:image\s*)?\b([12])\s*(?:->|=>|:|=|-|matches|goes with)\s*(?:caption\s*)?([ab])\b)",
                              std::regex::icase);
  std::map<int, std::set<int>> cap, img;
  for (const auto& line : lines) {
    for (std::sregex_iterator it(line.begin(), line.end(), c2i), end; it != end; ++it) {
      cap[std::toupper(static_cast<unsigned char>((*it)[1].str()[0])) - 'A'].insert(std::stoi((*it)[2].str()) - 1);
    }
    for (std::sregex_iterator it(line.begin(), line.end(), i2c), end; it != end; ++it) {
      img[std::stoi((*it)[1].str()) - 1].insert(std::toupper(static_cast<unsigned char>((*it)[2].str()[0])) - 'A');
    }
  }
  auto complete = [](const std::map<int, std::set<int>>& m) {
    return m.size() == 2 && m.count(0) && m.count(1) && m.at(0).size() == 1 && m.at(1).size() == 1;
  };
  if (complete(cap) && complete(img)) {
    WinogroundAnswer a;
    a.caption_to_image = {*cap[0].begin(), *cap[1].begin()};
    a.image_to_caption = {*img[0].begin(), *img[1].begin()};
    return Prediction::recovered(std::string(raw), a);
  }
  return Prediction::failed(std::string(raw));
}

Prediction parse_vcr(const TaskInstance& inst, std::string_view raw) {
  const auto answers = inst.group("answer");
  const auto rationales = inst.group("rationale");
  const auto lines = lines_of(raw);
  static const std::regex strict_a(R"(^Answer:\s*\(?([A-Z])\)?\.?$)");
  static const std::regex strict_r(R"(^Rationale:\s*\(?([A-Z])\)?\.?$)");
  std::set<std::string> sa, sr;
  for (const auto& line : lines) {
    std::smatch m;
    if (std::regex_match(line, m, strict_a)) {
      if (auto id = id_for_letter(answers, m[1].str()); !id.empty()) sa.insert(id);
    } else if (std::regex_match(line, m, strict_r)) {
      if (auto id = id_for_letter(rationales, m[1].str()); !id.empty()) sr.insert(id);
    }
  }
  if (sa.size() == 1 && sr.size() == 1) {
    return Prediction::clean(std::string(raw), LabeledChoices{{{"answer", *sa.begin()}, {"rationale", *sr.begin()}}});
  }
  static const std::regex loose_a(std::string(R"(answer\s*(?:is|:|=)\s*)") + kLetter, std::regex::icase);
  static const std::regex loose_r(std::string(R"(rationale\s*(?:is|:|=)\s*)") + kLetter, std::regex::icase);
  const auto ra = ids_for(answers, find_letters(lines, loose_a));
  const auto rr = ids_for(rationales, find_letters(lines, loose_r));
  if (ra.size() == 1 && rr.size() == 1) {
    return Prediction::recovered(std::string(raw), LabeledChoices{{{"answer", *ra.begin()}, {"rationale", *rr.begin()}}});
  }
  return Prediction::failed(std::string(raw));
}

Prediction parse_explanation(std::string_view raw) {
  std::string_view body = trim(raw);
  if (body.empty()) return Prediction::failed(std::string(raw));
  if (to_lower_ascii(body.substr(0, 7)) == "answer:") {
    const auto text = trim(body.substr(7));
    if (text.empty()) return Prediction::failed(std::string(raw));
    return Prediction::clean(std::string(raw), ReferenceText{std::string(text)});
  }
  return Prediction::recovered(std::string(raw), ReferenceText{std::string(body)});
}

}  // namespace

Prediction parse_prediction(const TaskInstance& inst, std::string_view raw) {
  switch (inst.kind) {
    case TaskKind::GenericMCQ:
    case TaskKind::NYCCC: return parse_single_choice(inst, raw);
    case TaskKind::WinoGAViL: return parse_multi_choice(inst, raw);
    case TaskKind::Winoground: return parse_winoground(raw);
    case TaskKind::VCR: return parse_vcr(inst, raw);
    case TaskKind::Whoops: return parse_explanation(raw);
  }
  return Prediction::failed(std::string(raw));
}

std::string extract_first_question(std::string_view text) {
  auto clean = [](std::string_view s) {
    s = trim(s);
    for (std::string_view label : {"follow-up question:", "followup question:", "question:", "q:"}) {
      if (to_lower_ascii(s.substr(0, label.size())) == label) {
        s = trim(s.substr(label.size()));
        break;
      }
    }
    while (!s.empty() && (s.front() == '"' || s.front() == '\'')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == '"' || s.back() == '\'')) s.remove_suffix(1);
    return std::string(trim(s));
  };

  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '?') {
      auto q = clean(text.substr(start, i + 1 - start));
      if (!q.empty() && q != "?") return q;
      start = i + 1;
    } else if (c == '.' || c == '!' || c == '\n') {
      start = i + 1;
    }
  }
  for (const auto& line : lines_of(text)) {
    if (auto q = clean(line); !q.empty()) return q;
  }
  return {};
}

std::string render_descriptions(std::span<const std::string> descriptions) {
  std::string out;
  for (std::size_t i = 0; i < descriptions.size(); ++i) {
    if (i) out += '\n';
    out += "Image " + std::to_string(i + 1) + ": " + std::string(trim(descriptions[i]));
  }
  return out;
}

std::string render_case_text(const TaskInstance& instance, std::span<const std::string> descriptions) {
  return render_task_text(instance) + "\n\nImage descriptions:\n" + render_descriptions(descriptions);
}

std::string answer_format(const TaskInstance& instance, const TemplateSet& templates) {
  switch (instance.kind) {
    case TaskKind::GenericMCQ:
    case TaskKind::NYCCC: return templates.get("format_mcq").text();
    case TaskKind::WinoGAViL: return templates.get("format_winogavil").text();
    case TaskKind::Winoground: return templates.get("format_winoground").text();
    case TaskKind::VCR: return templates.get("format_vcr").text();
    case TaskKind::Whoops: return templates.get("format_whoops").text();
  }
  return {};
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& DescriptionTrace::final_descriptions() const {
  return refinements.empty() ? initial_descriptions : refinements.back().revised_descriptions;
}

const Prediction* DescriptionTrace::intermediate_prediction() const {
  return refinements.empty() ? nullptr : &refinements.front().prediction;
}

json DescriptionTrace::to_json() const {
  json j;
  j["instance_id"] = instance_id;
  j["mode"] = std::string(to_string(mode));
  j["feature_prompt"] = feature_prompt;
  j["feature_prompt_fallback"] = feature_prompt_fallback;
  j["initial_descriptions"] = initial_descriptions;
  j["refinements"] = json::array();
  for (const auto& r : refinements) {
    j["refinements"].push_back({{"prediction", cvr::to_json(r.prediction)},
                                {"followup_query", r.followup_query},
                                {"followup_fallback", r.followup_fallback},
                                {"revised_prompt", r.revised_prompt},
                                {"revised_descriptions", r.revised_descriptions}});
  }
  j["final_prediction"] = final_prediction ? cvr::to_json(*final_prediction) : json(nullptr);
  j["icl"] = {{"exemplar_ids", icl.exemplar_ids}, {"skipped_ids", icl.skipped_ids}};
  j["failed_stage"] = failed_stage ? json(*failed_stage) : json(nullptr);
  if (failed_stage) j["error"] = error;
  return j;
}

CaidEngine::CaidEngine(Gateway& gateway, const TemplateSet& templates, CaidOptions options)
    : gateway_(gateway), templates_(templates), options_(options) {
  if (options_.max_refinements < 0) throw ConfigError("max_refinements must be >= 0");
}

std::string CaidEngine::ask(const std::vector<ChatMessage>& messages) {
  return gateway_.complete(Role::TextLLM, messages, options_.sampling);
}

std::string CaidEngine::build_feature_prompt(std::string_view task_text, bool* fallback) {
  const auto prompt = templates_.get("feature").render({{"task_text", std::string(trim(task_text))}});
  std::string out(trim(ask({{"user", prompt}})));
  if (fallback) *fallback = out.empty();
  if (out.empty()) out = templates_.get("generic_caption").text();
  return out;
}

std::vector<std::string> CaidEngine::describe(const TaskInstance& instance, std::string_view prompt) {
  std::vector<std::string> out;
  out.reserve(instance.images.size());
  for (const auto& image : instance.images) {
    try {
      out.emplace_back(trim(gateway_.caption(image, prompt)));
    } catch (const std::exception& e) {
      throw Error("image '" + image.id + "': " + e.what());
    }
  }
  return out;
}

Prediction CaidEngine::predict(const TaskInstance& instance, std::span<const std::string> descriptions,
                               std::string_view icl_block) {
  if (descriptions.size() != instance.images.size()) {
    throw ShapeError("expected " + std::to_string(instance.images.size()) + " descriptions, got " +
                     std::to_string(descriptions.size()));
  }
  const std::string format = answer_format(instance, templates_);
  const bool with_icl = !trim(icl_block).empty();
  const auto prompt = templates_.get(with_icl ? "predict_icl" : "predict")
                          .render({{"task_text", render_task_text(instance)},
                                   {"descriptions", render_descriptions(descriptions)},
                                   {"icl_block", std::string(icl_block)},
                                   {"answer_format", format}});
  std::vector<ChatMessage> messages{{"user", prompt}};
  std::string raw = ask(messages);
  Prediction p = parse_prediction(instance, raw);
  if (p.status != ParseStatus::Failed) return p;

  messages.push_back({"assistant", raw});
  messages.push_back({"user", templates_.get("format_reminder").render({{"answer_format", format}})});
  return parse_prediction(instance, ask(messages));
}

FollowupQuery CaidEngine::generate_followup_query(std::string_view task_text,
                                                  std::span<const std::string> descriptions,
                                                  const Prediction& prediction) {
  const auto prompt = templates_.get("followup").render({{"task_text", std::string(trim(task_text))},
                                                         {"descriptions", render_descriptions(descriptions)},
                                                         {"prediction", std::string(trim(prediction.raw_text))}});
  std::vector<ChatMessage> messages{{"user", prompt}};
  std::string raw = ask(messages);
  std::string q = extract_first_question(raw);
  if (q.empty()) {
    messages.push_back({"assistant", raw});
    messages.push_back({"user", templates_.get("followup_retry").text()});
    q = extract_first_question(ask(messages));
  }
  if (q.empty()) return {std::string(trim(task_text)), true};
  return {q, false};
}

std::string CaidEngine::build_revised_prompt(std::string_view task_text, std::string_view query) const {
  if (trim(query).empty()) throw ShapeError("revised prompt needs a non-empty query");
  return templates_.get("revise").render(
      {{"task_text", std::string(trim(task_text))}, {"query", std::string(trim(query))}});
}

DescriptionTrace CaidEngine::run(const TaskInstance& instance, PipelineMode mode, ExemplarSource* retriever) {
  DescriptionTrace trace;
  trace.instance_id = instance.id;
  trace.mode = mode;
  const TaskInstance inst = without_gold(instance);
  const std::string task_text = render_task_text(inst);
  std::string stage = "feature_prompt";
  try {
    if (uses_caid(mode)) {
      trace.feature_prompt = build_feature_prompt(task_text, &trace.feature_prompt_fallback);
    } else {
      trace.feature_prompt = templates_.get("generic_caption").text();
    }

    stage = "initial_descriptions";
    trace.initial_descriptions = describe(inst, trace.feature_prompt);

    if (uses_icl(mode)) {
      stage = "retrieval";
      if (!retriever) throw ConfigError("mode " + std::string(to_string(mode)) + " needs an exemplar source");
      trace.icl = retriever->select(inst, trace.initial_descriptions);
    }

    stage = "predict";
    Prediction current = predict(inst, trace.initial_descriptions, trace.icl.block);

    if (uses_caid(mode)) {
      std::vector<std::string> descriptions = trace.initial_descriptions;
      for (int pass = 0; pass < options_.max_refinements; ++pass) {
        RefinementPass r;
        r.prediction = current;

        stage = "followup";
        auto q = generate_followup_query(task_text, descriptions, current);
        r.followup_query = q.text;
        r.followup_fallback = q.fallback;

        stage = "revised_prompt";
        if (options_.llm_revise) {
          const auto ask_prompt =
              templates_.get("revise_llm").render({{"task_text", task_text}, {"query", r.followup_query}});
          r.revised_prompt = std::string(trim(ask({{"user", ask_prompt}})));
          if (r.revised_prompt.empty()) r.revised_prompt = build_revised_prompt(task_text, r.followup_query);
        } else {
          r.revised_prompt = build_revised_prompt(task_text, r.followup_query);
        }

        stage = "revised_descriptions";
        r.revised_descriptions = describe(inst, r.revised_prompt);

        stage = "final_predict";
        current = predict(inst, r.revised_descriptions, trace.icl.block);
        descriptions = r.revised_descriptions;
        trace.refinements.push_back(std::move(r));
      }
    }
    trace.final_prediction = std::move(current);
  } catch (const std::exception& e) {
    trace.failed_stage = stage;
    trace.error = e.what();
  }
  return trace;
}

}  // namespace cvr
