#include "cvr/task_model.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <sstream>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;

namespace {

// Schema violation tied to a record field; parse_dataset adds the line.
class FieldError : public ShapeError {
 public:
  FieldError(std::string field, const std::string& what)
      : ShapeError("field '" + field + "': " + what), field_(std::move(field)), what_(what) {}
  const std::string& field() const noexcept { return field_; }
  const std::string& detail() const noexcept { return what_; }

 private:
  std::string field_;
  std::string what_;
};

[[noreturn]] void violation(const std::string& field, const std::string& what) {
  throw FieldError(field, "schema violation: " + what);
}

bool needs_candidates(TaskKind kind) { return kind != TaskKind::Whoops; }

const std::string& require_string(const json& obj, const std::string& key, const std::string& field) {
  auto it = obj.find(key);
  if (it == obj.end()) violation(field, "missing");
  if (!it->is_string()) violation(field, "expected string");
  return it->get_ref<const std::string&>();
}

bool has_candidate(const TaskInstance& inst, const std::string& id, std::string_view group = {}) {
  return std::any_of(inst.candidates.begin(), inst.candidates.end(), [&](const Candidate& c) {
    return c.id == id && (group.empty() || c.group == group);
  });
}

GoldLabel gold_from_json(const json& g, TaskKind kind) {
  if (!g.is_object()) violation("gold", "expected object");
  switch (kind) {
    case TaskKind::GenericMCQ:
      return OptionId{require_string(g, "option_id", "gold.option_id")};
    case TaskKind::WinoGAViL: {
      auto it = g.find("option_ids");
      if (it == g.end() || !it->is_array()) violation("gold.option_ids", "expected array");
      OptionIdSet set;
      for (const auto& v : *it) {
        if (!v.is_string()) violation("gold.option_ids", "expected string ids");
        set.ids.insert(v.get<std::string>());
      }
      return set;
    }
    case TaskKind::Winoground: {
      PairingMap pm;
      for (const auto& [k, v] : g.items()) {
        if (k != "0" && k != "1") violation("gold", "pairing keys must be \"0\" and \"1\"");
        if (!v.is_number_integer()) violation("gold." + k, "expected image index");
        pm.caption_to_image[k == "0" ? 0 : 1] = v.get<int>();
      }
      return pm;
    }
    case TaskKind::Whoops:
      return ReferenceText{require_string(g, "reference", "gold.reference")};
    case TaskKind::VCR:
    case TaskKind::NYCCC: {
      LabeledChoices lc;
      for (const auto& [k, v] : g.items()) {
        if (!v.is_string()) violation("gold." + k, "expected option id");
        lc.choices[k] = v.get<std::string>();
      }
      return lc;
    }
  }
  violation("gold", "unknown kind");
}

json gold_to_json(const GoldLabel& gold) {
  return std::visit(
      [](const auto& g) -> json {
        using T = std::decay_t<decltype(g)>;
        if constexpr (std::is_same_v<T, OptionId>) {
          return {{"option_id", g.id}};
        } else if constexpr (std::is_same_v<T, OptionIdSet>) {
          return {{"option_ids", g.ids}};
        } else if constexpr (std::is_same_v<T, PairingMap>) {
          json j = json::object();
          for (const auto& [c, i] : g.caption_to_image) j[std::to_string(c)] = i;
          return j;
        } else if constexpr (std::is_same_v<T, ReferenceText>) {
          return {{"reference", g.text}};
        } else {
          return json(g.choices);
        }
      },
      gold);
}

void validate_fields(const TaskInstance& inst) {
  if (inst.id.empty()) violation("id", "empty id");
  if (inst.images.empty()) violation("images", "at least one image required");
  {
    std::set<std::string> seen;
    for (const auto& img : inst.images) {
      if (img.id.empty()) violation("images.id", "empty image id");
      if (!seen.insert(img.id).second) violation("images.id", "duplicate image id '" + img.id + "'");
    }
  }
  {
    std::set<std::string> seen;
    for (const auto& c : inst.candidates) {
      if (c.id.empty()) violation("candidates.id", "empty candidate id");
      if (!seen.insert(c.id).second) violation("candidates.id", "duplicate candidate id '" + c.id + "'");
    }
  }
  if (needs_candidates(inst.kind) && inst.candidates.empty()) {
    violation("candidates", "at least one candidate required");
  }

  switch (inst.kind) {
    case TaskKind::Winoground:
      if (inst.images.size() != 2) violation("images", "Winoground requires exactly 2 images");
      if (inst.candidates.size() != 2) violation("candidates", "Winoground requires exactly 2 captions");
      break;
    case TaskKind::VCR:
      for (const auto& c : inst.candidates) {
        if (c.group != "answer" && c.group != "rationale") {
          violation("candidates.group", "VCR candidates must be in group answer or rationale");
        }
      }
      if (inst.group("answer").empty()) violation("candidates", "VCR requires answer candidates");
      if (inst.group("rationale").empty()) violation("candidates", "VCR requires rationale candidates");
      break;
    case TaskKind::WinoGAViL:
      if (auto it = inst.meta.find("winogavil_split"); it != inst.meta.end()) {
        if (!it->is_string() || (*it != "5/6" && *it != "10/12" && *it != "swow")) {
          violation("meta.winogavil_split", "expected \"5/6\", \"10/12\" or \"swow\"");
        }
      }
      break;
    default:
      break;
  }

  if (!inst.gold) return;
  const GoldLabel& gold = *inst.gold;
  switch (inst.kind) {
    case TaskKind::GenericMCQ: {
      const auto* g = std::get_if<OptionId>(&gold);
      if (!g) violation("gold", "expected option_id");
      if (!has_candidate(inst, g->id)) violation("gold.option_id", "unknown candidate '" + g->id + "'");
      break;
    }
    case TaskKind::WinoGAViL: {
      const auto* g = std::get_if<OptionIdSet>(&gold);
      if (!g) violation("gold", "expected option_ids");
      if (g->ids.empty()) violation("gold.option_ids", "empty gold set");
      for (const auto& id : g->ids) {
        if (!has_candidate(inst, id)) violation("gold.option_ids", "unknown candidate '" + id + "'");
      }
      break;
    }
    case TaskKind::Winoground: {
      const auto* g = std::get_if<PairingMap>(&gold);
      if (!g) violation("gold", "expected pairing map");
      const auto& m = g->caption_to_image;
      if (m.size() != 2 || !m.count(0) || !m.count(1)) violation("gold", "pairing must map captions 0 and 1");
      const int a = m.at(0), b = m.at(1);
      if (a < 0 || a > 1 || b < 0 || b > 1 || a == b) violation("gold", "pairing must be a bijection over {0,1}");
      break;
    }
    case TaskKind::Whoops: {
      const auto* g = std::get_if<ReferenceText>(&gold);
      if (!g) violation("gold", "expected reference");
      if (trim(g->text).empty()) violation("gold.reference", "empty reference");
      break;
    }
    case TaskKind::VCR: {
      const auto* g = std::get_if<LabeledChoices>(&gold);
      if (!g) violation("gold", "expected labeled choices");
      auto a = g->choices.find("answer");
      auto r = g->choices.find("rationale");
      if (a == g->choices.end()) violation("gold.answer", "missing");
      if (r == g->choices.end()) violation("gold.rationale", "missing");
      if (!has_candidate(inst, a->second, "answer")) violation("gold.answer", "unknown answer '" + a->second + "'");
      if (!has_candidate(inst, r->second, "rationale")) {
        violation("gold.rationale", "unknown rationale '" + r->second + "'");
      }
      break;
    }
    case TaskKind::NYCCC: {
      const auto* g = std::get_if<LabeledChoices>(&gold);
      if (!g) violation("gold", "expected labeled choices");
      if (!g->choices.count("match")) violation("gold.match", "missing");
      for (const auto& [k, v] : g->choices) {
        if (!has_candidate(inst, v)) violation("gold." + k, "unknown candidate '" + v + "'");
      }
      break;
    }
  }
}


std::string letter_of(const TaskInstance& inst, const std::string& id) {
  // Letters run per group so VCR answers and rationales both start at A.
  for (const auto& c : inst.candidates) {
    if (c.id != id) continue;
    const auto members = inst.group(c.group);
    for (std::size_t i = 0; i < members.size(); ++i) {
      if (members[i]->id == id) return option_letter(i);
    }
  }
  return "?";
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::WinoGAViL: return "winogavil";
    case TaskKind::Winoground: return "winoground";
    case TaskKind::Whoops: return "whoops";
    case TaskKind::VCR: return "vcr";
    case TaskKind::NYCCC: return "nyccc";
    case TaskKind::GenericMCQ: return "mcq";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  const std::string n = to_lower_ascii(trim(name));
  for (TaskKind k : {TaskKind::WinoGAViL, TaskKind::Winoground, TaskKind::Whoops, TaskKind::VCR,
                     TaskKind::NYCCC, TaskKind::GenericMCQ}) {
    if (n == to_string(k)) return k;
  }
  if (n == "genericmcq" || n == "generic_mcq") return TaskKind::GenericMCQ;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

std::string_view to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::Clean: return "clean";
    case ParseStatus::Recovered: return "recovered";
    case ParseStatus::Failed: return "failed";
  }
  return "unknown";
}

std::vector<const Candidate*> TaskInstance::group(std::string_view name) const {
  std::vector<const Candidate*> out;
  for (const auto& c : candidates) {
    if (c.group == name) out.push_back(&c);
  }
  return out;
}

void validate(const TaskInstance& instance) { validate_fields(instance); }

TaskInstance instance_from_json(const json& record, TaskKind kind) {
  if (!record.is_object()) violation("record", "expected object");
  TaskInstance inst;
  inst.kind = kind;
  inst.id = require_string(record, "id", "id");
  if (auto it = record.find("kind"); it != record.end()) {
    if (!it->is_string()) violation("kind", "expected string");
    TaskKind declared;
    try {
      declared = parse_task_kind(it->get<std::string>());
    } catch (const ConfigError&) {
      violation("kind", "unknown kind '" + it->get<std::string>() + "'");
    }
    if (declared != kind) {
      violation("kind", "record kind '" + it->get<std::string>() + "' does not match '" +
                            std::string(to_string(kind)) + "'");
    }
  }
  inst.task_text = require_string(record, "task_text", "task_text");

  auto imgs = record.find("images");
  if (imgs == record.end() || !imgs->is_array()) violation("images", "expected array");
  for (const auto& img : *imgs) {
    if (!img.is_object()) violation("images", "expected {id, uri} objects");
    inst.images.push_back({require_string(img, "id", "images.id"), require_string(img, "uri", "images.uri")});
  }

  if (auto cands = record.find("candidates"); cands != record.end()) {
    if (!cands->is_array()) violation("candidates", "expected array");
    for (const auto& c : *cands) {
      if (!c.is_object()) violation("candidates", "expected {id, text} objects");
      Candidate cand{require_string(c, "id", "candidates.id"), require_string(c, "text", "candidates.text"), {}};
      if (auto g = c.find("group"); g != c.end()) {
        if (!g->is_string()) violation("candidates.group", "expected string");
        cand.group = g->get<std::string>();
      }
      inst.candidates.push_back(std::move(cand));
    }
  }

  if (auto g = record.find("gold"); g != record.end() && !g->is_null()) {
    inst.gold = gold_from_json(*g, kind);
  }
  if (auto m = record.find("meta"); m != record.end() && !m->is_null()) {
    if (!m->is_object()) violation("meta", "expected object");
    inst.meta = *m;
  }
  validate_fields(inst);
  return inst;
}

std::vector<TaskInstance> parse_dataset(std::istream& source, TaskKind kind) {
  std::vector<TaskInstance> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetError(line_no, "record", std::string("malformed JSON: ") + e.what());
    }
    TaskInstance inst;
    try {
      inst = instance_from_json(record, kind);
    } catch (const FieldError& e) {
      throw DatasetError(line_no, e.field(), e.detail());
    }
    if (!ids.insert(inst.id).second) throw DatasetError(line_no, "id", "duplicate id '" + inst.id + "'");
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<TaskInstance> parse_dataset(std::string_view source, TaskKind kind) {
  std::istringstream in{std::string(source)};
  return parse_dataset(in, kind);
}

std::vector<TaskInstance> load_dataset(const std::string& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return parse_dataset(in, kind);
}

json to_json(const TaskInstance& inst) {
  json j;
  j["id"] = inst.id;
  j["kind"] = std::string(to_string(inst.kind));
  j["task_text"] = inst.task_text;
  j["images"] = json::array();
  for (const auto& img : inst.images) j["images"].push_back({{"id", img.id}, {"uri", img.uri}});
  j["candidates"] = json::array();
  for (const auto& c : inst.candidates) {
    json cj{{"id", c.id}, {"text", c.text}};
    if (!c.group.empty()) cj["group"] = c.group;
    j["candidates"].push_back(std::move(cj));
  }
  if (inst.gold) j["gold"] = gold_to_json(*inst.gold);
  if (!inst.meta.empty()) j["meta"] = inst.meta;
  return j;
}

std::string serialize_dataset(const std::vector<TaskInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += to_json(inst).dump();
    out += '\n';
  }
  return out;
}

TaskInstance without_gold(TaskInstance instance) {
  instance.gold.reset();
  return instance;
}

std::string render_task_text(const TaskInstance& inst) {
  std::string out = std::string(trim(inst.task_text));
  auto list = [&](const std::string& heading, const std::vector<const Candidate*>& cands) {
    if (cands.empty()) return;
    out += "\n\n" + heading + ":";
    for (std::size_t i = 0; i < cands.size(); ++i) {
      out += "\n" + option_letter(i) + ". " + std::string(trim(cands[i]->text));
    }
  };
  switch (inst.kind) {
    case TaskKind::VCR:
      list("Answers", inst.group("answer"));
      list("Rationales", inst.group("rationale"));
      break;
    case TaskKind::Winoground:
      list("Captions", inst.group(""));
      break;
    default:
      list("Options", inst.group(""));
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------

Prediction Prediction::clean(std::string raw, Answer answer) {
  return {std::move(raw), std::move(answer), ParseStatus::Clean};
}
Prediction Prediction::recovered(std::string raw, Answer answer) {
  return {std::move(raw), std::move(answer), ParseStatus::Recovered};
}
Prediction Prediction::failed(std::string raw) { return {std::move(raw), std::nullopt, ParseStatus::Failed}; }

json to_json(const Answer& answer) {
  return std::visit(
      [](const auto& a) -> json {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, OptionId>) {
          return {{"option_id", a.id}};
        } else if constexpr (std::is_same_v<T, OptionIdSet>) {
          return {{"option_ids", a.ids}};
        } else if constexpr (std::is_same_v<T, WinogroundAnswer>) {
          return {{"caption_to_image", a.caption_to_image}, {"image_to_caption", a.image_to_caption}};
        } else if constexpr (std::is_same_v<T, LabeledChoices>) {
          return {{"choices", a.choices}};
        } else {
          return {{"text", a.text}};
        }
      },
      answer);
}

Answer answer_from_json(const json& j) {
  if (j.contains("option_id")) return OptionId{j.at("option_id").get<std::string>()};
  if (j.contains("option_ids")) return OptionIdSet{j.at("option_ids").get<std::set<std::string>>()};
  if (j.contains("caption_to_image")) {
    return WinogroundAnswer{j.at("caption_to_image").get<std::array<int, 2>>(),
                            j.at("image_to_caption").get<std::array<int, 2>>()};
  }
  if (j.contains("choices")) return LabeledChoices{j.at("choices").get<std::map<std::string, std::string>>()};
  if (j.contains("text")) return ReferenceText{j.at("text").get<std::string>()};
  throw ShapeError("unrecognized answer object: " + j.dump());
}

json to_json(const Prediction& p) {
  json j{{"raw_text", p.raw_text}, {"status", std::string(to_string(p.status))}};
  j["parsed"] = p.parsed ? to_json(*p.parsed) : json(nullptr);
  return j;
}

Prediction prediction_from_json(const json& j) {
  const auto status = j.at("status").get<std::string>();
  auto raw = j.at("raw_text").get<std::string>();
  if (status == "failed") return Prediction::failed(std::move(raw));
  Answer a = answer_from_json(j.at("parsed"));
  if (status == "clean") return Prediction::clean(std::move(raw), std::move(a));
  if (status == "recovered") return Prediction::recovered(std::move(raw), std::move(a));
  throw ShapeError("unknown parse status '" + status + "'");
}

std::string format_answer(const TaskInstance& inst, const Answer& answer) {
  return std::visit(
      [&](const auto& a) -> std::string {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, OptionId>) {
          return "Answer: " + letter_of(inst, a.id);
        } else if constexpr (std::is_same_v<T, OptionIdSet>) {
          std::vector<std::string> letters;
          for (const auto& c : inst.candidates) {
            if (a.ids.count(c.id)) letters.push_back(letter_of(inst, c.id));
          }
          return "Answer: " + join(letters, ", ");
        } else if constexpr (std::is_same_v<T, WinogroundAnswer>) {
          auto L = [](int i) { return option_letter(static_cast<std::size_t>(i)); };
          auto N = [](int i) { return std::to_string(i + 1); };
          return "Answer: A->" + N(a.caption_to_image[0]) + ", B->" + N(a.caption_to_image[1]) + "; 1->" +
                 L(a.image_to_caption[0]) + ", 2->" + L(a.image_to_caption[1]);
        } else if constexpr (std::is_same_v<T, LabeledChoices>) {
          if (inst.kind == TaskKind::VCR) {
            std::string out;
            if (auto it = a.choices.find("answer"); it != a.choices.end()) {
              out += "Answer: " + letter_of(inst, it->second);
            }
            if (auto it = a.choices.find("rationale"); it != a.choices.end()) {
              out += (out.empty() ? "" : "\n") + std::string("Rationale: ") + letter_of(inst, it->second);
            }
            return out;
          }
          std::vector<std::string> parts;
          for (const auto& [k, v] : a.choices) parts.push_back(k + ": " + letter_of(inst, v));
          return join(parts, "\n");
        } else {
          return "Answer: " + std::string(trim(a.text));
        }
      },
      answer);
}

// ---------------------------------------------------------------------------

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.count(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

std::map<std::string, std::string> tags_of(const TaskInstance& inst) {
  std::map<std::string, std::string> tags;
  for (const auto& [k, v] : inst.meta.items()) {
    if (v.is_string()) tags[k] = v.get<std::string>();
  }
  return tags;
}

template <class T>
const T& expect_answer(const Prediction& p, TaskKind kind) {
  const auto* a = std::get_if<T>(&*p.parsed);
  if (!a) throw ShapeError("prediction shape does not match kind " + std::string(to_string(kind)));
  return *a;
}

}  // namespace

InstanceScore score_instance(const TaskInstance& inst, const Prediction& pred) {
  if (inst.kind == TaskKind::Whoops) {
    throw ShapeError("Whoops explanations are judged; use score_judged");
  }
  if (!inst.gold) throw ShapeError("instance '" + inst.id + "' has no gold label");
  if (pred.parsed.has_value() == (pred.status == ParseStatus::Failed)) {
    throw ShapeError("prediction parse status inconsistent with parsed value");
  }
  InstanceScore s{inst.kind, inst.id, {}, tags_of(inst)};
  const bool failed = pred.status == ParseStatus::Failed;

  switch (inst.kind) {
    case TaskKind::GenericMCQ: {
      const auto& gold = std::get<OptionId>(*inst.gold);
      s.components["correct"] = failed ? 0.0 : (expect_answer<OptionId>(pred, inst.kind).id == gold.id ? 1.0 : 0.0);
      break;
    }
    case TaskKind::NYCCC: {
      const auto& gold = std::get<LabeledChoices>(*inst.gold);
      const std::string picked = failed ? std::string() : expect_answer<OptionId>(pred, inst.kind).id;
      for (const auto& [variant, id] : gold.choices) {
        s.components[variant] = (!failed && picked == id) ? 1.0 : 0.0;
      }
      break;
    }
    case TaskKind::WinoGAViL: {
      const auto& gold = std::get<OptionIdSet>(*inst.gold);
      s.components["jaccard"] = failed ? 0.0 : jaccard(expect_answer<OptionIdSet>(pred, inst.kind).ids, gold.ids);
      break;
    }
    case TaskKind::Winoground: {
      const auto& gold = std::get<PairingMap>(*inst.gold).caption_to_image;
      double text = 0.0, image = 0.0;
      if (!failed) {
        const auto& a = expect_answer<WinogroundAnswer>(pred, inst.kind);
        text = (a.caption_to_image[0] == gold.at(0) && a.caption_to_image[1] == gold.at(1)) ? 1.0 : 0.0;
        // image j belongs to the caption c with gold[c] == j
        bool ok = true;
        for (int c = 0; c < 2; ++c) ok = ok && a.image_to_caption[static_cast<std::size_t>(gold.at(c))] == c;
        image = ok ? 1.0 : 0.0;
      }
      s.components["text"] = text;
      s.components["image"] = image;
      s.components["group"] = text * image;
      break;
    }
    case TaskKind::VCR: {
      const auto& gold = std::get<LabeledChoices>(*inst.gold).choices;
      double qa = 0.0, qar = 0.0;
      if (!failed) {
        const auto& a = expect_answer<LabeledChoices>(pred, inst.kind).choices;
        auto pick = [&](const char* key) {
          auto it = a.find(key);
          return it == a.end() ? std::string() : it->second;
        };
        qa = pick("answer") == gold.at("answer") ? 1.0 : 0.0;
        qar = pick("rationale") == gold.at("rationale") ? 1.0 : 0.0;
      }
      s.components["q_a"] = qa;
      s.components["qa_r"] = qar;
      s.components["q_ar"] = qa * qar;
      break;
    }
    case TaskKind::Whoops:
      break;
  }
  return s;
}

InstanceScore score_judged(const TaskInstance& inst, bool accepted) {
  return {inst.kind, inst.id, {{"gpt4_rate", accepted ? 1.0 : 0.0}}, tags_of(inst)};
}

MetricReport aggregate_scores(TaskKind kind, const std::vector<InstanceScore>& scores,
                              const std::optional<SplitFilter>& split) {
  MetricReport report;
  report.kind = kind;
  report.split = split;
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& s : scores) {
    if (s.kind != kind) {
      throw ShapeError("mixed kinds in aggregation: expected " + std::string(to_string(kind)) + ", got " +
                       std::string(to_string(s.kind)));
    }
    if (split) {
      auto it = s.tags.find(split->key);
      if (it == s.tags.end() || it->second != split->value) continue;
    }
    ++report.n;
    for (const auto& [name, value] : s.components) {
      sums[name] += value;
      ++counts[name];
    }
  }
  for (const auto& [name, sum] : sums) {
    report.metrics[name] = {sum / static_cast<double>(counts[name]) * 100.0, counts[name]};
  }
  return report;
}

json to_json(const MetricReport& report) {
  json j;
  j["kind"] = std::string(to_string(report.kind));
  j["n"] = report.n;
  j["split"] = report.split ? json{{"key", report.split->key}, {"value", report.split->value}} : json(nullptr);
  j["metrics"] = json::object();
  for (const auto& [name, v] : report.metrics) j["metrics"][name] = {{"mean", v.mean}, {"n", v.n}};
  return j;
}

std::string render_table(const MetricReport& report) {
  std::ostringstream out;
  out << "kind: " << to_string(report.kind) << "  n: " << report.n;
  if (report.split) out << "  split: " << report.split->key << "=" << report.split->value;
  out << '\n';
  if (!report.defined()) {
    out << "(no instances; metrics undefined)\n";
    return out.str();
  }
  std::size_t width = 6;
  for (const auto& [name, v] : report.metrics) width = std::max(width, name.size());
  for (const auto& [name, v] : report.metrics) {
    out << name << std::string(width - name.size() + 2, ' ') << pct(v.mean) << '\n';
  }
  return out.str();
}

}  // namespace cvr
