#include "cvr/coc_eval.hpp"

#include <cmath>
#include <cstdio>
#include <regex>
#include <set>
#include <sstream>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;

std::string_view to_string(ComparisonStep step) {
  switch (step) {
    case ComparisonStep::Direct: return "direct";
    case ComparisonStep::InitialPerception: return "initial_perception";
    case ComparisonStep::RecognizingIncongruity: return "recognizing_incongruity";
    case ComparisonStep::ContextualAnalysis: return "contextual_analysis";
    case ComparisonStep::LinkingToQuestion: return "linking_to_question";
  }
  return "unknown";
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::OptionABetter: return "option_a_better";
    case Outcome::OptionBBetter: return "option_b_better";
    case Outcome::Equal: return "equal";
    case Outcome::Unparseable: return "unparseable";
  }
  return "unknown";
}

std::string_view to_string(Protocol protocol) { return protocol == Protocol::Direct ? "direct" : "coc"; }

Protocol parse_protocol(std::string_view name) {
  const std::string n = to_lower_ascii(trim(name));
  if (n == "direct") return Protocol::Direct;
  if (n == "coc") return Protocol::CoC;
  throw ConfigError("unknown comparison protocol '" + std::string(name) + "'");
}

std::string_view template_name(ComparisonStep step) {
  switch (step) {
    case ComparisonStep::Direct: return "direct";
    case ComparisonStep::InitialPerception: return "step1";
    case ComparisonStep::RecognizingIncongruity: return "step2";
    case ComparisonStep::ContextualAnalysis: return "step3";
    case ComparisonStep::LinkingToQuestion: return "step4";
  }
  return "direct";
}

Outcome invert(Outcome outcome) {
  switch (outcome) {
    case Outcome::OptionABetter: return Outcome::OptionBBetter;
    case Outcome::OptionBBetter: return Outcome::OptionABetter;
    default: return outcome;
  }
}

Outcome parse_verdict(std::string_view raw) {
  static const std::regex word("[A-Za-z]+");
  const std::string text(raw);
  std::set<std::string> hits;
  for (std::sregex_iterator it(text.begin(), text.end(), word), end; it != end; ++it) {
    const std::string w = to_lower_ascii(it->str());
    if (w == "true" || w == "false" || w == "equal") hits.insert(w);
  }
  if (hits.size() != 1) return Outcome::Unparseable;
  const auto& w = *hits.begin();
  if (w == "true") return Outcome::OptionBBetter;
  if (w == "false") return Outcome::OptionABetter;
  return Outcome::Equal;
}

void ComparisonCase::validate() const {
  if (trim(option_a).empty() || trim(option_b).empty()) {
    throw ConfigError("comparison case '" + id + "' has an empty option");
  }
  if (trim(option_a) == trim(option_b)) throw ConfigError("comparison case '" + id + "' has identical options");
}

ComparisonCase ComparisonCase::swapped() const {
  ComparisonCase c = *this;
  std::swap(c.option_a, c.option_b);
  return c;
}

json ComparisonVerdict::to_json() const {
  json j{{"step", std::string(to_string(step))},
         {"outcome", std::string(to_string(outcome))},
         {"raw", raw},
         {"reprompted", reprompted}};
  if (!error.empty()) j["error"] = error;
  return j;
}

// ---------------------------------------------------------------------------

ComparisonJudge::ComparisonJudge(Gateway& gateway, const TemplateSet& templates, SamplingParams sampling)
    : gateway_(gateway), templates_(templates), sampling_(sampling) {}

ComparisonVerdict ComparisonJudge::ask(ComparisonStep step, const std::string& prompt) {
  ComparisonVerdict v;
  v.step = step;
  try {
    std::vector<ChatMessage> messages{{"user", prompt}};
    v.raw = gateway_.complete(Role::Judge, messages, sampling_);
    v.outcome = parse_verdict(v.raw);
    if (v.outcome == Outcome::Unparseable) {
      messages.push_back({"assistant", v.raw});
      messages.push_back({"user", templates_.get("verdict_reminder").text()});
      v.raw = gateway_.complete(Role::Judge, messages, sampling_);
      v.reprompted = true;
      v.outcome = parse_verdict(v.raw);
    }
  } catch (const std::exception& e) {
    v.outcome = Outcome::Unparseable;
    v.error = e.what();
  }
  return v;
}

ComparisonVerdict ComparisonJudge::direct_compare(const ComparisonCase& c) {
  c.validate();
  const auto prompt = templates_.get("direct").render(
      {{"task", std::string(trim(c.task_text))}, {"option_a", c.option_a}, {"option_b", c.option_b}});
  return ask(ComparisonStep::Direct, prompt);
}

std::vector<ComparisonVerdict> ComparisonJudge::coc_compare(const ComparisonCase& c) {
  c.validate();
  std::vector<ComparisonVerdict> out;
  for (auto step : kCocSteps) {
    const auto prompt = templates_.get(template_name(step))
                            .render({{"task", std::string(trim(c.task_text))},
                                     {"option_a", c.option_a},
                                     {"option_b", c.option_b}});
    out.push_back(ask(step, prompt));
  }
  return out;
}

std::vector<ComparisonVerdict> ComparisonJudge::compare(const ComparisonCase& c, Protocol protocol) {
  if (protocol == Protocol::Direct) return {direct_compare(c)};
  return coc_compare(c);
}

ComparisonVerdict ComparisonJudge::judge_explanation(std::string_view task, std::string_view reference,
                                                     std::string_view explanation) {
  if (trim(explanation).empty()) {
    ComparisonVerdict v;
    v.error = "empty explanation";
    return v;
  }
  const auto prompt = templates_.get("explanation_judge")
                          .render({{"task", std::string(trim(task))},
                                   {"reference", std::string(trim(reference))},
                                   {"explanation", std::string(trim(explanation))}});
  return ask(ComparisonStep::Direct, prompt);
}

// ---------------------------------------------------------------------------

double round1(double x) {
  const double r = std::round(std::abs(x) * 10.0 + 1e-9) / 10.0;
  return x < 0 ? -r : r;
}

CoCReport aggregate_verdicts(const std::vector<std::vector<ComparisonVerdict>>& cases) {
  CoCReport report;
  report.cases = cases.size();
  if (cases.empty()) return report;

  std::vector<ComparisonStep> steps;
  for (const auto& v : cases.front()) steps.push_back(v.step);
  for (const auto& c : cases) {
    std::vector<ComparisonStep> s;
    for (const auto& v : c) s.push_back(v.step);
    if (s != steps) throw ConfigError("all comparison cases must run the same protocol");
  }
  report.protocol = (steps.size() == 1 && steps[0] == ComparisonStep::Direct) ? Protocol::Direct : Protocol::CoC;

  for (std::size_t i = 0; i < steps.size(); ++i) {
    StepReport r;
    r.step = steps[i];
    for (const auto& c : cases) {
      ++r.total;
      switch (c[i].outcome) {
        case Outcome::OptionABetter: ++r.caption_better; break;
        case Outcome::OptionBBetter: ++r.description_better; break;
        case Outcome::Equal: ++r.equal; break;
        case Outcome::Unparseable: ++r.unparsed; break;
      }
    }
    r.parsed = r.total - r.unparsed;
    auto pct = [](std::size_t n, std::size_t d) { return d ? 100.0 * static_cast<double>(n) / static_cast<double>(d) : 0.0; };
    r.flagged = r.parsed == 0;
    r.percent = {pct(r.caption_better, r.parsed), pct(r.description_better, r.parsed), pct(r.equal, r.parsed)};
    r.percent_all = {pct(r.caption_better, r.total), pct(r.description_better, r.total), pct(r.equal, r.total)};
    report.unparsed += r.unparsed;
    report.steps.push_back(r);
  }

  BucketPercent sum;
  std::size_t used = 0;
  for (const auto& r : report.steps) {
    if (r.flagged) continue;
    sum.caption_better += r.percent.caption_better;
    sum.description_better += r.percent.description_better;
    sum.equal += r.percent.equal;
    ++used;
  }
  if (used) {
    const double n = static_cast<double>(used);
    report.average = BucketPercent{round1(sum.caption_better / n), round1(sum.description_better / n),
                                   round1(sum.equal / n)};
  }
  return report;
}

namespace {

std::string fmt1(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", round1(x));
  return buf;
}

std::string column_name(ComparisonStep step, std::size_t i) {
  return step == ComparisonStep::Direct ? "Direct" : "Step " + std::to_string(i + 1);
}

json bucket_json(const BucketPercent& b) {
  return {{"caption_better", b.caption_better}, {"description_better", b.description_better}, {"equal", b.equal}};
}

}  // namespace

std::string CoCReport::render_table() const {
  std::vector<std::string> header{""};
  for (std::size_t i = 0; i < steps.size(); ++i) header.push_back(column_name(steps[i].step, i));
  if (protocol == Protocol::CoC) header.push_back("Average");

  using Getter = double (*)(const BucketPercent&);
  const std::vector<std::pair<std::string, Getter>> rows{
      {"Caption Better", [](const BucketPercent& b) { return b.caption_better; }},
      {"Description Better", [](const BucketPercent& b) { return b.description_better; }},
      {"Equal", [](const BucketPercent& b) { return b.equal; }}};

  std::vector<std::vector<std::string>> table{header};
  for (const auto& [label, get] : rows) {
    std::vector<std::string> row{label};
    for (const auto& s : steps) row.push_back(s.flagged ? "n/a" : fmt1(get(s.percent)));
    if (protocol == Protocol::CoC) row.push_back(average ? fmt1(get(*average)) : "n/a");
    table.push_back(std::move(row));
  }
  std::vector<std::string> counts{"Unparsed"};
  for (const auto& s : steps) counts.push_back(std::to_string(s.unparsed));
  if (protocol == Protocol::CoC) counts.push_back(std::to_string(unparsed));
  table.push_back(std::move(counts));

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : table) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    out << '\n';
  }
  out << "cases: " << cases << '\n';
  return out.str();
}

json CoCReport::to_json() const {
  json j{{"protocol", std::string(to_string(protocol))}, {"cases", cases}, {"unparsed", unparsed}};
  j["steps"] = json::array();
  for (const auto& s : steps) {
    j["steps"].push_back({{"step", std::string(to_string(s.step))},
                          {"total", s.total},
                          {"parsed", s.parsed},
                          {"unparsed", s.unparsed},
                          {"flagged", s.flagged},
                          {"counts",
                           {{"caption_better", s.caption_better},
                            {"description_better", s.description_better},
                            {"equal", s.equal}}},
                          {"percent_parsed", bucket_json(s.percent)},
                          {"percent_all", bucket_json(s.percent_all)}});
  }
  j["average"] = average ? bucket_json(*average) : json(nullptr);
  return j;
}

std::string CoCReport::to_jsonl() const {
  const json j = to_json();
  std::string out;
  for (const auto& s : j["steps"]) {
    json rec = s;
    rec["protocol"] = j["protocol"];
    out += rec.dump() + '\n';
  }
  out += json{{"protocol", j["protocol"]},
              {"step", "average"},
              {"cases", cases},
              {"unparsed", unparsed},
              {"percent_parsed", j["average"]}}
             .dump() +
         '\n';
  return out;
}

}  // namespace cvr
