#include "cvr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

#include "cvr/error.hpp"
#include "cvr/http_backend.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void parallel_for(std::size_t n, std::size_t concurrency, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::max<std::size_t>(1, std::min(concurrency, n));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  if (threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

CallSummary summarize(const std::vector<CallRecord>& records) {
  CallSummary s;
  for (const auto& r : records) {
    if (r.cache_hit) {
      ++s.cached;
      ++s.cached_by_role[r.role];
    } else {
      ++s.live;
      ++s.live_by_role[r.role];
    }
  }
  return s;
}

std::string templates_digest(const TemplateSet& templates) {
  json j = json::object();
  for (const auto& name : templates.names()) j[name] = templates.get(name).text();
  return sha256_hex(j.dump());
}

std::string format_value(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Backends

BackendsConfig BackendsConfig::from_json(const json& j) {
  BackendsConfig cfg;
  const json& list = j.is_array() ? j : j.at("backends");
  std::set<Role> seen;
  for (const auto& e : list) {
    BackendSpec spec;
    try {
      spec.profile.role = parse_role(e.at("role").get<std::string>());
      spec.type = e.value("type", std::string("http"));
      spec.profile.endpoint = e.value("endpoint", std::string());
      spec.profile.model_name = e.value("model", std::string());
      spec.profile.timeout = std::chrono::milliseconds(static_cast<long long>(e.value("timeout_s", 60.0) * 1000.0));
      spec.profile.max_retries = e.value("max_retries", 2);
      spec.profile.max_in_flight = e.value("max_in_flight", 4);
      spec.profile.backoff = std::chrono::milliseconds(e.value("backoff_ms", 200));
      spec.profile.api_key_env = e.value("api_key_env", std::string());
    } catch (const json::exception& ex) {
      throw ConfigError(std::string("backend entry ") + e.dump() + ": " + ex.what());
    }
    if (spec.type != "http" && spec.type != "mock") throw ConfigError("unknown backend type '" + spec.type + "'");
    if (spec.type == "http" && spec.profile.endpoint.empty()) {
      throw ConfigError("http backend for " + std::string(to_string(spec.profile.role)) + " needs an endpoint");
    }
    if (!seen.insert(spec.profile.role).second) {
      throw ConfigError("role " + std::string(to_string(spec.profile.role)) + " configured twice");
    }
    spec.profile.validate();
    spec.options = e;
    cfg.specs.push_back(std::move(spec));
  }
  return cfg;
}

BackendsConfig BackendsConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read backends file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

json BackendsConfig::to_json() const {
  json list = json::array();
  for (const auto& s : specs) list.push_back(s.options);
  return {{"backends", list}};
}

std::map<Role, std::shared_ptr<MockBackend>> attach_backends(Gateway& gateway, const BackendsConfig& config) {
  std::map<Role, std::shared_ptr<MockBackend>> mocks;
  for (const auto& spec : config.specs) {
    if (spec.type == "http") {
      gateway.attach(spec.profile, std::make_shared<HttpBackend>(spec.profile));
      continue;
    }
    auto mock = std::make_shared<MockBackend>();
    const Role role = spec.profile.role;
    if (role == Role::TextEmbedder || role == Role::MultimodalEmbedder) {
      mock->set_responder(role, hash_embedder(spec.options.value("dim", std::size_t{64})));
    } else {
      std::vector<std::pair<std::string, std::string>> rules;
      for (const auto& r : spec.options.value("rules", json::array())) {
        if (r.is_array() && r.size() == 2) {
          rules.emplace_back(r[0].get<std::string>(), r[1].get<std::string>());
        } else {
          rules.emplace_back(r.at("match").get<std::string>(), r.at("reply").get<std::string>());
        }
      }
      mock->set_responder(role, rule_responder(std::move(rules), spec.options.value("default", std::string())));
    }
    gateway.attach(spec.profile, mock);
    mocks[role] = std::move(mock);
  }
  return mocks;
}

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  fusion.validate();
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (caid.max_refinements < 0) throw ConfigError("max_refinements must be >= 0");
}

json RunConfig::to_json() const {
  json j;
  j["dataset"] = dataset.string();
  j["kind"] = std::string(to_string(kind));
  j["mode"] = std::string(to_string(mode));
  j["fusion"] = {{"alpha", fusion.alpha},
                 {"k", fusion.k},
                 {"text_scorer", std::string(to_string(fusion.text_scorer))},
                 {"k1", fusion.k1},
                 {"b", fusion.b},
                 {"normalization", fusion.normalization == Normalization::MaxOverPool ? "max_over_pool" : "none"}};
  j["caid"] = {{"max_refinements", caid.max_refinements},
               {"llm_revise", caid.llm_revise},
               {"temperature", caid.sampling.temperature},
               {"max_tokens", caid.sampling.max_tokens},
               {"seed", caid.sampling.seed ? json(*caid.sampling.seed) : json(nullptr)}};
  j["pool_dataset"] = pool_dataset.string();
  j["limit"] = limit ? json(*limit) : json(nullptr);
  j["seed"] = seed;
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

std::vector<TaskInstance> subsample(std::vector<TaskInstance> dataset, std::optional<std::size_t> limit,
                                    std::uint64_t seed) {
  if (limit && *limit < dataset.size()) {
    std::vector<std::pair<std::uint64_t, std::size_t>> keyed;
    keyed.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) keyed.emplace_back(splitmix64(seed ^ fnv1a(dataset[i].id)), i);
    std::sort(keyed.begin(), keyed.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return dataset[a.second].id < dataset[b.second].id;
    });
    std::vector<TaskInstance> picked;
    picked.reserve(*limit);
    for (std::size_t i = 0; i < *limit; ++i) picked.push_back(std::move(dataset[keyed[i].second]));
    dataset = std::move(picked);
  }
  std::sort(dataset.begin(), dataset.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return dataset;
}

// ---------------------------------------------------------------------------
// Manifest

json to_json(const InstanceScore& score) {
  return {{"kind", std::string(to_string(score.kind))},
          {"instance_id", score.instance_id},
          {"components", score.components},
          {"tags", score.tags}};
}

bool RunManifest::all_completed() const {
  return std::all_of(instances.begin(), instances.end(), [](const auto& s) { return s.completed; });
}

json RunManifest::to_json() const {
  json j;
  j["config_digest"] = config_digest;
  j["config"] = config;
  j["instances"] = json::array();
  for (const auto& s : instances) {
    json r{{"id", s.id}, {"completed", s.completed}};
    r["parse_status"] = s.parse ? json(std::string(to_string(*s.parse))) : json(nullptr);
    if (s.failed_stage) {
      r["failed_stage"] = *s.failed_stage;
      r["error"] = s.error;
    }
    j["instances"].push_back(std::move(r));
  }
  j["report"] = cvr::to_json(report);
  j["split_reports"] = json::array();
  for (const auto& r : split_reports) j["split_reports"].push_back(cvr::to_json(r));
  j["pool"] = {{"size", pool_size}, {"failures", json::array()}};
  for (const auto& f : pool_failures) {
    j["pool"]["failures"].push_back({{"id", f.id}, {"stage", f.stage}, {"error", f.error}});
  }
  j["calls"] = calls.to_json();
  j["wall_seconds"] = wall_seconds;
  j["all_completed"] = all_completed();
  return j;
}

void RunManifest::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_file(dir / "manifest.json", to_json().dump(2) + "\n");
  std::string traces_out, scores_out, report_jsonl, report_txt;
  for (const auto& t : traces) traces_out += t.to_json().dump() + "\n";
  for (const auto& s : scores) scores_out += cvr::to_json(s).dump() + "\n";
  report_jsonl += cvr::to_json(report).dump() + "\n";
  report_txt += render_table(report);
  for (const auto& r : split_reports) {
    report_jsonl += cvr::to_json(r).dump() + "\n";
    report_txt += "\n" + render_table(r);
  }
  write_file(dir / "traces.jsonl", traces_out);
  write_file(dir / "scores.jsonl", scores_out);
  write_file(dir / "report.jsonl", report_jsonl);
  write_file(dir / "report.txt", report_txt);
}

std::string_view to_string(SweepParam p) { return p == SweepParam::K ? "k" : "alpha"; }

std::string render_sweep_table(const std::vector<SweepRow>& rows) {
  if (rows.empty()) return "";
  std::set<std::string> metrics;
  for (const auto& r : rows) {
    for (const auto& [name, _] : r.manifest.report.metrics) metrics.insert(name);
  }
  std::ostringstream out;
  out << to_string(rows.front().param);
  for (const auto& m : metrics) out << '\t' << m;
  out << '\n';
  for (const auto& r : rows) {
    out << format_value(r.value);
    for (const auto& m : metrics) {
      auto it = r.manifest.report.metrics.find(m);
      if (it == r.manifest.report.metrics.end()) {
        out << "\tn/a";
      } else {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", it->second.mean);
        out << '\t' << buf;
      }
    }
    out << '\n';
  }
  return out.str();
}

std::map<std::string, std::string> load_option_source(const fs::path& path, bool final_descriptions) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read option source " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const std::string id = j.contains("id") ? j.at("id").get<std::string>() : j.at("instance_id").get<std::string>();
      if (j.contains("text")) {
        out[id] = j.at("text").get<std::string>();
        continue;
      }
      if (j.contains("failed_stage") && !j.at("failed_stage").is_null()) continue;
      std::vector<std::string> d = j.at("initial_descriptions").get<std::vector<std::string>>();
      const auto& refinements = j.value("refinements", json::array());
      if (final_descriptions && !refinements.empty()) {
        d = refinements.back().at("revised_descriptions").get<std::vector<std::string>>();
      }
      out[id] = render_descriptions(d);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void CompareResult::write(const fs::path& dir) const {
  fs::create_directories(dir);
  write_file(dir / "report.txt", report.render_table());
  write_file(dir / "report.jsonl", report.to_jsonl());
  std::string v;
  for (const auto& [id, verdicts_for] : verdicts) {
    json rec{{"id", id}, {"verdicts", json::array()}};
    for (const auto& x : verdicts_for) rec["verdicts"].push_back(x.to_json());
    v += rec.dump() + "\n";
  }
  write_file(dir / "verdicts.jsonl", v);
  write_file(dir / "compare.json", json{{"report", report.to_json()}, {"unaligned", unaligned}}.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Harness

Harness::Harness(Gateway& gateway, TemplateSet templates) : gateway_(gateway), templates_(std::move(templates)) {}

void Harness::check_roles(const RunConfig& config) const {
  std::vector<Role> needed{Role::TextLLM, Role::Captioner};
  if (uses_icl(config.mode)) {
    needed.push_back(Role::MultimodalEmbedder);
    if (config.fusion.text_scorer == TextScorer::EmbeddingCosine) needed.push_back(Role::TextEmbedder);
  }
  if (config.kind == TaskKind::Whoops) needed.push_back(Role::Judge);
  for (Role r : needed) {
    if (!gateway_.has(r)) {
      throw ConfigError("mode " + std::string(to_string(config.mode)) + " needs a backend for role " +
                        std::string(to_string(r)));
    }
  }
}

PoolBuildResult Harness::prepare_pool(const RunConfig& config, const std::vector<TaskInstance>& run_dataset) {
  if (!config.pool_dir.empty() && fs::exists(config.pool_dir / "exemplars.jsonl")) {
    return {ExemplarPool::load(config.pool_dir), {}};
  }
  std::vector<TaskInstance> source =
      config.pool_dataset.empty() ? run_dataset : load_dataset(config.pool_dataset.string(), config.kind);
  CaidEngine engine(gateway_, templates_, config.caid);
  PoolBuildOptions options;
  options.description_mode = config.mode == PipelineMode::Full ? PipelineMode::BaseCaID : PipelineMode::Base;
  options.embed_text = config.fusion.text_scorer == TextScorer::EmbeddingCosine;
  options.concurrency = config.concurrency;
  auto result = build_pool(source, engine, gateway_, options);
  if (!config.pool_dir.empty()) result.pool.save(config.pool_dir);
  return result;
}

RunManifest Harness::run(const RunConfig& config) {
  if (config.dataset.empty()) throw ConfigError("no dataset given");
  return run(config, load_dataset(config.dataset.string(), config.kind));
}

RunManifest Harness::run(const RunConfig& config, const std::vector<TaskInstance>& dataset,
                         const ExemplarPool* pool) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  check_roles(config);
  for (const auto& inst : dataset) {
    if (inst.kind != config.kind) throw ConfigError("instance '" + inst.id + "' is not of kind " + std::string(to_string(config.kind)));
  }
  const std::size_t log_start = gateway_.log().size();

  RunManifest m;
  m.config = config.to_json();
  m.config["templates_digest"] = templates_digest(templates_);
  m.config_digest = sha256_hex(m.config.dump());

  std::optional<PoolBuildResult> built;
  std::unique_ptr<Retriever> retriever;
  if (uses_icl(config.mode)) {
    if (!pool) {
      built = prepare_pool(config, dataset);
      pool = &built->pool;
      m.pool_failures = built->failures;
    }
    m.pool_size = pool->size();
    retriever = std::make_unique<Retriever>(gateway_, *pool, config.fusion, templates_);
  }

  const auto selected = subsample(dataset, config.limit, config.seed);
  CaidEngine engine(gateway_, templates_, config.caid);
  ComparisonJudge judge(gateway_, templates_, config.caid.sampling);

  m.instances.resize(selected.size());
  m.traces.resize(selected.size());
  std::vector<std::optional<InstanceScore>> scores(selected.size());

  parallel_for(selected.size(), config.concurrency, [&](std::size_t i) {
    const TaskInstance& inst = selected[i];
    InstanceStatus& status = m.instances[i];
    status.id = inst.id;
    DescriptionTrace trace = engine.run(inst, config.mode, retriever.get());
    if (!trace.ok()) {
      status.completed = false;
      status.failed_stage = trace.failed_stage;
      status.error = trace.error;
    }
    const Prediction pred = trace.final_prediction.value_or(Prediction::failed(""));
    if (trace.final_prediction) status.parse = pred.status;

    if (inst.gold) {
      try {
        if (inst.kind == TaskKind::Whoops) {
          bool accepted = false;
          if (pred.parsed) {
            const auto& reference = std::get<ReferenceText>(*inst.gold).text;
            const auto& explanation = std::get<ReferenceText>(*pred.parsed).text;
            const auto verdict = judge.judge_explanation(inst.task_text, reference, explanation);
            if (!verdict.error.empty() && status.completed) {
              status.completed = false;
              status.failed_stage = "judge";
              status.error = verdict.error;
            }
            accepted = ComparisonJudge::accepted(verdict);
          }
          scores[i] = score_judged(inst, accepted);
        } else {
          scores[i] = score_instance(inst, pred);
        }
      } catch (const std::exception& e) {
        status.completed = false;
        status.failed_stage = "score";
        status.error = e.what();
      }
    }
    m.traces[i] = std::move(trace);
  });

  for (auto& s : scores) {
    if (s) m.scores.push_back(std::move(*s));
  }
  m.report = aggregate_scores(config.kind, m.scores);
  std::set<std::string> splits;
  for (const auto& s : m.scores) {
    if (auto it = s.tags.find("winogavil_split"); it != s.tags.end()) splits.insert(it->second);
  }
  for (const auto& v : splits) {
    m.split_reports.push_back(aggregate_scores(config.kind, m.scores, SplitFilter{"winogavil_split", v}));
  }

  auto log = gateway_.log();
  m.calls = summarize(std::vector<CallRecord>(log.begin() + static_cast<std::ptrdiff_t>(std::min(log_start, log.size())), log.end()));
  m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!config.out_dir.empty()) m.write(config.out_dir);
  return m;
}

std::vector<SweepRow> Harness::sweep(const RunConfig& config, SweepParam param, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (config.dataset.empty()) throw ConfigError("no dataset given");
  const auto dataset = load_dataset(config.dataset.string(), config.kind);

  std::optional<PoolBuildResult> pool;
  if (uses_icl(config.mode)) {
    config.validate();
    check_roles(config);
    pool = prepare_pool(config, dataset);
  }

  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = config;
    if (param == SweepParam::K) {
      if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
        throw ConfigError("k must be a non-negative integer, got " + format_value(v));
      }
      c.fusion.k = static_cast<std::size_t>(v);
    } else {
      c.fusion.alpha = v;
    }
    if (!config.out_dir.empty()) c.out_dir = config.out_dir / (std::string(to_string(param)) + "=" + format_value(v));
    SweepRow row{param, v, run(c, dataset, pool ? &pool->pool : nullptr)};
    if (pool) row.manifest.pool_failures = pool->failures;
    rows.push_back(std::move(row));
  }
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    write_file(config.out_dir / "sweep.txt", render_sweep_table(rows));
    std::string jl;
    for (const auto& r : rows) {
      jl += json{{"param", std::string(to_string(r.param))},
                 {"value", r.value},
                 {"config_digest", r.manifest.config_digest},
                 {"report", cvr::to_json(r.manifest.report)}}
                .dump() +
            "\n";
    }
    write_file(config.out_dir / "sweep.jsonl", jl);
  }
  return rows;
}

CompareResult Harness::compare(const std::vector<TaskInstance>& dataset, const std::map<std::string, std::string>& option_a,
                               const std::map<std::string, std::string>& option_b, Protocol protocol,
                               std::size_t concurrency) {
  if (!gateway_.has(Role::Judge)) throw ConfigError("compare needs a judge backend");
  CompareResult result;
  std::vector<ComparisonCase> cases;
  std::set<std::string> known;
  auto sorted = dataset;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& inst : sorted) {
    known.insert(inst.id);
    auto a = option_a.find(inst.id);
    auto b = option_b.find(inst.id);
    if (a == option_a.end() || b == option_b.end()) {
      result.unaligned.push_back(inst.id);
      continue;
    }
    cases.push_back({inst.id, render_task_text(without_gold(inst)), a->second, b->second, inst.kind});
  }
  for (const auto* src : {&option_a, &option_b}) {
    for (const auto& [id, _] : *src) {
      if (!known.count(id) && std::find(result.unaligned.begin(), result.unaligned.end(), id) == result.unaligned.end()) {
        result.unaligned.push_back(id);
      }
    }
  }

  ComparisonJudge judge(gateway_, templates_);
  std::vector<std::vector<ComparisonVerdict>> verdicts(cases.size());
  parallel_for(cases.size(), concurrency, [&](std::size_t i) {
    try {
      verdicts[i] = judge.compare(cases[i], protocol);
    } catch (const std::exception& e) {
      // An invalid case still occupies every step so the report stays aligned.
      std::vector<ComparisonStep> steps =
          protocol == Protocol::Direct ? std::vector<ComparisonStep>{ComparisonStep::Direct}
                                       : std::vector<ComparisonStep>(kCocSteps.begin(), kCocSteps.end());
      for (auto s : steps) {
        ComparisonVerdict v;
        v.step = s;
        v.error = e.what();
        verdicts[i].push_back(std::move(v));
      }
    }
  });

  result.report = aggregate_verdicts(verdicts);
  result.report.protocol = protocol;
  for (std::size_t i = 0; i < cases.size(); ++i) result.verdicts.emplace_back(cases[i].id, std::move(verdicts[i]));
  return result;
}

}  // namespace cvr
