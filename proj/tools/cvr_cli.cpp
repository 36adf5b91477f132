// Command-line front end: run, sweep, compare, build-pool, report.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cvr/error.hpp"
#include "cvr/harness.hpp"
#include "cvr/text.hpp"

namespace {

using namespace cvr;
namespace fs = std::filesystem;

struct CommonArgs {
  std::string dataset;
  std::string kind;
  std::string backends;
  std::string templates;
  std::string cache;
  bool no_cache = false;
  std::string out;
  std::size_t concurrency = 1;
};

struct RunArgs {
  std::string mode = "full";
  std::size_t k = 4;
  double alpha = 1.0;
  std::string text_scorer = "bm25";
  std::optional<std::size_t> limit;
  std::uint64_t seed = 0;
  std::string pool;
  std::string pool_dataset;
  int max_refinements = 1;
  bool llm_revise = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool need_dataset = true) {
  auto* d = cmd->add_option("--dataset", a.dataset, "Line-delimited dataset file");
  if (need_dataset) d->required()->check(CLI::ExistingFile);
  cmd->add_option("--kind", a.kind, "winogavil | winoground | whoops | vcr | nyccc | mcq")->required();
  cmd->add_option("--backends", a.backends, "Backends config file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--templates", a.templates, "Directory of <name>.txt prompt templates")->check(CLI::ExistingDirectory);
  cmd->add_option("--cache", a.cache, "Response cache directory");
  cmd->add_flag("--no-cache", a.no_cache, "Disable response caching");
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--concurrency", a.concurrency, "Instances processed in parallel")->check(CLI::PositiveNumber);
}

void add_run(CLI::App* cmd, RunArgs& r) {
  cmd->add_option("--mode", r.mode, "base | caid | icl | full")
      ->check(CLI::IsMember({"base", "caid", "icl", "full"}));
  cmd->add_option("--k", r.k, "In-context examples per prompt");
  cmd->add_option("--alpha", r.alpha, "Weight of the multimodal similarity")->check(CLI::NonNegativeNumber);
  cmd->add_option("--text-scorer", r.text_scorer, "bm25 | cosine")->check(CLI::IsMember({"bm25", "cosine"}));
  cmd->add_option("--limit", r.limit, "Seeded subsample size");
  cmd->add_option("--seed", r.seed, "Subsample seed");
  cmd->add_option("--pool", r.pool, "Exemplar pool directory (loaded if present, else written)");
  cmd->add_option("--pool-dataset", r.pool_dataset, "Dataset for the exemplar pool (default: --dataset)");
  cmd->add_option("--max-refinements", r.max_refinements, "Refinement passes in CaID modes");
  cmd->add_flag("--llm-revise", r.llm_revise, "Let the LLM rewrite the follow-up question before captioning");
}

struct Env {
  std::unique_ptr<Gateway> gateway;
  TemplateSet templates;
};

Env make_env(const CommonArgs& a) {
  GatewayOptions opts;
  opts.cache_enabled = !a.no_cache;
  if (!a.cache.empty()) opts.cache_dir = a.cache;
  Env env{std::make_unique<Gateway>(opts), a.templates.empty() ? TemplateSet::defaults() : TemplateSet::load(a.templates)};
  attach_backends(*env.gateway, BackendsConfig::load(a.backends));
  return env;
}

RunConfig make_config(const CommonArgs& a, const RunArgs& r) {
  RunConfig c;
  c.dataset = a.dataset;
  c.kind = parse_task_kind(a.kind);
  c.mode = parse_mode(r.mode);
  c.fusion.k = r.k;
  c.fusion.alpha = r.alpha;
  c.fusion.text_scorer = parse_text_scorer(r.text_scorer);
  c.caid.max_refinements = r.max_refinements;
  c.caid.llm_revise = r.llm_revise;
  c.pool_dir = r.pool;
  c.pool_dataset = r.pool_dataset;
  c.out_dir = a.out;
  c.concurrency = a.concurrency;
  c.limit = r.limit;
  c.seed = r.seed;
  return c;
}

std::vector<double> parse_values(const std::string& list) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    auto item = trim(std::string_view(list).substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (!item.empty()) out.push_back(std::stod(std::string(item)));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

int report_run(const RunManifest& m) {
  std::cout << render_table(m.report);
  for (const auto& r : m.split_reports) std::cout << '\n' << render_table(r);
  std::size_t failed = 0;
  for (const auto& s : m.instances) {
    if (!s.completed) {
      ++failed;
      std::cerr << "instance " << s.id << " failed at " << s.failed_stage.value_or("?") << ": " << s.error << '\n';
    }
  }
  std::cout << "calls: live " << m.calls.live << ", cached " << m.calls.cached << '\n';
  if (!m.pool_failures.empty()) std::cerr << m.pool_failures.size() << " pool entries failed\n";
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware description and retrieval harness for multimodal reasoning benchmarks"};
  app.require_subcommand(1);

  CommonArgs run_common, sweep_common, compare_common, pool_common;
  RunArgs run_args, sweep_args, pool_args;

  auto* run = app.add_subcommand("run", "Run one pipeline mode over a dataset");
  add_common(run, run_common);
  add_run(run, run_args);

  auto* sweep = app.add_subcommand("sweep", "Run once per k or alpha value");
  add_common(sweep, sweep_common);
  add_run(sweep, sweep_args);
  std::string sweep_param = "k";
  std::string sweep_values;
  sweep->add_option("--param", sweep_param, "k | alpha")->check(CLI::IsMember({"k", "alpha"}));
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();

  auto* compare = app.add_subcommand("compare", "Judge generic captions (A) against descriptions (B)");
  add_common(compare, compare_common);
  std::string source_a, source_b, protocol = "coc";
  compare->add_option("--a", source_a, "Option A source: {id,text} records or run traces")->required()->check(CLI::ExistingFile);
  compare->add_option("--b", source_b, "Option B source: {id,text} records or run traces")->required()->check(CLI::ExistingFile);
  compare->add_option("--protocol", protocol, "direct | coc")->check(CLI::IsMember({"direct", "coc"}));

  auto* build = app.add_subcommand("build-pool", "Build and save an exemplar pool");
  add_common(build, pool_common);
  add_run(build, pool_args);
  build->get_option("--pool")->required();

  auto* report = app.add_subcommand("report", "Recompute the metric report of a finished run");
  std::string report_dir, report_kind;
  report->add_option("--run", report_dir, "Run output directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--kind", report_kind, "Task kind")->required();

  auto* write_templates = app.add_subcommand("write-templates", "Write the default prompt templates");
  std::string templates_out;
  write_templates->add_option("--out", templates_out, "Directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto env = make_env(run_common);
      Harness h(*env.gateway, env.templates);
      return report_run(h.run(make_config(run_common, run_args)));
    }
    if (*sweep) {
      auto env = make_env(sweep_common);
      Harness h(*env.gateway, env.templates);
      const auto rows = h.sweep(make_config(sweep_common, sweep_args),
                                sweep_param == "k" ? SweepParam::K : SweepParam::Alpha, parse_values(sweep_values));
      std::cout << render_sweep_table(rows);
      bool ok = true;
      for (const auto& r : rows) ok = ok && r.manifest.all_completed();
      return ok ? 0 : 1;
    }
    if (*compare) {
      auto env = make_env(compare_common);
      Harness h(*env.gateway, env.templates);
      const auto dataset = load_dataset(compare_common.dataset, parse_task_kind(compare_common.kind));
      auto result = h.compare(dataset, load_option_source(source_a, false), load_option_source(source_b, true),
                              parse_protocol(protocol), compare_common.concurrency);
      std::cout << result.report.render_table();
      for (const auto& id : result.unaligned) std::cerr << "unaligned: " << id << '\n';
      if (!compare_common.out.empty()) result.write(compare_common.out);
      return 0;
    }
    if (*build) {
      auto env = make_env(pool_common);
      Harness h(*env.gateway, env.templates);
      auto config = make_config(pool_common, pool_args);
      if (!uses_icl(config.mode)) config.mode = uses_caid(config.mode) ? PipelineMode::Full : PipelineMode::BaseICL;
      if (fs::exists(config.pool_dir / "exemplars.jsonl")) {
        std::cerr << "pool already exists at " << config.pool_dir << '\n';
        return 2;
      }
      const auto result = h.prepare_pool(config, load_dataset(config.dataset.string(), config.kind));
      std::cout << "pool: " << result.pool.size() << " exemplars, " << result.failures.size() << " failures\n";
      for (const auto& f : result.failures) std::cerr << f.id << " [" << f.stage << "]: " << f.error << '\n';
      return result.failures.empty() ? 0 : 1;
    }
    if (*report) {
      std::ifstream in(fs::path(report_dir) / "scores.jsonl");
      if (!in) throw ConfigError("no scores.jsonl in " + report_dir);
      const TaskKind kind = parse_task_kind(report_kind);
      std::vector<InstanceScore> scores;
      std::string line;
      while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto j = nlohmann::json::parse(line);
        scores.push_back({parse_task_kind(j.at("kind").get<std::string>()), j.at("instance_id").get<std::string>(),
                          j.at("components").get<std::map<std::string, double>>(),
                          j.value("tags", std::map<std::string, std::string>{})});
      }
      std::cout << render_table(aggregate_scores(kind, scores));
      return 0;
    }
    if (*write_templates) {
      TemplateSet::defaults().write(templates_out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
