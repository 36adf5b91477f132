#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvr/caid.hpp"
#include "cvr/coc_eval.hpp"
#include "cvr/cvr_icl.hpp"
#include "cvr/gateway.hpp"
#include "cvr/mock_backend.hpp"
#include "cvr/prompt_template.hpp"
#include "cvr/task_model.hpp"

namespace cvr {

// One role entry of a backends file:
//   {"role": "text_llm", "type": "http", "endpoint": "...", "model": "...",
//    "timeout_s": 60, "max_retries": 2, "max_in_flight": 4, "backoff_ms": 200,
//    "api_key_env": "OPENAI_API_KEY"}
// Mock entries use "type": "mock" with "default" and "rules" ([[needle,
// reply], ...]) for text roles or "dim" for embedders.
struct BackendSpec {
  BackendProfile profile;
  std::string type = "http";
  nlohmann::json options = nlohmann::json::object();
};

struct BackendsConfig {
  std::vector<BackendSpec> specs;

  static BackendsConfig from_json(const nlohmann::json& j);
  static BackendsConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

/// Attaches one backend per entry. Returns the mocks created, by role.
std::map<Role, std::shared_ptr<MockBackend>> attach_backends(Gateway& gateway, const BackendsConfig& config);

struct RunConfig {
  std::filesystem::path dataset;
  TaskKind kind = TaskKind::GenericMCQ;
  PipelineMode mode = PipelineMode::Full;
  FusionConfig fusion;
  CaidOptions caid;
  // Pool source for ICL modes; the run dataset when empty.
  std::filesystem::path pool_dataset;
  // Saved pool to load, or where to save a freshly built one.
  std::filesystem::path pool_dir;
  std::filesystem::path out_dir;
  std::size_t concurrency = 1;
  std::optional<std::size_t> limit;
  std::uint64_t seed = 0;

  void validate() const;
  /// Settings that determine results (no output paths, no concurrency).
  nlohmann::json to_json() const;
  std::string digest() const;
};

/// Deterministic seeded subsample of `limit` instances, returned in id order.
/// Without a limit (or when it covers the dataset) all instances, in id order.
std::vector<TaskInstance> subsample(std::vector<TaskInstance> dataset, std::optional<std::size_t> limit,
                                    std::uint64_t seed);

struct InstanceStatus {
  std::string id;
  bool completed = true;
  std::optional<std::string> failed_stage;
  std::string error;
  std::optional<ParseStatus> parse;
};

struct RunManifest {
  std::string config_digest;
  nlohmann::json config;
  std::vector<InstanceStatus> instances;
  std::vector<DescriptionTrace> traces;
  std::vector<InstanceScore> scores;
  MetricReport report;
  std::vector<MetricReport> split_reports;
  std::size_t pool_size = 0;
  std::vector<PoolBuildFailure> pool_failures;
  CallSummary calls;
  double wall_seconds = 0.0;

  bool all_completed() const;
  nlohmann::json to_json() const;
  /// manifest.json, traces.jsonl, scores.jsonl, report.txt, report.jsonl.
  void write(const std::filesystem::path& dir) const;
};

nlohmann::json to_json(const InstanceScore& score);

enum class SweepParam { K, Alpha };
std::string_view to_string(SweepParam p);

struct SweepRow {
  SweepParam param = SweepParam::K;
  double value = 0.0;
  RunManifest manifest;
};

std::string render_sweep_table(const std::vector<SweepRow>& rows);

// One option text per instance id. Accepts {"id", "text"} records or run
// traces (initial descriptions for option A, final descriptions for B).
std::map<std::string, std::string> load_option_source(const std::filesystem::path& path, bool final_descriptions);

struct CompareResult {
  CoCReport report;
  std::vector<std::string> unaligned;  // ids missing from either source
  std::vector<std::pair<std::string, std::vector<ComparisonVerdict>>> verdicts;

  void write(const std::filesystem::path& dir) const;
};

class Harness {
 public:
  Harness(Gateway& gateway, TemplateSet templates);

  /// Loads the dataset named in the config and runs it.
  RunManifest run(const RunConfig& config);
  /// Runs over `dataset`. `pool` overrides building or loading one.
  RunManifest run(const RunConfig& config, const std::vector<TaskInstance>& dataset,
                  const ExemplarPool* pool = nullptr);

  /// One run per value. The pool is prepared once and shared.
  std::vector<SweepRow> sweep(const RunConfig& config, SweepParam param, const std::vector<double>& values);

  /// Pairs option A and B texts by instance id and judges each pair.
  CompareResult compare(const std::vector<TaskInstance>& dataset, const std::map<std::string, std::string>& option_a,
                        const std::map<std::string, std::string>& option_b, Protocol protocol,
                        std::size_t concurrency = 1);

  /// Builds (or loads from config.pool_dir) the exemplar pool for the config.
  PoolBuildResult prepare_pool(const RunConfig& config, const std::vector<TaskInstance>& run_dataset);

  const TemplateSet& templates() const { return templates_; }

 private:
  void check_roles(const RunConfig& config) const;

  Gateway& gateway_;
  TemplateSet templates_;
};

}  // namespace cvr
