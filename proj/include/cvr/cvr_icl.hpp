#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvr/caid.hpp"
#include "cvr/gateway.hpp"
#include "cvr/prompt_template.hpp"
#include "cvr/task_model.hpp"

namespace cvr {

enum class TextScorer { BM25, EmbeddingCosine };
enum class Normalization { MaxOverPool, None };

std::string_view to_string(TextScorer scorer);
/// "bm25" or "cosine".
TextScorer parse_text_scorer(std::string_view name);

struct FusionConfig {
  double alpha = 1.0;
  std::size_t k = 4;
  TextScorer text_scorer = TextScorer::BM25;
  double k1 = 1.2;
  double b = 0.75;
  // Applies to BM25 only; cosine is already bounded.
  Normalization normalization = Normalization::MaxOverPool;

  void validate() const;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// Okapi BM25 over tokenized documents. Query tokens are summed with their
// multiplicity; IDF is ln((N - df + 0.5) / (df + 0.5) + 1).
class Bm25Index {
 public:
  /// Throws ConfigError on a duplicate id.
  void add(std::string id, const std::vector<std::string>& tokens);

  double score(std::span<const std::string> query, std::size_t doc, Bm25Params params = {}) const;
  /// Throws Error for an unknown id.
  double score(std::span<const std::string> query, std::string_view id, Bm25Params params = {}) const;
  double idf(const std::string& term) const;

  std::size_t size() const { return docs_.size(); }
  double avgdl() const;
  std::size_t total_length() const { return total_length_; }
  std::size_t df(const std::string& term) const;
  const std::map<std::string, std::size_t>& df_table() const { return df_; }
  std::size_t doc_length(std::size_t doc) const { return docs_.at(doc).length; }
  std::optional<std::size_t> find(std::string_view id) const;

 private:
  struct Doc {
    std::string id;
    std::unordered_map<std::string, std::size_t> tf;
    std::size_t length = 0;
  };
  std::vector<Doc> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::map<std::string, std::size_t> df_;
  std::size_t total_length_ = 0;
};

struct Exemplar {
  std::string id;
  TaskKind kind = TaskKind::GenericMCQ;
  std::string rendered_text;  // task text plus image descriptions
  std::vector<double> x_m;
  std::optional<std::vector<double>> x_t;
  Prediction pseudo_label;  // model output, never the gold label
  std::string answer_text;  // pseudo_label in the instance's lettering
  bool gold_withheld = true;

  bool operator==(const Exemplar&) const = default;
};

nlohmann::json to_json(const Exemplar& exemplar);
Exemplar exemplar_from_json(const nlohmann::json& j);

// Immutable once built; reads are safe from any thread.
class ExemplarPool {
 public:
  static constexpr int kFormatVersion = 1;

  /// Throws DimensionMismatch if x_m differs from the pool's dimension, and
  /// ConfigError for a duplicate id or an exemplar with gold attached.
  void add(Exemplar exemplar);

  const std::vector<Exemplar>& exemplars() const { return exemplars_; }
  std::size_t size() const { return exemplars_.size(); }
  bool empty() const { return exemplars_.empty(); }
  std::size_t embedding_dim() const { return embedding_dim_; }
  const Bm25Index& index() const { return index_; }
  const Exemplar* find(std::string_view id) const;

  /// Writes exemplars.jsonl and index_stats.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  /// Reloads and checks the stored index statistics against the rebuilt index.
  static ExemplarPool load(const std::filesystem::path& dir);

 private:
  std::vector<Exemplar> exemplars_;
  Bm25Index index_;
  std::size_t embedding_dim_ = 0;
};

struct Similarity {
  double value = 0.0;
  bool degenerate = false;  // a zero vector was involved
};

/// Throws DimensionMismatch when sizes differ.
Similarity cosine(std::span<const double> u, std::span<const double> v);

inline double fused_score(double s_m, double s_t, double alpha) { return alpha * s_m + s_t; }

struct RetrievalQuery {
  std::string id;
  std::string text;
  std::vector<double> x_m;
  std::optional<std::vector<double>> x_t;
};

struct ScoredExemplar {
  std::string id;
  std::size_t index = 0;  // position in the pool
  double s_m = 0.0;
  double s_t = 0.0;  // after normalization
  double s = 0.0;
  bool degenerate = false;

  bool operator==(const ScoredExemplar&) const = default;
};

/// Every eligible exemplar (the target id excluded), by s descending, ties by
/// ascending id.
std::vector<ScoredExemplar> rank_exemplars(const RetrievalQuery& query, const ExemplarPool& pool,
                                           const FusionConfig& config);
/// The first min(k, eligible) entries of rank_exemplars.
std::vector<ScoredExemplar> select_top_k(const RetrievalQuery& query, const ExemplarPool& pool,
                                         const FusionConfig& config);

/// Example sections separated by the template delimiter, in the given order.
std::string render_icl_block(const std::vector<const Exemplar*>& exemplars, const TemplateSet& templates);

/// Walks the ranking and keeps the first k exemplars with a usable
/// pseudo-label; Failed ones are skipped and reported.
IclSelection select_icl(const std::vector<ScoredExemplar>& ranked, const ExemplarPool& pool, std::size_t k,
                        const TemplateSet& templates);

struct PoolBuildOptions {
  // Description stages used for pool entries: Base (generic captions) or
  // BaseCaID (dual loop). Never uses ICL.
  PipelineMode description_mode = PipelineMode::BaseCaID;
  bool embed_text = false;  // also compute x_t for the cosine text scorer
  std::size_t concurrency = 1;
};

struct PoolBuildFailure {
  std::string id;
  std::string stage;
  std::string error;
};

struct PoolBuildResult {
  ExemplarPool pool;
  std::vector<PoolBuildFailure> failures;
};

/// Gold is stripped from every instance before any model call. Failed
/// instances are reported and left out of the pool.
PoolBuildResult build_pool(const std::vector<TaskInstance>& dataset, CaidEngine& engine, Gateway& gateway,
                           const PoolBuildOptions& options = {});

// ExemplarSource backed by a pool. A target already in the pool reuses its
// stored vectors; otherwise they are embedded through the gateway.
class Retriever : public ExemplarSource {
 public:
  Retriever(Gateway& gateway, const ExemplarPool& pool, FusionConfig config, const TemplateSet& templates);
  Retriever(Gateway&, const ExemplarPool&, FusionConfig, TemplateSet&&) = delete;  // would dangle

  IclSelection select(const TaskInstance& target, std::span<const std::string> descriptions) override;
  RetrievalQuery make_query(const TaskInstance& target, std::span<const std::string> descriptions);

  const FusionConfig& config() const { return config_; }

 private:
  Gateway& gateway_;
  const ExemplarPool& pool_;
  FusionConfig config_;
  const TemplateSet& templates_;
};

}  // namespace cvr
