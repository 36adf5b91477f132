#include "cvr/cvr_icl.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;

std::string_view to_string(TextScorer scorer) {
  return scorer == TextScorer::BM25 ? "bm25" : "cosine";
}

TextScorer parse_text_scorer(std::string_view name) {
  const std::string n = to_lower_ascii(trim(name));
  if (n == "bm25") return TextScorer::BM25;
  if (n == "cosine" || n == "embedding") return TextScorer::EmbeddingCosine;
  throw ConfigError("unknown text scorer '" + std::string(name) + "'");
}

void FusionConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be a finite value >= 0");
  if (!(k1 >= 0.0) || !std::isfinite(k1)) throw ConfigError("bm25 k1 must be >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("bm25 b must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// BM25

void Bm25Index::add(std::string id, const std::vector<std::string>& tokens) {
  if (by_id_.count(id)) throw ConfigError("duplicate document id '" + id + "'");
  Doc doc;
  doc.id = id;
  doc.length = tokens.size();
  for (const auto& t : tokens) ++doc.tf[t];
  for (const auto& [term, _] : doc.tf) ++df_[term];
  total_length_ += doc.length;
  by_id_.emplace(std::move(id), docs_.size());
  docs_.push_back(std::move(doc));
}

double Bm25Index::avgdl() const {
  return docs_.empty() ? 0.0 : static_cast<double>(total_length_) / static_cast<double>(docs_.size());
}

std::size_t Bm25Index::df(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double Bm25Index::idf(const std::string& term) const {
  const double n = static_cast<double>(docs_.size());
  const double d = static_cast<double>(df(term));
  return std::log((n - d + 0.5) / (d + 0.5) + 1.0);
}

std::optional<std::size_t> Bm25Index::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

double Bm25Index::score(std::span<const std::string> query, std::size_t doc, Bm25Params params) const {
  const Doc& d = docs_.at(doc);
  const double avg = avgdl();
  if (avg <= 0.0) return 0.0;
  const double norm = params.k1 * (1.0 - params.b + params.b * static_cast<double>(d.length) / avg);
  double total = 0.0;
  for (const auto& q : query) {
    auto it = d.tf.find(q);
    if (it == d.tf.end()) continue;
    const double tf = static_cast<double>(it->second);
    total += idf(q) * tf * (params.k1 + 1.0) / (tf + norm);
  }
  return total;
}

double Bm25Index::score(std::span<const std::string> query, std::string_view id, Bm25Params params) const {
  auto doc = find(id);
  if (!doc) throw Error("unknown exemplar id '" + std::string(id) + "'");
  return score(query, *doc, params);
}

// ---------------------------------------------------------------------------
// Exemplars and pool

json to_json(const Exemplar& e) {
  json j{{"id", e.id},
         {"kind", std::string(to_string(e.kind))},
         {"rendered_text", e.rendered_text},
         {"x_m", e.x_m},
         {"pseudo_label", to_json(e.pseudo_label)},
         {"answer_text", e.answer_text},
         {"gold_withheld", e.gold_withheld}};
  if (e.x_t) j["x_t"] = *e.x_t;
  return j;
}

Exemplar exemplar_from_json(const json& j) {
  Exemplar e;
  e.id = j.at("id").get<std::string>();
  e.kind = parse_task_kind(j.at("kind").get<std::string>());
  e.rendered_text = j.at("rendered_text").get<std::string>();
  e.x_m = j.at("x_m").get<std::vector<double>>();
  if (j.contains("x_t")) e.x_t = j.at("x_t").get<std::vector<double>>();
  e.pseudo_label = prediction_from_json(j.at("pseudo_label"));
  e.answer_text = j.value("answer_text", std::string());
  e.gold_withheld = j.value("gold_withheld", true);
  return e;
}

void ExemplarPool::add(Exemplar exemplar) {
  if (!exemplar.gold_withheld) throw ConfigError("exemplar '" + exemplar.id + "' carries gold; pools take pseudo-labels only");
  if (exemplar.x_m.empty()) throw DimensionMismatch("exemplar '" + exemplar.id + "' has an empty x_m");
  if (exemplars_.empty()) {
    embedding_dim_ = exemplar.x_m.size();
  } else if (exemplar.x_m.size() != embedding_dim_) {
    throw DimensionMismatch("exemplar '" + exemplar.id + "' has x_m of size " + std::to_string(exemplar.x_m.size()) +
                            ", pool uses " + std::to_string(embedding_dim_));
  }
  index_.add(exemplar.id, tokenize(exemplar.rendered_text));
  exemplars_.push_back(std::move(exemplar));
}

const Exemplar* ExemplarPool::find(std::string_view id) const {
  auto i = index_.find(id);
  return i ? &exemplars_[*i] : nullptr;
}

namespace {

constexpr const char* kPoolFormat = "cvr-exemplar-pool";

json stats_json(const Bm25Index& index) {
  return {{"format", kPoolFormat},
          {"version", ExemplarPool::kFormatVersion},
          {"N", index.size()},
          {"total_length", index.total_length()},
          {"avgdl", index.avgdl()},
          {"df", index.df_table()}};
}

void check_header(const json& j, const std::string& what) {
  if (j.value("format", std::string()) != kPoolFormat) throw ConfigError(what + ": not an exemplar pool file");
  if (j.value("version", -1) != ExemplarPool::kFormatVersion) {
    throw ConfigError(what + ": unsupported pool version " + j.value("version", json()).dump());
  }
}

}  // namespace

void ExemplarPool::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "exemplars.jsonl", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "exemplars.jsonl").string());
    out << json{{"format", kPoolFormat},
                {"version", kFormatVersion},
                {"count", exemplars_.size()},
                {"embedding_dim", embedding_dim_}}
               .dump()
        << '\n';
    for (const auto& e : exemplars_) out << to_json(e).dump() << '\n';
  }
  std::ofstream stats(dir / "index_stats.json", std::ios::binary | std::ios::trunc);
  if (!stats) throw Error("cannot write " + (dir / "index_stats.json").string());
  stats << stats_json(index_).dump(2) << '\n';
}

ExemplarPool ExemplarPool::load(const std::filesystem::path& dir) {
  const auto ex_path = dir / "exemplars.jsonl";
  std::ifstream in(ex_path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + ex_path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(ex_path.string() + ": empty file");
  const json header = json::parse(line);
  check_header(header, ex_path.string());

  ExemplarPool pool;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      pool.add(exemplar_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError(ex_path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (pool.size() != header.at("count").get<std::size_t>()) {
    throw ConfigError(ex_path.string() + ": header count does not match records");
  }
  if (!pool.empty() && pool.embedding_dim() != header.at("embedding_dim").get<std::size_t>()) {
    throw ConfigError(ex_path.string() + ": header embedding_dim does not match records");
  }

  const auto stats_path = dir / "index_stats.json";
  std::ifstream sin(stats_path, std::ios::binary);
  if (!sin) throw ConfigError("cannot read " + stats_path.string());
  const json stats = json::parse(sin);
  check_header(stats, stats_path.string());
  if (stats != stats_json(pool.index_)) {
    throw ConfigError(stats_path.string() + ": stored index statistics disagree with the exemplars");
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Scoring and selection

Similarity cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DimensionMismatch("cosine of vectors with sizes " + std::to_string(u.size()) + " and " +
                            std::to_string(v.size()));
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return {0.0, true};
  return {dot / (std::sqrt(nu) * std::sqrt(nv)), false};
}

std::vector<ScoredExemplar> rank_exemplars(const RetrievalQuery& query, const ExemplarPool& pool,
                                           const FusionConfig& config) {
  config.validate();
  const auto& exemplars = pool.exemplars();
  if (!pool.empty() && query.x_m.size() != pool.embedding_dim()) {
    throw DimensionMismatch("query x_m has size " + std::to_string(query.x_m.size()) + ", pool uses " +
                            std::to_string(pool.embedding_dim()));
  }
  const bool bm25 = config.text_scorer == TextScorer::BM25;
  if (!bm25 && !query.x_t) throw ConfigError("cosine text scorer needs a query text vector");
  const auto tokens = bm25 ? tokenize(query.text) : std::vector<std::string>{};

  std::vector<ScoredExemplar> out;
  out.reserve(exemplars.size());
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    const Exemplar& e = exemplars[i];
    if (e.id == query.id) continue;
    ScoredExemplar s;
    s.id = e.id;
    s.index = i;
    const auto m = cosine(query.x_m, e.x_m);
    s.s_m = m.value;
    s.degenerate = m.degenerate;
    if (bm25) {
      s.s_t = pool.index().score(tokens, i, {config.k1, config.b});
    } else {
      if (!e.x_t) throw ConfigError("exemplar '" + e.id + "' has no text vector");
      const auto t = cosine(*query.x_t, *e.x_t);
      s.s_t = t.value;
      s.degenerate = s.degenerate || t.degenerate;
    }
    out.push_back(std::move(s));
  }

  if (bm25 && config.normalization == Normalization::MaxOverPool) {
    double max = 0.0;
    for (const auto& s : out) max = std::max(max, s.s_t);
    if (max > 0.0) {
      for (auto& s : out) s.s_t /= max;
    }
  }
  for (auto& s : out) s.s = fused_score(s.s_m, s.s_t, config.alpha);

  std::sort(out.begin(), out.end(), [](const ScoredExemplar& a, const ScoredExemplar& b) {
    if (a.s != b.s) return a.s > b.s;
    return a.id < b.id;
  });
  return out;
}

std::vector<ScoredExemplar> select_top_k(const RetrievalQuery& query, const ExemplarPool& pool,
                                         const FusionConfig& config) {
  if (config.k == 0) return {};
  auto ranked = rank_exemplars(query, pool, config);
  if (ranked.size() > config.k) ranked.resize(config.k);
  return ranked;
}

std::string render_icl_block(const std::vector<const Exemplar*>& exemplars, const TemplateSet& templates) {
  const auto& section = templates.get("icl_example");
  const std::string delimiter = "\n" + templates.get("icl_delimiter").text() + "\n";
  std::string out;
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    if (i) out += delimiter;
    out += section.render({{"index", std::to_string(i + 1)},
                           {"example", exemplars[i]->rendered_text},
                           {"answer", exemplars[i]->answer_text}});
  }
  return out;
}

IclSelection select_icl(const std::vector<ScoredExemplar>& ranked, const ExemplarPool& pool, std::size_t k,
                        const TemplateSet& templates) {
  IclSelection sel;
  std::vector<const Exemplar*> chosen;
  for (const auto& r : ranked) {
    if (chosen.size() >= k) break;
    const Exemplar& e = pool.exemplars().at(r.index);
    if (e.pseudo_label.status == ParseStatus::Failed) {
      sel.skipped_ids.push_back(e.id);
      continue;
    }
    chosen.push_back(&e);
    sel.exemplar_ids.push_back(e.id);
  }
  sel.block = render_icl_block(chosen, templates);
  return sel;
}

// ---------------------------------------------------------------------------
// Pool building

PoolBuildResult build_pool(const std::vector<TaskInstance>& dataset, CaidEngine& engine, Gateway& gateway,
                           const PoolBuildOptions& options) {
  if (uses_icl(options.description_mode)) throw ConfigError("pool entries cannot be built with ICL");

  std::vector<std::optional<Exemplar>> built(dataset.size());
  std::vector<std::optional<PoolBuildFailure>> failed(dataset.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < dataset.size(); i = next++) {
      const TaskInstance inst = without_gold(dataset[i]);
      const auto trace = engine.run(inst, options.description_mode);
      if (!trace.ok()) {
        failed[i] = PoolBuildFailure{inst.id, *trace.failed_stage, trace.error};
        continue;
      }
      try {
        Exemplar e;
        e.id = inst.id;
        e.kind = inst.kind;
        e.rendered_text = render_case_text(inst, trace.final_descriptions());
        e.x_m = gateway.embed_multimodal(e.rendered_text, inst.images);
        if (options.embed_text) e.x_t = gateway.embed_text(e.rendered_text);
        e.pseudo_label = *trace.final_prediction;
        if (e.pseudo_label.parsed) e.answer_text = format_answer(inst, *e.pseudo_label.parsed);
        built[i] = std::move(e);
      } catch (const std::exception& ex) {
        failed[i] = PoolBuildFailure{inst.id, "embedding", ex.what()};
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(options.concurrency, dataset.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  PoolBuildResult result;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (failed[i]) {
      result.failures.push_back(std::move(*failed[i]));
    } else if (built[i]) {
      try {
        result.pool.add(std::move(*built[i]));
      } catch (const Error& ex) {
        result.failures.push_back({dataset[i].id, "index", ex.what()});
      }
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

Retriever::Retriever(Gateway& gateway, const ExemplarPool& pool, FusionConfig config, const TemplateSet& templates)
    : gateway_(gateway), pool_(pool), config_(config), templates_(templates) {
  config_.validate();
}

RetrievalQuery Retriever::make_query(const TaskInstance& target, std::span<const std::string> descriptions) {
  RetrievalQuery q;
  q.id = target.id;
  q.text = render_case_text(target, descriptions);
  const bool need_text_vector = config_.text_scorer == TextScorer::EmbeddingCosine;
  if (const Exemplar* stored = pool_.find(target.id)) {
    q.x_m = stored->x_m;
    q.x_t = stored->x_t;
  } else {
    q.x_m = gateway_.embed_multimodal(q.text, target.images);
  }
  if (need_text_vector && !q.x_t) q.x_t = gateway_.embed_text(q.text);
  return q;
}

IclSelection Retriever::select(const TaskInstance& target, std::span<const std::string> descriptions) {
  if (config_.k == 0 || pool_.empty()) return {};
  const auto query = make_query(target, descriptions);
  return select_icl(rank_exemplars(query, pool_, config_), pool_, config_.k, templates_);
}

}  // namespace cvr
