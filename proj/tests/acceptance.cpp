// Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion and exits
// non-zero when any gating criterion fails.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cvr/caid.hpp"
#include "cvr/coc_eval.hpp"
#include "cvr/cvr_icl.hpp"
#include "cvr/harness.hpp"
#include "cvr/http_backend.hpp"
#include "cvr/text.hpp"
#include "oracle/topk_oracle.hpp"
#include "support/fixtures.hpp"

using namespace cvr;
namespace fx = cvr::fixtures;

namespace {

struct Verdict {
  enum Kind { Pass, Fail, Skip } kind = Pass;
  std::string detail;
};

Verdict pass(std::string d = {}) { return {Verdict::Pass, std::move(d)}; }
Verdict fail(std::string d) { return {Verdict::Fail, std::move(d)}; }
Verdict skip(std::string d) { return {Verdict::Skip, std::move(d)}; }

std::string str(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

// ---------------------------------------------------------------------------

std::vector<Role> expected_roles(PipelineMode mode, int m) {
  std::vector<Role> out;
  auto caps = [&] { out.insert(out.end(), static_cast<std::size_t>(m), Role::Captioner); };
  if (uses_caid(mode)) {
    out.push_back(Role::TextLLM);
    caps();
    out.push_back(Role::TextLLM);
    out.push_back(Role::TextLLM);
    caps();
    out.push_back(Role::TextLLM);
  } else {
    caps();
    out.push_back(Role::TextLLM);
  }
  return out;
}

struct FixedSource : ExemplarSource {
  IclSelection select(const TaskInstance&, std::span<const std::string>) override {
    return {"Example 1:\nsolved\nAnswer: A", {"ex"}, {}};
  }
};

Verdict call_trace() {
  for (int m = 1; m <= 3; ++m) {
    for (auto mode : {PipelineMode::Base, PipelineMode::BaseCaID, PipelineMode::BaseICL, PipelineMode::Full}) {
      fx::Rig rig;
      rig.mock->set_responder(Role::TextLLM, rule_responder({}, "Answer: A"));
      rig.mock->set_responder(Role::Captioner, rule_responder({}, "a photo"));
      FixedSource src;
      const auto templates = TemplateSet::defaults();
      const auto trace = CaidEngine(*rig.gateway, templates).run(fx::mcq("t", m), mode, &src);
      if (!trace.ok()) return fail(std::string(to_string(mode)) + ": " + trace.error);
      std::vector<Role> got;
      for (const auto& r : rig.gateway->log()) got.push_back(r.role);
      if (got != expected_roles(mode, m)) {
        return fail(std::string(to_string(mode)) + " m=" + std::to_string(m) + ": call sequence differs");
      }
    }
  }
  return pass("12 mode/image-count combinations");
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kVocab{"red",  "blue", "cat",   "dog",   "tree",  "car",   "sky",  "water", "road",
                                      "plane", "bird", "house", "man",  "woman", "kite", "snow", "light", "boat"};

std::vector<std::string> random_tokens(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> len(3, 20), word(0, kVocab.size() - 1);
  std::vector<std::string> out(len(rng));
  for (auto& w : out) w = kVocab[word(rng)];
  return out;
}

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> d;
  std::vector<double> v(dim);
  for (auto& x : v) x = d(rng);
  return v;
}

struct Trial {
  std::vector<oracle::Item> items;
  ExemplarPool pool;
  std::string target;
  std::vector<double> q_m;
  std::vector<std::string> q_tokens;
};

Trial random_trial(std::mt19937_64& rng, std::size_t max_pool, std::size_t dim) {
  Trial t;
  std::uniform_int_distribution<std::size_t> n_dist(1, max_pool);
  const std::size_t n = n_dist(rng);
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "e%04zu", i);
    const auto tokens = random_tokens(rng);
    const auto x = random_vec(rng, dim);
    t.items.push_back({id, x, tokens});
    Exemplar e;
    e.id = id;
    e.rendered_text = join(tokens, " ");
    e.x_m = x;
    e.pseudo_label = Prediction::clean("Answer: A", OptionId{"x"});
    t.pool.add(std::move(e));
  }
  std::uniform_int_distribution<std::size_t> pick(0, n);
  const std::size_t p = pick(rng);
  t.target = p < n ? t.items[p].id : "query";
  t.q_m = random_vec(rng, dim);
  t.q_tokens = random_tokens(rng);
  return t;
}

std::string compare_with_oracle(const Trial& t, double alpha, std::size_t k, std::vector<std::string>* ids = nullptr) {
  FusionConfig cfg;
  cfg.alpha = alpha;
  cfg.k = k;
  const auto got = select_top_k({t.target, join(t.q_tokens, " "), t.q_m, {}}, t.pool, cfg);
  const auto want = oracle::top_k(t.items, t.target, t.q_m, t.q_tokens, alpha, k);
  if (got.size() != want.size()) return "size " + std::to_string(got.size()) + " vs " + std::to_string(want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (got[i].id != want[i].id) return "rank " + std::to_string(i) + ": " + got[i].id + " vs " + want[i].id;
    if (std::abs(got[i].s - want[i].s) > 1e-9) return "score " + str(got[i].s) + " vs " + str(want[i].s);
    if (ids) ids->push_back(got[i].id);
  }
  return {};
}

Verdict retrieval_oracle() {
  std::mt19937_64 rng(20240611);
  for (int trial = 0; trial < 100; ++trial) {
    const auto t = random_trial(rng, 200, 16);
    if (auto err = compare_with_oracle(t, 1.0, 4); !err.empty()) {
      return fail("trial " + std::to_string(trial) + ": " + err);
    }
  }
  return pass("100 trials, k=4");
}

// ---------------------------------------------------------------------------

Verdict bm25_correctness() {
  const std::vector<std::string> corpus{
      "the cat sat on the mat",
      "the dog chased the cat around the yard",
      "a bird sang in the morning light",
      "cats and dogs are common household pets",
      "the quick brown fox jumps over the lazy dog",
  };
  Bm25Index idx;
  std::vector<oracle::Doc> docs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    docs.push_back(tokenize(corpus[i]));
    idx.add("d" + std::to_string(i), docs.back());
  }
  const std::vector<std::string> queries{"cat", "the dog", "morning bird song", "household pets cat", "the the cat",
                                         "zebra unicorn", "lazy fox jumps", "mat yard light"};
  std::size_t checked = 0;
  for (const auto& q : queries) {
    const auto toks = tokenize(q);
    for (std::size_t d = 0; d < docs.size(); ++d) {
      const double got = idx.score(toks, d);
      const double want = oracle::bm25(docs, toks, d);
      if (std::abs(got - want) > 1e-9) return fail("'" + q + "' doc " + std::to_string(d) + ": " + str(got) + " vs " + str(want));
      bool overlap = false;
      for (const auto& t : toks) overlap = overlap || std::find(docs[d].begin(), docs[d].end(), t) != docs[d].end();
      if (!overlap && got != 0.0) return fail("'" + q + "' doc " + std::to_string(d) + ": no overlap but score " + str(got));
      ++checked;
    }
  }
  // Values frozen from an independent implementation.
  const double frozen = 1.2917135674283275;
  if (std::abs(idx.score(tokenize("the dog"), 1) - frozen) > 1e-9) return fail("frozen value mismatch");
  return pass(std::to_string(checked) + " pairs");
}

// ---------------------------------------------------------------------------

Verdict fusion_semantics() {
  FusionConfig defaults;
  RunConfig run_defaults;
  if (defaults.alpha != 1.0 || defaults.k != 4 || run_defaults.fusion.alpha != 1.0 || run_defaults.fusion.k != 4) {
    return fail("defaults are not alpha=1, k=4");
  }
  const std::vector<double> grid{0.1, 0.2, 0.3, 0.5, 1.0, 2.0};
  std::mt19937_64 rng(8);
  std::size_t changes = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto t = random_trial(rng, 80, 8);
    std::vector<std::string> prev_got, prev_want;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      std::vector<std::string> got;
      if (auto err = compare_with_oracle(t, grid[a], 4, &got); !err.empty()) {
        return fail("alpha=" + str(grid[a]) + ": " + err);
      }
      std::vector<std::string> want;
      for (const auto& r : oracle::top_k(t.items, t.target, t.q_m, t.q_tokens, grid[a], 4)) want.push_back(r.id);
      if (a > 0 && ((got != prev_got) != (want != prev_want))) {
        return fail("selection change at alpha=" + str(grid[a]) + " disagrees with the oracle");
      }
      if (a > 0 && got != prev_got) ++changes;
      prev_got = got;
      prev_want = want;
    }
  }
  return pass("30 pools x 6 alphas, " + std::to_string(changes) + " selection changes, defaults alpha=1 k=4");
}

// ---------------------------------------------------------------------------

Verdict coc_arithmetic() {
  // Per step: caption better, description better, equal (out of 1000).
  const int counts[4][3] = {{60, 753, 187}, {43, 760, 197}, {83, 713, 204}, {50, 767, 183}};
  std::vector<std::string> script;
  std::vector<TaskInstance> data;
  std::map<std::string, std::string> a, b;
  for (int i = 0; i < 1000; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "c%04d", i);
    data.push_back(fx::whoops(id, "r"));
    a[id] = std::string("generic caption ") + id;
    b[id] = std::string("context description ") + id;
  }
  // Cases are judged in id order, steps in order; one reply per call.
  for (int i = 0; i < 1000; ++i) {
    for (int s = 0; s < 4; ++s) {
      const int cap = counts[s][0], desc = counts[s][1];
      script.push_back(i < cap ? "False" : i < cap + desc ? "True" : "Equal");
    }
  }
  fx::Rig rig(GatewayOptions{false, std::nullopt});
  rig.mock->script_text(Role::Judge, script);
  Harness h(*rig.gateway, TemplateSet::defaults());
  const auto result = h.compare(data, a, b, Protocol::CoC, 1);
  if (rig.mock->calls(Role::Judge) != 4000) return fail("expected 4000 judge calls");
  const auto& avg = result.report.average;
  if (!avg) return fail("no average");
  std::ostringstream d;
  d << "description " << avg->description_better << ", caption " << avg->caption_better << ", equal " << avg->equal;
  if (std::abs(avg->description_better - 74.8) > 0.05) return fail(d.str());
  if (std::abs(avg->caption_better - 5.9) > 0.05) return fail(d.str());
  return pass(d.str());
}

// ---------------------------------------------------------------------------

Verdict metric_laws() {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> bit(0, 1), four(0, 3), status(0, 9);
  std::vector<InstanceScore> wg;
  for (int i = 0; i < 1000; ++i) {
    const auto inst = fx::winoground("w" + std::to_string(i), bit(rng));
    Prediction p;
    if (status(rng) == 0) {
      p = Prediction::failed("?");
    } else {
      WinogroundAnswer ans;
      const int c = bit(rng), r = bit(rng);
      ans.caption_to_image = {c, 1 - c};
      ans.image_to_caption = {r, 1 - r};
      p = Prediction::clean("Answer", ans);
    }
    const auto s = score_instance(inst, p);
    if (s.components.at("group") != (s.components.at("text") == 1.0 && s.components.at("image") == 1.0 ? 1.0 : 0.0)) {
      return fail("group != text and image for " + inst.id);
    }
    wg.push_back(s);
  }
  const auto wr = aggregate_scores(TaskKind::Winoground, wg);
  const double group = wr.metrics.at("group").mean;
  if (group > std::min(wr.metrics.at("text").mean, wr.metrics.at("image").mean) + 1e-12) return fail("aggregate group > min(text, image)");

  for (int i = 0; i < 1000; ++i) {
    const auto inst = fx::vcr("v" + std::to_string(i));
    Prediction p;
    if (status(rng) == 0) {
      p = Prediction::failed("?");
    } else {
      LabeledChoices c{{{"answer", inst.id + "-a" + std::to_string(four(rng))},
                        {"rationale", inst.id + "-r" + std::to_string(four(rng))}}};
      p = Prediction::recovered("Answer", c);
    }
    const auto s = score_instance(inst, p);
    if (s.components.at("q_ar") != (s.components.at("q_a") == 1.0 && s.components.at("qa_r") == 1.0 ? 1.0 : 0.0)) {
      return fail("q_ar != q_a and qa_r for " + inst.id);
    }
  }
  return pass("1000 Winoground + 1000 VCR instances; group " + str(group));
}

// ---------------------------------------------------------------------------

Verdict leakage_guard() {
  std::vector<TaskInstance> data;
  std::vector<std::string> golds;
  for (int i = 0; i < 20; ++i) {
    golds.push_back("GOLD-REFERENCE-" + std::to_string(i) + "-flamingo-on-a-tractor");
    data.push_back(fx::whoops("w" + std::to_string(i), golds.back()));
  }
  fx::Rig rig(GatewayOptions{false, std::nullopt});
  rig.mock->set_responder(Role::TextLLM, rule_responder({}, "Answer: something unusual"));
  rig.mock->set_responder(Role::Captioner, rule_responder({}, "a photo"));
  rig.mock->set_responder(Role::MultimodalEmbedder, hash_embedder(16));
  Harness h(*rig.gateway, TemplateSet::defaults());
  RunConfig cfg;
  cfg.kind = TaskKind::Whoops;
  cfg.mode = PipelineMode::Full;
  const auto result = h.prepare_pool(cfg, data);
  if (result.pool.size() != 20) return fail("pool has " + std::to_string(result.pool.size()) + " exemplars");
  const auto log = rig.mock->log();
  for (const auto& c : log) {
    for (const auto& g : golds) {
      if (c.request.find(g) != std::string::npos) return fail("gold string sent in a request");
    }
  }
  for (const auto& e : result.pool.exemplars()) {
    const auto j = to_json(e).dump();
    for (const auto& g : golds) {
      if (j.find(g) != std::string::npos) return fail("gold string stored in exemplar " + e.id);
    }
  }
  return pass(std::to_string(log.size()) + " requests checked");
}

// ---------------------------------------------------------------------------

Verdict cache_determinism() {
  fx::Rig rig;
  rig.mock->set_responder(Role::TextLLM, rule_responder({{"q03", "Answer: C"}}, "Answer: A"));
  rig.mock->set_responder(Role::Captioner, rule_responder({}, "a photo of a street"));
  rig.mock->set_responder(Role::MultimodalEmbedder, hash_embedder(16));
  std::vector<TaskInstance> data;
  for (int i = 0; i < 12; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "q%02d", i);
    data.push_back(fx::mcq(id, 1 + i % 3, 4, i % 4));
  }
  Harness h(*rig.gateway, TemplateSet::defaults());
  for (auto mode : {PipelineMode::Base, PipelineMode::Full}) {
    RunConfig cfg;
    cfg.mode = mode;
    cfg.concurrency = 4;
    const auto first = h.run(cfg, data);
    const auto second = h.run(cfg, data);
    if (first.calls.live == 0) return fail("first run made no live calls");
    if (second.calls.live != 0) return fail(std::to_string(second.calls.live) + " live calls on warm cache");
    if (to_json(first.report).dump() != to_json(second.report).dump()) return fail("report differs");
  }
  return pass("base and full, warm cache");
}

// ---------------------------------------------------------------------------

Verdict live_smoke() {
  const char* endpoint = std::getenv("CVR_LIVE_ENDPOINT");
  if (!endpoint || !*endpoint) return skip("CVR_LIVE_ENDPOINT not set");
  const char* model = std::getenv("CVR_LIVE_MODEL");
  const char* key_env = std::getenv("CVR_LIVE_API_KEY_ENV");
  const char* caption_endpoint = std::getenv("CVR_LIVE_CAPTION_ENDPOINT");
  const char* image = std::getenv("CVR_LIVE_IMAGE_URI");

  Gateway g(GatewayOptions{false, std::nullopt});
  auto http = [&](Role role, const char* ep) {
    BackendProfile p;
    p.role = role;
    p.endpoint = ep;
    p.model_name = model ? model : "gpt-4o-mini";
    p.api_key_env = key_env ? key_env : "OPENAI_API_KEY";
    p.timeout = std::chrono::milliseconds(120'000);
    g.attach(p, std::make_shared<HttpBackend>(p));
  };
  http(Role::TextLLM, endpoint);
  http(Role::Judge, endpoint);
  if (caption_endpoint && *caption_endpoint) {
    http(Role::Captioner, caption_endpoint);
  } else {
    auto mock = std::make_shared<MockBackend>();
    mock->set_responder(Role::Captioner, rule_responder({}, "A goldfish resting inside a birdcage by a window."));
    g.attach(fx::profile(Role::Captioner), mock);
  }
  auto inst = fx::whoops("live-1", "Fish live in water, not in birdcages.");
  if (image && *image) inst.images[0].uri = image;
  try {
    Harness h(g, TemplateSet::defaults());
    RunConfig cfg;
    cfg.kind = TaskKind::Whoops;
    cfg.mode = PipelineMode::BaseCaID;
    const auto m = h.run(cfg, {inst});
    const auto j = m.traces.at(0).to_json();
    if (!m.all_completed()) return fail("instance failed: " + m.instances.at(0).error);
    if (j["final_prediction"].is_null()) return fail("trace has no final prediction");
    return pass("trace " + std::to_string(j.dump().size()) + " bytes");
  } catch (const std::exception& e) {
    return fail(e.what());
  }
}

struct Criterion {
  std::string name;
  double limit_s;
  bool gating;
  std::function<Verdict()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"caid_call_trace", 1.0, true, call_trace},
      {"retrieval_oracle_equivalence", 10.0, true, retrieval_oracle},
      {"bm25_correctness", 1.0, true, bm25_correctness},
      {"fusion_semantics", 5.0, true, fusion_semantics},
      {"coc_aggregation_arithmetic", 1.0, true, coc_arithmetic},
      {"metric_laws", 5.0, true, metric_laws},
      {"leakage_guard", 5.0, true, leakage_guard},
      {"cache_determinism", 5.0, true, cache_determinism},
      {"live_smoke", 300.0, false, live_smoke},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.kind == Verdict::Pass && secs > c.limit_s) o = fail("took " + str(secs) + " s");
    const char* tag = o.kind == Verdict::Pass ? "PASS" : o.kind == Verdict::Skip ? "SKIP" : "FAIL";
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.3fs/%.0fs", secs, c.limit_s);
    std::cout << tag << ' ' << c.name << " [" << timing << "]" << (c.gating ? "" : " (not gating)");
    if (!o.detail.empty()) std::cout << ": " << o.detail;
    std::cout << '\n';
    if (o.kind == Verdict::Fail && c.gating) ++failures;
  }
  return failures ? 1 : 0;
}
