#include <filesystem>
#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "cvr/error.hpp"
#include "cvr/gateway.hpp"
#include "cvr/mock_backend.hpp"
#include "support/fixtures.hpp"

using namespace cvr;
namespace fx = cvr::fixtures;

TEST(Canonical, StableAcrossInsertionOrder) {
  nlohmann::json a = nlohmann::json::object();
  a["prompt"] = "p";
  a["image"] = {{"uri", "u"}};
  nlohmann::json b = nlohmann::json::object();
  b["image"] = {{"uri", "u"}};
  b["prompt"] = "p";
  ModelRequest ra{Role::Captioner, "m", a, {}};
  ModelRequest rb{Role::Captioner, "m", b, {}};
  EXPECT_EQ(ra.canonical(), rb.canonical());
  EXPECT_EQ(ra.digest(), rb.digest());
  ModelRequest rc = ra;
  rc.model = "other";
  EXPECT_NE(ra.digest(), rc.digest());
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Gateway, ScriptedEcho) {
  fx::Rig rig;
  rig.mock->script_text(Role::TextLLM, {"yes"});
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "hi"}}), "yes");
  ASSERT_EQ(rig.gateway->log().size(), 1u);
  EXPECT_FALSE(rig.gateway->log()[0].cache_hit);
}

TEST(Gateway, CacheHitSecondTime) {
  fx::Rig rig;
  rig.mock->script_text(Role::TextLLM, {"once"});
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), "once");
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), "once");
  const auto log = rig.gateway->log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_TRUE(log[1].cache_hit);
  EXPECT_EQ(rig.mock->calls(Role::TextLLM), 1u);
  EXPECT_EQ(log[0].request_digest, log[1].request_digest);
}

TEST(Gateway, RetriesTransientThenSucceeds) {
  fx::Rig rig;
  rig.mock->script(Role::TextLLM, {MockReply::transient(), MockReply::transient(), MockReply::reply("ok")});
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), "ok");
  EXPECT_EQ(rig.gateway->log().back().attempts, 3);
  EXPECT_EQ(rig.mock->calls(Role::TextLLM), 3u);
}

TEST(Gateway, ExhaustedRetriesAreUnavailable) {
  fx::Rig rig;
  rig.mock->script(Role::TextLLM, {MockReply::transient(), MockReply::transient(), MockReply::transient()});
  EXPECT_THROW(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), BackendUnavailable);
  EXPECT_TRUE(rig.gateway->log().back().response_digest.empty());
}

TEST(Gateway, ProtocolErrorsAreNotRetried) {
  fx::Rig rig;
  rig.mock->script(Role::TextLLM, {MockReply::protocol("bad body")});
  EXPECT_THROW(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), ProtocolError);
  EXPECT_EQ(rig.mock->calls(Role::TextLLM), 1u);
}

TEST(Gateway, FailuresAreNotCached) {
  fx::Rig rig;
  rig.mock->script(Role::TextLLM, {MockReply::protocol(), MockReply::reply("second")});
  EXPECT_THROW(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), ProtocolError);
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), "second");
}

TEST(Gateway, CaptionPassesEmptyPrompt) {
  fx::Rig rig;
  rig.mock->script_text(Role::Captioner, {"A mug shaped like a lighthouse."});
  EXPECT_EQ(rig.gateway->caption({"i", "x.jpg"}, ""), "A mug shaped like a lighthouse.");
  const auto req = nlohmann::json::parse(rig.mock->log().at(0).request);
  EXPECT_EQ(req["payload"]["prompt"], "");
}

TEST(Gateway, TwoCaptionsLoggedInOrder) {
  fx::Rig rig;
  rig.mock->script_text(Role::Captioner, {"first", "second"});
  EXPECT_EQ(rig.gateway->caption({"a", "a.jpg"}, "p"), "first");
  EXPECT_EQ(rig.gateway->caption({"b", "b.jpg"}, "p"), "second");
  const auto log = rig.gateway->log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_LT(log[0].sequence, log[1].sequence);
  EXPECT_NE(log[0].request_digest, log[1].request_digest);
}

TEST(Gateway, ImageWithoutUri) {
  fx::Rig rig;
  EXPECT_THROW(rig.gateway->caption({"a", ""}, "p"), ImageFetchError);
}

TEST(Gateway, MissingRole) {
  Gateway g;
  EXPECT_THROW(g.complete(Role::TextLLM, {{"user", "q"}}), ConfigError);
  EXPECT_THROW(g.attach(fx::profile(Role::TextLLM, -1), std::make_shared<MockBackend>()), ConfigError);
}

TEST(MockBackend, ScriptExhausted) {
  fx::Rig rig;
  rig.mock->script_text(Role::TextLLM, {"1", "2", "3"});
  for (const char* q : {"a", "b", "c"}) rig.gateway->complete(Role::TextLLM, {{"user", q}});
  EXPECT_EQ(rig.mock->log().size(), 3u);
  EXPECT_THROW(rig.gateway->complete(Role::TextLLM, {{"user", "d"}}), ScriptExhausted);
}

TEST(MockBackend, PerRoleFifoUnderRandomInterleaving) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    fx::Rig rig({false, std::nullopt});
    std::vector<std::string> llm, cap;
    for (int i = 0; i < 10; ++i) {
      llm.push_back("llm" + std::to_string(i));
      cap.push_back("cap" + std::to_string(i));
    }
    rig.mock->script_text(Role::TextLLM, llm);
    rig.mock->script_text(Role::Captioner, cap);
    std::size_t li = 0, ci = 0;
    while (li < 10 || ci < 10) {
      const bool pick_llm = ci == 10 || (li < 10 && rng() % 2);
      if (pick_llm) {
        EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), llm[li++]);
      } else {
        EXPECT_EQ(rig.gateway->caption({"i", "u"}, "p"), cap[ci++]);
      }
    }
  }
}

TEST(Gateway, CacheSoundnessLiveEqualsDistinct) {
  std::mt19937 rng(5);
  fx::Rig rig;
  rig.mock->set_responder(Role::TextLLM, [](const ModelRequest& r) {
    ModelResponse out;
    out.text = "re:" + r.payload["messages"][0]["content"].get<std::string>();
    return out;
  });
  std::set<std::string> distinct;
  for (int i = 0; i < 300; ++i) {
    const std::string q = "q" + std::to_string(rng() % 40);
    distinct.insert(q);
    EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", q}}), "re:" + q);
  }
  EXPECT_EQ(rig.mock->calls(Role::TextLLM), distinct.size());
  EXPECT_EQ(rig.gateway->summary().live, distinct.size());
}

TEST(Gateway, BoundedConcurrency) {
  auto mock = std::make_shared<MockBackend>();
  mock->set_latency(std::chrono::milliseconds(5));
  mock->set_responder(Role::TextLLM, rule_responder({}, "ok"));
  Gateway g;
  g.attach(fx::profile(Role::TextLLM, 0, 3), mock);
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 4; ++i) g.complete(Role::TextLLM, {{"user", std::to_string(t) + ":" + std::to_string(i)}});
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(mock->max_in_flight_seen(), 3);
  EXPECT_GE(mock->max_in_flight_seen(), 2);
  EXPECT_EQ(mock->calls(Role::TextLLM), 48u);
  const auto log = g.log();
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_LT(log[i - 1].sequence, log[i].sequence);
}

TEST(Gateway, ConcurrentIdenticalRequestsShareOneCall) {
  auto mock = std::make_shared<MockBackend>();
  mock->set_latency(std::chrono::milliseconds(20));
  mock->set_responder(Role::TextLLM, rule_responder({}, "shared"));
  Gateway g;
  g.attach(fx::profile(Role::TextLLM), mock);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] { EXPECT_EQ(g.complete(Role::TextLLM, {{"user", "same"}}), "shared"); });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(mock->calls(Role::TextLLM), 1u);
  EXPECT_EQ(g.summary().cached, 7u);
}

TEST(Gateway, DiskCacheSurvivesRestart) {
  const auto dir = std::filesystem::temp_directory_path() / "cvr_gateway_cache";
  std::filesystem::remove_all(dir);
  {
    fx::Rig rig({true, dir});
    rig.mock->script_text(Role::TextLLM, {"persisted"});
    rig.mock->script(Role::MultimodalEmbedder, {MockReply::embedding({{0.1, 0.7}})});
    rig.gateway->complete(Role::TextLLM, {{"user", "q"}});
    rig.gateway->embed_multimodal("t", std::vector<ImageRef>{{"i", "u"}});
  }
  fx::Rig rig({true, dir});
  EXPECT_EQ(rig.gateway->complete(Role::TextLLM, {{"user", "q"}}), "persisted");
  EXPECT_EQ(rig.gateway->embed_multimodal("t", std::vector<ImageRef>{{"i", "u"}}), (std::vector<double>{0.1, 0.7}));
  EXPECT_EQ(rig.mock->log().size(), 0u);
  EXPECT_EQ(rig.gateway->summary().live, 0u);
  std::filesystem::remove_all(dir);
}

TEST(Embedding, HashEmbedderDeterministic) {
  fx::Rig rig;
  rig.mock->set_responder(Role::TextEmbedder, hash_embedder(32));
  const auto a = rig.gateway->embed_text("a red mug");
  const auto b = rig.gateway->embed_text("a red mug");
  const auto c = rig.gateway->embed_text("a blue unicorn on a board");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 32u);
  double dot = 0, na = 0, nc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * c[i];
    na += a[i] * a[i];
    nc += c[i] * c[i];
  }
  EXPECT_LT(dot / std::sqrt(na * nc), 1.0 - 1e-9);
  const auto z = rig.gateway->embed_text("");
  EXPECT_TRUE(std::all_of(z.begin(), z.end(), [](double x) { return x == 0.0; }));
}

TEST(Embedding, DimensionMismatchAcrossCalls) {
  fx::Rig rig;
  rig.mock->script(Role::TextEmbedder, {MockReply::embedding({{1, 0}}), MockReply::embedding({{1, 0, 0}})});
  rig.gateway->embed_text("a");
  EXPECT_THROW(rig.gateway->embed_text("b"), DimensionMismatch);
}

TEST(MeanPool, SingleAndPair) {
  EXPECT_EQ(mean_pool({{0.25, -1.5}}), (std::vector<double>{0.25, -1.5}));
  EXPECT_EQ(mean_pool({{1, 0}, {0, 1}}), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(mean_pool({{1, 0}, {1}}), DimensionMismatch);
}

TEST(MeanPool, PermutationInvariantAndDimensionPreserving) {
  std::mt19937 rng(19);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 5, dim = 1 + rng() % 16;
    std::vector<std::vector<double>> v(n, std::vector<double>(dim));
    for (auto& x : v) {
      for (auto& y : x) y = nd(rng);
    }
    const auto pooled = mean_pool(v);
    EXPECT_EQ(pooled.size(), dim);
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(mean_pool(v), pooled);
  }
}

TEST(Embedding, MultimodalPoolsPerImageVectors) {
  fx::Rig rig;
  rig.mock->script(Role::MultimodalEmbedder, {MockReply::embedding({{1, 0}, {0, 1}})});
  const std::vector<ImageRef> imgs{{"a", "a.jpg"}, {"b", "b.jpg"}};
  EXPECT_EQ(rig.gateway->embed_multimodal("t", imgs), (std::vector<double>{0.5, 0.5}));
  const auto req = nlohmann::json::parse(rig.mock->log().at(0).request);
  EXPECT_EQ(req["payload"]["inputs"].size(), 2u);
}
