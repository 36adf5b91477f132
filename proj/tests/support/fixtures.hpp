#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cvr/gateway.hpp"
#include "cvr/mock_backend.hpp"
#include "cvr/task_model.hpp"

namespace cvr::fixtures {

inline std::vector<ImageRef> images(const std::string& prefix, int m) {
  std::vector<ImageRef> out;
  for (int i = 0; i < m; ++i) {
    out.push_back({prefix + "-img" + std::to_string(i), "file:///data/" + prefix + "/" + std::to_string(i) + ".jpg"});
  }
  return out;
}

inline TaskInstance mcq(const std::string& id, int m = 1, int n = 4, int gold = 0) {
  TaskInstance t;
  t.id = id;
  t.kind = TaskKind::GenericMCQ;
  t.task_text = "Which option best matches the scene in " + id + "?";
  t.images = images(id, m);
  for (int i = 0; i < n; ++i) t.candidates.push_back({id + "-c" + std::to_string(i), "option text " + std::to_string(i), {}});
  t.gold = OptionId{id + "-c" + std::to_string(gold)};
  return t;
}

inline TaskInstance winoground(const std::string& id, int c0 = 0) {
  TaskInstance t;
  t.id = id;
  t.kind = TaskKind::Winoground;
  t.task_text = "Match each caption to its image.";
  t.images = images(id, 2);
  t.candidates = {{id + "-a", "the dog chases the cat", {}}, {id + "-b", "the cat chases the dog", {}}};
  t.gold = PairingMap{{{0, c0}, {1, 1 - c0}}};
  return t;
}

inline TaskInstance vcr(const std::string& id, int m = 1) {
  TaskInstance t;
  t.id = id;
  t.kind = TaskKind::VCR;
  t.task_text = "Why is Person2 holding an umbrella indoors?";
  t.images = images(id, m);
  for (int i = 0; i < 4; ++i) t.candidates.push_back({id + "-a" + std::to_string(i), "answer " + std::to_string(i), "answer"});
  for (int i = 0; i < 4; ++i) {
    t.candidates.push_back({id + "-r" + std::to_string(i), "rationale " + std::to_string(i), "rationale"});
  }
  t.gold = LabeledChoices{{{"answer", id + "-a1"}, {"rationale", id + "-r2"}}};
  return t;
}

inline TaskInstance whoops(const std::string& id, const std::string& reference) {
  TaskInstance t;
  t.id = id;
  t.kind = TaskKind::Whoops;
  t.task_text = "Explain what is unusual about this image.";
  t.images = images(id, 1);
  t.gold = ReferenceText{reference};
  return t;
}

inline TaskInstance winogavil(const std::string& id, const std::string& split, int n = 5) {
  TaskInstance t;
  t.id = id;
  t.kind = TaskKind::WinoGAViL;
  t.task_text = "Select the images that go with the cue 'ocean'.";
  t.images = images(id, n);
  for (int i = 0; i < n; ++i) t.candidates.push_back({id + "-c" + std::to_string(i), "picture " + std::to_string(i), {}});
  t.gold = OptionIdSet{{id + "-c0", id + "-c1"}};
  t.meta = {{"winogavil_split", split}};
  return t;
}

inline BackendProfile profile(Role role, int max_retries = 2, int max_in_flight = 4) {
  BackendProfile p;
  p.role = role;
  p.endpoint = "mock://" + std::string(to_string(role));
  p.model_name = "mock-" + std::string(to_string(role));
  p.max_retries = max_retries;
  p.max_in_flight = max_in_flight;
  p.backoff = std::chrono::milliseconds(0);
  return p;
}

// One mock serving every role behind a gateway.
struct Rig {
  std::shared_ptr<MockBackend> mock = std::make_shared<MockBackend>();
  std::unique_ptr<Gateway> gateway;

  explicit Rig(GatewayOptions options = {}) : gateway(std::make_unique<Gateway>(options)) {
    for (Role r : {Role::TextLLM, Role::Captioner, Role::TextEmbedder, Role::MultimodalEmbedder, Role::Judge}) {
      gateway->attach(profile(r), mock);
    }
  }
};

}  // namespace cvr::fixtures
