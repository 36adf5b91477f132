#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "cvr/gateway.hpp"

namespace cvr {

struct MockReply {
  enum class Kind { Text, Vectors, Transient, Protocol, ImageFetch };

  Kind kind = Kind::Text;
  std::string text;
  std::vector<std::vector<double>> vectors;

  static MockReply reply(std::string text) { return {Kind::Text, std::move(text), {}}; }
  static MockReply embedding(std::vector<std::vector<double>> vectors) {
    return {Kind::Vectors, {}, std::move(vectors)};
  }
  static MockReply transient(std::string message = "scripted transient failure") {
    return {Kind::Transient, std::move(message), {}};
  }
  static MockReply protocol(std::string message = "scripted protocol error") {
    return {Kind::Protocol, std::move(message), {}};
  }
  static MockReply image_fetch(std::string message = "scripted image fetch error") {
    return {Kind::ImageFetch, std::move(message), {}};
  }
};

using Responder = std::function<ModelResponse(const ModelRequest&)>;

struct MockCall {
  std::uint64_t sequence = 0;
  Role role = Role::TextLLM;
  std::string request;  // canonical form
  bool ok = true;
};

// Scripted backend for every role. Replies are consumed FIFO per role; when a
// role's script is empty its responder (if any) answers, otherwise the call
// throws ScriptExhausted. Records every invocation, including failures.
class MockBackend : public Backend {
 public:
  void script(Role role, std::vector<MockReply> replies);
  void script_text(Role role, const std::vector<std::string>& replies);
  void set_responder(Role role, Responder responder);
  /// Adds artificial latency to every call (for concurrency tests).
  void set_latency(std::chrono::milliseconds latency);

  ModelResponse invoke(const ModelRequest& request) override;

  std::vector<MockCall> log() const;
  std::vector<Role> roles() const;
  std::size_t calls(Role role) const;
  std::size_t remaining(Role role) const;
  int max_in_flight_seen() const;
  void clear_log();

 private:
  mutable std::mutex mu_;
  std::map<Role, std::deque<MockReply>> scripts_;
  std::map<Role, Responder> responders_;
  std::vector<MockCall> log_;
  std::uint64_t next_sequence_ = 0;
  std::chrono::milliseconds latency_{0};
  int in_flight_ = 0;
  int max_in_flight_ = 0;
};

/// Deterministic feature-hashing embedder for TextEmbedder and
/// MultimodalEmbedder requests. Empty text maps to the zero vector.
Responder hash_embedder(std::size_t dim);

/// Text responder: the reply of the first rule whose needle occurs in the
/// last message (or caption prompt), else `fallback`.
Responder rule_responder(std::vector<std::pair<std::string, std::string>> rules, std::string fallback);

/// Hash-embeds one string into `dim` signed buckets.
std::vector<double> hash_embed(std::string_view text, std::size_t dim);

}  // namespace cvr
