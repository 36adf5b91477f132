#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvr/task_model.hpp"

namespace cvr {

enum class Role { TextLLM, Captioner, TextEmbedder, MultimodalEmbedder, Judge };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct BackendProfile {
  Role role = Role::TextLLM;
  std::string endpoint;
  std::string model_name;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 2;
  int max_in_flight = 4;
  // First retry waits this long; each further retry doubles it.
  std::chrono::milliseconds backoff{200};
  // Name of the environment variable holding the API key, if any.
  std::string api_key_env;

  void validate() const;
};

struct SamplingParams {
  double temperature = 0.0;
  int max_tokens = 512;
  std::optional<std::int64_t> seed = 0;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

// One backend request. `payload` is the role-specific body without the
// model name or sampling parameters:
//   TextLLM / Judge      {"messages": [{"role", "content"}...]}
//   Captioner            {"prompt", "image": {"uri"}}
//   TextEmbedder         {"input": [text]}
//   MultimodalEmbedder   {"inputs": [{"text", "image": {"uri"}}...]}
struct ModelRequest {
  Role role = Role::TextLLM;
  std::string model;
  nlohmann::json payload;
  SamplingParams params;

  /// Byte-stable serialization: object keys are sorted, so field insertion
  /// order never changes the result.
  std::string canonical() const;
  /// Hex SHA-256 of canonical().
  std::string digest() const;
};

struct ModelResponse {
  std::string text;
  std::vector<std::vector<double>> vectors;

  nlohmann::json to_json() const;
  static ModelResponse from_json(const nlohmann::json& j);
  std::string digest() const;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Throws TransientError for retryable failures, ProtocolError or
  /// ImageFetchError otherwise.
  virtual ModelResponse invoke(const ModelRequest& request) = 0;
};

struct CallRecord {
  std::uint64_t sequence = 0;
  Role role = Role::TextLLM;
  std::string request_digest;
  std::string response_digest;
  std::chrono::microseconds latency{0};
  bool cache_hit = false;
  int attempts = 0;
};

struct CallSummary {
  std::size_t live = 0;
  std::size_t cached = 0;
  std::map<Role, std::size_t> live_by_role;
  std::map<Role, std::size_t> cached_by_role;

  nlohmann::json to_json() const;
};

std::string sha256_hex(std::string_view data);

// Request/response cache keyed by the canonical request, optionally mirrored
// to a directory (one JSON file per digest). Thread-safe.
class ResponseCache {
 public:
  explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt);

  std::optional<ModelResponse> lookup(const ModelRequest& request);
  void store(const ModelRequest& request, const ModelResponse& response);
  std::size_t size() const;

 private:
  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, ModelResponse> entries_;
};

struct GatewayOptions {
  bool cache_enabled = true;
  std::optional<std::filesystem::path> cache_dir;
};

// Uniform access to the model roles with caching, bounded concurrency,
// retries and a globally ordered call log. Safe to share across threads.
class Gateway {
 public:
  explicit Gateway(GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void attach(BackendProfile profile, std::shared_ptr<Backend> backend);
  bool has(Role role) const;
  const BackendProfile& profile(Role role) const;

  /// TextLLM or Judge. Returns the first message text.
  std::string complete(Role role, const std::vector<ChatMessage>& messages, const SamplingParams& params = {});
  std::string caption(const ImageRef& image, std::string_view prompt);
  std::vector<double> embed_text(std::string_view text);
  /// One backend vector per (text, image) pair, mean-pooled into one.
  std::vector<double> embed_multimodal(std::string_view text, std::span<const ImageRef> images);

  std::vector<CallRecord> log() const;
  CallSummary summary() const;
  void clear_log();

 private:
  struct Slot;
  ModelResponse dispatch(ModelRequest request);
  Slot& slot(Role role) const;
  void check_dimension(Role role, std::size_t dim);

  GatewayOptions options_;
  ResponseCache cache_;
  std::map<Role, std::unique_ptr<Slot>> slots_;
  std::atomic<std::uint64_t> sequence_{0};

  mutable std::mutex log_mu_;
  std::vector<CallRecord> log_;

  std::mutex pending_mu_;
  std::unordered_map<std::string, std::shared_future<ModelResponse>> pending_;

  std::mutex dim_mu_;
  std::map<Role, std::size_t> dims_;
};

std::vector<double> mean_pool(const std::vector<std::vector<double>>& vectors);

}  // namespace cvr
