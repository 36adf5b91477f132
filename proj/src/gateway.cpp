#include "cvr/gateway.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::TextLLM: return "text_llm";
    case Role::Captioner: return "captioner";
    case Role::TextEmbedder: return "text_embedder";
    case Role::MultimodalEmbedder: return "multimodal_embedder";
    case Role::Judge: return "judge";
  }
  return "unknown";
}

Role parse_role(std::string_view name) {
  const std::string n = to_lower_ascii(trim(name));
  for (Role r : {Role::TextLLM, Role::Captioner, Role::TextEmbedder, Role::MultimodalEmbedder, Role::Judge}) {
    if (n == to_string(r)) return r;
  }
  throw ConfigError("unknown backend role '" + std::string(name) + "'");
}

void BackendProfile::validate() const {
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (timeout.count() <= 0) throw ConfigError("timeout must be positive");
  if (backoff.count() < 0) throw ConfigError("backoff must be >= 0");
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

std::string ModelRequest::canonical() const {
  json p{{"temperature", params.temperature}, {"max_tokens", params.max_tokens}};
  p["seed"] = params.seed ? json(*params.seed) : json(nullptr);
  const json j{{"role", std::string(to_string(role))}, {"model", model}, {"payload", payload}, {"params", p}};
  return j.dump();
}

std::string ModelRequest::digest() const { return sha256_hex(canonical()); }

json ModelResponse::to_json() const {
  json j{{"text", text}};
  j["vectors"] = vectors;
  return j;
}

ModelResponse ModelResponse::from_json(const json& j) {
  ModelResponse r;
  r.text = j.value("text", std::string());
  if (auto it = j.find("vectors"); it != j.end()) r.vectors = it->get<std::vector<std::vector<double>>>();
  return r;
}

std::string ModelResponse::digest() const { return sha256_hex(to_json().dump()); }

json CallSummary::to_json() const {
  json j{{"live", live}, {"cached", cached}};
  j["live_by_role"] = json::object();
  j["cached_by_role"] = json::object();
  for (const auto& [r, n] : live_by_role) j["live_by_role"][std::string(cvr::to_string(r))] = n;
  for (const auto& [r, n] : cached_by_role) j["cached_by_role"][std::string(cvr::to_string(r))] = n;
  return j;
}

std::vector<double> mean_pool(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw DimensionMismatch("cannot pool zero vectors");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw DimensionMismatch("pooled vectors differ in dimension");
  }
  // Summing in a canonical order makes the result bit-identical under any
  // permutation of the inputs.
  std::vector<const std::vector<double>*> order;
  for (const auto& v : vectors) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](const auto* a, const auto* b) { return *a < *b; });
  std::vector<double> out(dim, 0.0);
  for (const auto* v : order) {
    for (std::size_t i = 0; i < dim; ++i) out[i] += (*v)[i];
  }
  for (double& x : out) x /= static_cast<double>(vectors.size());
  return out;
}

// ---------------------------------------------------------------------------

ResponseCache::ResponseCache(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
  if (dir_) std::filesystem::create_directories(*dir_);
}

std::optional<ModelResponse> ResponseCache::lookup(const ModelRequest& request) {
  const std::string key = request.canonical();
  std::lock_guard lock(mu_);
  if (auto it = entries_.find(key); it != entries_.end()) return it->second;
  if (!dir_) return std::nullopt;
  const auto path = *dir_ / (sha256_hex(key) + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  json j;
  try {
    in >> j;
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (j.value("request", std::string()) != key) return std::nullopt;
  auto response = ModelResponse::from_json(j.at("response"));
  entries_.emplace(key, response);
  return response;
}

void ResponseCache::store(const ModelRequest& request, const ModelResponse& response) {
  const std::string key = request.canonical();
  std::lock_guard lock(mu_);
  entries_.insert_or_assign(key, response);
  if (!dir_) return;
  const auto path = *dir_ / (sha256_hex(key) + ".json");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    out << json{{"request", key}, {"response", response.to_json()}}.dump();
  }
  std::filesystem::rename(tmp, path);
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------

struct Gateway::Slot {
  BackendProfile profile;
  std::shared_ptr<Backend> backend;
  std::mutex mu;
  std::condition_variable cv;
  int in_flight = 0;
};

namespace {

class InFlightGuard {
 public:
  InFlightGuard(std::mutex& mu, std::condition_variable& cv, int& in_flight, int limit)
      : mu_(mu), cv_(cv), in_flight_(in_flight) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < limit; });
    ++in_flight_;
  }
  ~InFlightGuard() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }
  InFlightGuard(const InFlightGuard&) = delete;
  InFlightGuard& operator=(const InFlightGuard&) = delete;

 private:
  std::mutex& mu_;
  std::condition_variable& cv_;
  int& in_flight_;
};

}  // namespace

Gateway::Gateway(GatewayOptions options) : options_(std::move(options)), cache_(options_.cache_dir) {}

Gateway::~Gateway() = default;

void Gateway::attach(BackendProfile profile, std::shared_ptr<Backend> backend) {
  profile.validate();
  if (!backend) throw ConfigError("null backend for role " + std::string(to_string(profile.role)));
  auto s = std::make_unique<Slot>();
  const Role role = profile.role;
  s->profile = std::move(profile);
  s->backend = std::move(backend);
  slots_[role] = std::move(s);
}

bool Gateway::has(Role role) const { return slots_.count(role) > 0; }

Gateway::Slot& Gateway::slot(Role role) const {
  auto it = slots_.find(role);
  if (it == slots_.end()) throw ConfigError("no backend attached for role " + std::string(to_string(role)));
  return *it->second;
}

const BackendProfile& Gateway::profile(Role role) const { return slot(role).profile; }

ModelResponse Gateway::dispatch(ModelRequest request) {
  Slot& s = slot(request.role);
  request.model = s.profile.model_name;
  const std::uint64_t seq = sequence_.fetch_add(1);
  const auto start = Clock::now();
  const std::string key = request.canonical();
  const std::string request_digest = sha256_hex(key);

  auto record = [&](const ModelResponse* response, bool hit, int attempts) {
    CallRecord rec;
    rec.sequence = seq;
    rec.role = request.role;
    rec.request_digest = request_digest;
    rec.response_digest = response ? response->digest() : std::string();
    rec.latency = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start);
    rec.cache_hit = hit;
    rec.attempts = attempts;
    std::lock_guard lock(log_mu_);
    log_.push_back(std::move(rec));
  };

  std::optional<std::promise<ModelResponse>> owner;
  if (options_.cache_enabled) {
    std::shared_future<ModelResponse> waiting;
    {
      std::lock_guard lock(pending_mu_);
      if (auto hit = cache_.lookup(request)) {
        record(&*hit, true, 0);
        return *hit;
      }
      if (auto it = pending_.find(key); it != pending_.end()) {
        waiting = it->second;
      } else {
        owner.emplace();
        pending_.emplace(key, owner->get_future().share());
      }
    }
    if (waiting.valid()) {
      ModelResponse r = waiting.get();
      record(&r, true, 0);
      return r;
    }
  }

  int attempts = 0;
  try {
    ModelResponse response = [&] {
      InFlightGuard guard(s.mu, s.cv, s.in_flight, s.profile.max_in_flight);
      for (;;) {
        ++attempts;
        try {
          return s.backend->invoke(request);
        } catch (const TransientError& e) {
          if (attempts > s.profile.max_retries) {
            throw BackendUnavailable(std::string(to_string(request.role)) + " unavailable after " +
                                     std::to_string(attempts) + " attempts: " + e.what());
          }
          std::this_thread::sleep_for(s.profile.backoff * (1LL << std::min(attempts - 1, 20)));
        }
      }
    }();
    if (owner) {
      std::lock_guard lock(pending_mu_);
      cache_.store(request, response);
      owner->set_value(response);
      pending_.erase(key);
    }
    record(&response, false, attempts);
    return response;
  } catch (...) {
    if (owner) {
      std::lock_guard lock(pending_mu_);
      owner->set_exception(std::current_exception());
      pending_.erase(key);
    }
    record(nullptr, false, attempts);
    throw;
  }
}

void Gateway::check_dimension(Role role, std::size_t dim) {
  std::lock_guard lock(dim_mu_);
  auto [it, inserted] = dims_.emplace(role, dim);
  if (!inserted && it->second != dim) {
    throw DimensionMismatch(std::string(to_string(role)) + " returned dimension " + std::to_string(dim) +
                            ", expected " + std::to_string(it->second));
  }
}

std::string Gateway::complete(Role role, const std::vector<ChatMessage>& messages, const SamplingParams& params) {
  if (role != Role::TextLLM && role != Role::Judge) {
    throw ConfigError("complete() requires the text_llm or judge role");
  }
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  ModelRequest req{role, {}, {{"messages", std::move(msgs)}}, params};
  return dispatch(std::move(req)).text;
}

std::string Gateway::caption(const ImageRef& image, std::string_view prompt) {
  if (trim(image.uri).empty()) throw ImageFetchError("image '" + image.id + "' has no uri");
  ModelRequest req{Role::Captioner, {}, {{"prompt", std::string(prompt)}, {"image", {{"uri", image.uri}}}}, {}};
  return dispatch(std::move(req)).text;
}

std::vector<double> Gateway::embed_text(std::string_view text) {
  ModelRequest req{Role::TextEmbedder, {}, {{"input", json::array({std::string(text)})}}, {}};
  auto r = dispatch(std::move(req));
  if (r.vectors.size() != 1) throw ProtocolError("text embedder returned " + std::to_string(r.vectors.size()) + " vectors");
  check_dimension(Role::TextEmbedder, r.vectors.front().size());
  return std::move(r.vectors.front());
}

std::vector<double> Gateway::embed_multimodal(std::string_view text, std::span<const ImageRef> images) {
  if (images.empty()) throw ConfigError("multimodal embedding needs at least one image");
  json inputs = json::array();
  for (const auto& img : images) {
    if (trim(img.uri).empty()) throw ImageFetchError("image '" + img.id + "' has no uri");
    inputs.push_back({{"text", std::string(text)}, {"image", {{"uri", img.uri}}}});
  }
  ModelRequest req{Role::MultimodalEmbedder, {}, {{"inputs", std::move(inputs)}}, {}};
  auto r = dispatch(std::move(req));
  if (r.vectors.size() != images.size()) {
    throw ProtocolError("multimodal embedder returned " + std::to_string(r.vectors.size()) + " vectors for " +
                        std::to_string(images.size()) + " images");
  }
  auto pooled = mean_pool(r.vectors);
  check_dimension(Role::MultimodalEmbedder, pooled.size());
  return pooled;
}

std::vector<CallRecord> Gateway::log() const {
  std::lock_guard lock(log_mu_);
  auto out = log_;
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sequence < b.sequence; });
  return out;
}

CallSummary Gateway::summary() const {
  CallSummary s;
  std::lock_guard lock(log_mu_);
  for (const auto& rec : log_) {
    if (rec.cache_hit) {
      ++s.cached;
      ++s.cached_by_role[rec.role];
    } else {
      ++s.live;
      ++s.live_by_role[rec.role];
    }
  }
  return s;
}

void Gateway::clear_log() {
  std::lock_guard lock(log_mu_);
  log_.clear();
}

}  // namespace cvr
