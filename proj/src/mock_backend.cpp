#include "cvr/mock_backend.hpp"

#include <algorithm>
#include <thread>

#include "cvr/error.hpp"
#include "cvr/text.hpp"

namespace cvr {

using nlohmann::json;

void MockBackend::script(Role role, std::vector<MockReply> replies) {
  std::lock_guard lock(mu_);
  auto& q = scripts_[role];
  for (auto& r : replies) q.push_back(std::move(r));
}

void MockBackend::script_text(Role role, const std::vector<std::string>& replies) {
  std::vector<MockReply> r;
  for (const auto& s : replies) r.push_back(MockReply::reply(s));
  script(role, std::move(r));
}

void MockBackend::set_responder(Role role, Responder responder) {
  std::lock_guard lock(mu_);
  responders_[role] = std::move(responder);
}

void MockBackend::set_latency(std::chrono::milliseconds latency) {
  std::lock_guard lock(mu_);
  latency_ = latency;
}

ModelResponse MockBackend::invoke(const ModelRequest& request) {
  std::optional<MockReply> reply;
  Responder responder;
  std::size_t index = 0;
  std::chrono::milliseconds latency{0};
  {
    std::lock_guard lock(mu_);
    index = log_.size();
    log_.push_back({next_sequence_++, request.role, request.canonical(), true});
    auto& q = scripts_[request.role];
    if (!q.empty()) {
      reply = std::move(q.front());
      q.pop_front();
    } else if (auto it = responders_.find(request.role); it != responders_.end()) {
      responder = it->second;
    }
    latency = latency_;
    max_in_flight_ = std::max(max_in_flight_, ++in_flight_);
  }

  auto fail = [&](auto&& error) {
    {
      std::lock_guard lock(mu_);
      log_[index].ok = false;
      --in_flight_;
    }
    throw error;
  };

  if (latency.count() > 0) std::this_thread::sleep_for(latency);

  if (!reply && !responder) {
    fail(ScriptExhausted("mock script exhausted for role " + std::string(to_string(request.role))));
  }
  ModelResponse response;
  if (reply) {
    switch (reply->kind) {
      case MockReply::Kind::Text: response.text = reply->text; break;
      case MockReply::Kind::Vectors: response.vectors = reply->vectors; break;
      case MockReply::Kind::Transient: fail(TransientError(reply->text)); break;
      case MockReply::Kind::Protocol: fail(ProtocolError(reply->text)); break;
      case MockReply::Kind::ImageFetch: fail(ImageFetchError(reply->text)); break;
    }
  } else {
    try {
      response = responder(request);
    } catch (...) {
      std::lock_guard lock(mu_);
      log_[index].ok = false;
      --in_flight_;
      throw;
    }
  }
  std::lock_guard lock(mu_);
  --in_flight_;
  return response;
}

std::vector<MockCall> MockBackend::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::vector<Role> MockBackend::roles() const {
  std::lock_guard lock(mu_);
  std::vector<Role> out;
  for (const auto& c : log_) out.push_back(c.role);
  return out;
}

std::size_t MockBackend::calls(Role role) const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(std::count_if(log_.begin(), log_.end(), [&](const auto& c) { return c.role == role; }));
}

std::size_t MockBackend::remaining(Role role) const {
  std::lock_guard lock(mu_);
  auto it = scripts_.find(role);
  return it == scripts_.end() ? 0 : it->second.size();
}

int MockBackend::max_in_flight_seen() const {
  std::lock_guard lock(mu_);
  return max_in_flight_;
}

void MockBackend::clear_log() {
  std::lock_guard lock(mu_);
  log_.clear();
}

// ---------------------------------------------------------------------------

std::vector<double> hash_embed(std::string_view text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  if (dim == 0) return v;
  for (const auto& token : tokenize(text)) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : token) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    const std::size_t bucket = static_cast<std::size_t>(h % dim);
    v[bucket] += ((h >> 63) & 1U) ? -1.0 : 1.0;
  }
  return v;
}

Responder hash_embedder(std::size_t dim) {
  return [dim](const ModelRequest& request) {
    ModelResponse r;
    if (request.role == Role::TextEmbedder) {
      for (const auto& text : request.payload.at("input")) r.vectors.push_back(hash_embed(text.get<std::string>(), dim));
    } else if (request.role == Role::MultimodalEmbedder) {
      for (const auto& in : request.payload.at("inputs")) {
        const std::string joined =
            in.value("text", std::string()) + " image " + in.at("image").value("uri", std::string());
        r.vectors.push_back(hash_embed(joined, dim));
      }
    } else {
      throw ProtocolError("hash_embedder cannot answer role " + std::string(to_string(request.role)));
    }
    return r;
  };
}

Responder rule_responder(std::vector<std::pair<std::string, std::string>> rules, std::string fallback) {
  return [rules = std::move(rules), fallback = std::move(fallback)](const ModelRequest& request) {
    std::string haystack;
    if (auto it = request.payload.find("messages"); it != request.payload.end() && !it->empty()) {
      haystack = it->back().value("content", std::string());
    } else if (auto p = request.payload.find("prompt"); p != request.payload.end()) {
      haystack = p->get<std::string>();
    }
    ModelResponse r;
    r.text = fallback;
    for (const auto& [needle, reply] : rules) {
      if (haystack.find(needle) != std::string::npos) {
        r.text = reply;
        break;
      }
    }
    return r;
  };
}

}  // namespace cvr
