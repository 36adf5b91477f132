#include "cvr/http_backend.hpp"

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <httplib.h>

#include "cvr/error.hpp"

namespace cvr {

using nlohmann::json;

namespace {

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 300;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

bool is_remote_uri(const std::string& uri) {
  return uri.rfind("http://", 0) == 0 || uri.rfind("https://", 0) == 0 || uri.rfind("data:", 0) == 0;
}

json image_field(const json& image) {
  std::string uri = image.value("uri", std::string());
  if (is_remote_uri(uri)) return {{"uri", uri}};
  if (uri.rfind("file://", 0) == 0) uri = uri.substr(7);
  std::ifstream in(uri, std::ios::binary);
  if (!in) throw ImageFetchError("cannot read image '" + uri + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return {{"base64", httplib::detail::base64_encode(buf.str())}};
}

std::vector<double> embedding_of(const json& item) {
  return item.at("embedding").get<std::vector<double>>();
}

}  // namespace

HttpBackend::HttpBackend(BackendProfile profile) : profile_(std::move(profile)) {
  profile_.validate();
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(profile_.endpoint, m, url)) {
    throw ConfigError("endpoint '" + profile_.endpoint + "' is not an http(s) URL");
  }
  base_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

json HttpBackend::wire_body(const ModelRequest& request) const {
  json body = request.payload;
  body["model"] = request.model.empty() ? profile_.model_name : request.model;
  switch (request.role) {
    case Role::TextLLM:
    case Role::Judge:
      body["temperature"] = request.params.temperature;
      body["max_tokens"] = request.params.max_tokens;
      if (request.params.seed) body["seed"] = *request.params.seed;
      break;
    case Role::Captioner:
      body["image"] = image_field(request.payload.at("image"));
      break;
    case Role::MultimodalEmbedder:
      for (auto& in : body["inputs"]) in["image"] = image_field(in.at("image"));
      break;
    case Role::TextEmbedder:
      break;
  }
  return body;
}

ModelResponse HttpBackend::parse_body(const std::string& body) const {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    throw ProtocolError("response is not JSON: " + excerpt(body));
  }
  ModelResponse r;
  try {
    switch (profile_.role) {
      case Role::TextLLM:
      case Role::Judge: {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        r.text = content.is_null() ? std::string() : content.get<std::string>();
        break;
      }
      case Role::Captioner:
        r.text = j.at("caption").get<std::string>();
        break;
      case Role::TextEmbedder:
      case Role::MultimodalEmbedder:
        for (const auto& item : j.at("data")) r.vectors.push_back(embedding_of(item));
        break;
    }
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("unexpected response shape (") + e.what() + "): " + excerpt(body));
  }
  return r;
}

ModelResponse HttpBackend::invoke(const ModelRequest& request) {
  const std::string body = wire_body(request).dump();

  httplib::Client client(base_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(profile_.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(profile_.timeout).count() % 1'000'000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (!profile_.api_key_env.empty()) {
    if (const char* key = std::getenv(profile_.api_key_env.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  auto res = client.Post(path_, headers, body, "application/json");
  if (!res) {
    throw TransientError("transport error talking to " + profile_.endpoint + ": " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransientError("HTTP " + std::to_string(res->status) + " from " + profile_.endpoint + ": " +
                         excerpt(res->body));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError("HTTP " + std::to_string(res->status) + " from " + profile_.endpoint + ": " +
                        excerpt(res->body));
  }
  return parse_body(res->body);
}

}  // namespace cvr
