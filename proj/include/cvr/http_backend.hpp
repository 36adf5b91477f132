#pragma once

#include <string>

#include "cvr/gateway.hpp"

namespace cvr {

// Talks to one remote endpoint over HTTP(S) using the common wire formats:
//   TextLLM / Judge      chat-completions: {model, messages, temperature,
//                        max_tokens, seed} -> choices[0].message.content
//   Captioner            {model, prompt, image: {uri} | {base64}} -> {caption}
//   TextEmbedder         {model, input: [text]} -> {data: [{embedding}]}
//   MultimodalEmbedder   {model, inputs: [{text, image}]} -> {data: [{embedding}]}
// Local image paths are read and sent as base64; http(s) and data URIs are
// passed through.
class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendProfile profile);

  ModelResponse invoke(const ModelRequest& request) override;

  /// Builds the JSON body sent for a request (exposed for tests).
  nlohmann::json wire_body(const ModelRequest& request) const;
  /// Parses a response body for the profile's role.
  ModelResponse parse_body(const std::string& body) const;

 private:
  BackendProfile profile_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

}  // namespace cvr
