#pragma once

#include <chrono>
#include <optional>
#include <string>

#include <json.hpp>

namespace gptre {

// A JSON-over-HTTP endpoint. The bearer token, when set, is sent as
// "Authorization: Bearer <token>".
struct HttpEndpoint {
  std::string url;  // scheme://host[:port]/path
  std::optional<std::string> token;
  std::chrono::seconds timeout{60};

  // url from $<url_var>; token from $<token_var> when set. Throws UsageError if
  // the url variable is missing.
  static HttpEndpoint from_env(const char* url_var, const char* token_var);
};

// POSTs body and returns the parsed JSON response. Connection failures, 429 and
// 5xx raise TransientProviderError; other non-2xx statuses and unparseable
// bodies raise ProviderError.
nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body);

}  // namespace gptre
