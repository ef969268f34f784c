#include "gptre/http.hpp"

#include <httplib.h>

#include <cstdlib>

#include "gptre/errors.hpp"

namespace gptre {

HttpEndpoint HttpEndpoint::from_env(const char* url_var, const char* token_var) {
  const char* url = std::getenv(url_var);
  if (url == nullptr || *url == '\0') {
    throw UsageError(std::string("environment variable ") + url_var + " is not set");
  }
  HttpEndpoint endpoint;
  endpoint.url = url;
  if (const char* token = std::getenv(token_var); token != nullptr && *token != '\0') {
    endpoint.token = token;
  }
  return endpoint;
}

nlohmann::json post_json(const HttpEndpoint& endpoint, const nlohmann::json& body) {
  const auto scheme_end = endpoint.url.find("://");
  if (scheme_end == std::string::npos) throw UsageError("endpoint url lacks a scheme: " + endpoint.url);
  const auto path_begin = endpoint.url.find('/', scheme_end + 3);
  const std::string base = endpoint.url.substr(0, path_begin);
  const std::string path = path_begin == std::string::npos ? "/" : endpoint.url.substr(path_begin);

  httplib::Client client(base);
  client.set_connection_timeout(endpoint.timeout);
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(endpoint.timeout);
  httplib::Headers headers;
  if (endpoint.token) headers.emplace("Authorization", "Bearer " + *endpoint.token);

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    throw TransientProviderError("POST " + endpoint.url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransientProviderError("POST " + endpoint.url + " returned " + std::to_string(res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProviderError("POST " + endpoint.url + " returned " + std::to_string(res->status) + ": " + res->body);
  }
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProviderError("POST " + endpoint.url + " returned invalid JSON: " + e.what());
  }
}

}  // namespace gptre
