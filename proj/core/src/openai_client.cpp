#include "polyroute/openai_client.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

namespace polyroute::backends {

namespace {

struct ParsedUrl {
    std::string origin;       // scheme://host:port
    std::string path_prefix;  // possibly empty
};

ParsedUrl parse_base_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw InvalidInput("base_url must include a scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, path_start), prefix};
}

std::string resolve_key(const std::string& key_env) {
    if (key_env.empty()) return "";
    const char* value = std::getenv(key_env.c_str());
    if (!value || !*value)
        throw BackendUnavailable("credential env var not set: " + key_env);
    return value;
}

void backoff_sleep(const RetryPolicy& retry, int attempt) {
    static thread_local std::mt19937 rng{std::random_device{}()};
    const double base = retry.backoff_base_s * std::pow(2.0, attempt);
    std::uniform_real_distribution<double> jitter(0.0, retry.jitter_frac * base);
    std::this_thread::sleep_for(std::chrono::duration<double>(base + jitter(rng)));
}

}  // namespace

nlohmann::json post_json_with_retry(const ProviderEndpoint& endpoint,
                                    const std::string& api_key, const std::string& path,
                                    const nlohmann::json& payload,
                                    const RetryPolicy& retry) {
    const auto url = parse_base_url(endpoint.base_url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(120);

    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

    const std::string body = payload.dump();
    bool rate_limited = false;
    std::string last_error;
    for (int attempt = 0; attempt < retry.max_attempts; ++attempt) {
        if (attempt > 0) backoff_sleep(retry, attempt - 1);
        auto res = client.Post(url.path_prefix + path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429) {
            rate_limited = true;
            last_error = "HTTP 429";
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw BackendUnavailable(endpoint.provider_id + ": HTTP " +
                                     std::to_string(res->status) + ": " + res->body);
        auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded())
            throw ProtocolError(endpoint.provider_id + ": response is not valid JSON");
        return parsed;
    }
    if (rate_limited)
        throw RateLimited(endpoint.provider_id + ": still rate-limited after " +
                          std::to_string(retry.max_attempts) + " attempts");
    throw BackendUnavailable(endpoint.provider_id + ": " + last_error);
}

OpenAiChatBackend::OpenAiChatBackend(ProviderEndpoint endpoint, RetryPolicy retry)
    : endpoint_(std::move(endpoint)), retry_(retry), api_key_(resolve_key(endpoint_.key_env)) {}

std::string OpenAiChatBackend::complete(const ChatRequest& req) {
    req.validate();
    nlohmann::json messages = nlohmann::json::array();
    if (!req.system_text.empty())
        messages.push_back({{"role", "system"}, {"content", req.system_text}});
    messages.push_back({{"role", "user"}, {"content", req.user_text}});
    const nlohmann::json payload = {{"model", req.model_id},
                                    {"messages", messages},
                                    {"temperature", req.temperature},
                                    {"max_tokens", req.max_tokens}};
    calls_.fetch_add(1);
    const auto response =
        post_json_with_retry(endpoint_, api_key_, "/chat/completions", payload, retry_);
    try {
        return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError(endpoint_.provider_id + ": malformed chat completion response");
    }
}

OpenAiEmbeddingBackend::OpenAiEmbeddingBackend(ProviderEndpoint endpoint, std::string model_id,
                                               int expected_dimension, RetryPolicy retry)
    : endpoint_(std::move(endpoint)),
      model_id_(std::move(model_id)),
      expected_dimension_(expected_dimension),
      retry_(retry),
      api_key_(resolve_key(endpoint_.key_env)) {
    if (expected_dimension_ < 1) throw InvalidInput("embedding dimension must be >= 1");
}

std::vector<EmbeddingVector> OpenAiEmbeddingBackend::embed(
    const std::vector<std::string>& texts) {
    if (texts.empty()) throw InvalidInput("embed() requires at least one text");
    const nlohmann::json payload = {{"model", model_id_}, {"input", texts}};
    calls_.fetch_add(1);
    const auto response =
        post_json_with_retry(endpoint_, api_key_, "/embeddings", payload, retry_);

    std::vector<EmbeddingVector> out(texts.size());
    try {
        const auto& data = response.at("data");
        if (data.size() != texts.size())
            throw ProtocolError(endpoint_.provider_id + ": embedding count mismatch");
        for (const auto& item : data) {
            const auto index = item.at("index").get<std::size_t>();
            if (index >= out.size())
                throw ProtocolError(endpoint_.provider_id + ": embedding index out of range");
            out[index] = {endpoint_.provider_id, expected_dimension_,
                          item.at("embedding").get<std::vector<double>>()};
        }
    } catch (const nlohmann::json::exception&) {
        throw ProtocolError(endpoint_.provider_id + ": malformed embeddings response");
    }
    for (auto& v : out) v.validate();
    return out;
}

}  // namespace polyroute::backends
