#pragma once

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "polyroute/chat_backend.hpp"
#include "polyroute/embedding.hpp"

namespace polyroute::backends {

struct RetryPolicy {
    int max_attempts = 3;
    double backoff_base_s = 1.0;
    double jitter_frac = 0.25;
};

/// Where a provider lives and which environment variable holds its key.
/// Keys are never read from config files.
struct ProviderEndpoint {
    std::string provider_id;
    std::string base_url;  // e.g. http://host:port/v1
    std::string key_env;   // e.g. PR_OPENAI_KEY; empty = unauthenticated
};

/// Chat client for any OpenAI-compatible /chat/completions endpoint.
class OpenAiChatBackend : public ChatBackend {
public:
    OpenAiChatBackend(ProviderEndpoint endpoint, RetryPolicy retry = {});

    std::string complete(const ChatRequest& req) override;
    std::string provider_id() const override { return endpoint_.provider_id; }
    long call_count() const override { return calls_.load(); }

private:
    ProviderEndpoint endpoint_;
    RetryPolicy retry_;
    std::string api_key_;
    std::atomic<long> calls_{0};
};

/// Embedding client for an OpenAI-compatible /embeddings endpoint.
class OpenAiEmbeddingBackend : public EmbeddingBackend {
public:
    OpenAiEmbeddingBackend(ProviderEndpoint endpoint, std::string model_id,
                           int expected_dimension, RetryPolicy retry = {});

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    std::string provider_id() const override { return endpoint_.provider_id; }
    int dimension() const override { return expected_dimension_; }
    long call_count() const override { return calls_.load(); }

private:
    ProviderEndpoint endpoint_;
    std::string model_id_;
    int expected_dimension_;
    RetryPolicy retry_;
    std::string api_key_;
    std::atomic<long> calls_{0};
};

/// POSTs `payload` to base_url+path with retry/backoff; returns the parsed
/// body. Shared by the chat and embedding clients.
nlohmann::json post_json_with_retry(const ProviderEndpoint& endpoint,
                                    const std::string& api_key, const std::string& path,
                                    const nlohmann::json& payload, const RetryPolicy& retry);

}  // namespace polyroute::backends
