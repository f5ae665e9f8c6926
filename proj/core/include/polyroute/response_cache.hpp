#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include <json.hpp>

#include "polyroute/chat_backend.hpp"
#include "polyroute/embedding.hpp"
#include "polyroute/translation.hpp"

namespace polyroute::backends {

/// 64-bit FNV-1a; the cache key hash.
std::uint64_t fnv1a64(std::string_view data);

/// Deterministic key for a (provider, model, payload) triple. Payload field
/// order is irrelevant because nlohmann::json objects serialize with sorted
/// keys.
std::string cache_key(const std::string& provider, const std::string& model,
                      const nlohmann::json& canonical_payload);

/// Append-only JSONL store, one file per provider, with an in-memory index.
/// Concurrent readers are fine; appends are serialized.
class ResponseCache {
public:
    explicit ResponseCache(std::filesystem::path dir);

    std::optional<std::string> lookup(const std::string& provider, const std::string& key) const;
    void store(const std::string& provider, const std::string& key, const std::string& response);

    std::size_t entry_count(const std::string& provider) const;

private:
    struct ProviderFile {
        std::unordered_map<std::string, std::string> index;
        std::filesystem::path path;
    };

    ProviderFile& provider_file(const std::string& provider) const;

    std::filesystem::path dir_;
    mutable std::mutex mutex_;
    mutable std::unordered_map<std::string, ProviderFile> files_;
};

/// Chat backend wrapper that serves repeated requests from the cache, so a
/// warmed experiment re-run issues zero transport calls.
class CachedChatBackend : public ChatBackend {
public:
    CachedChatBackend(std::shared_ptr<ChatBackend> inner, std::shared_ptr<ResponseCache> cache);

    std::string complete(const ChatRequest& req) override;
    std::string provider_id() const override { return inner_->provider_id(); }
    long call_count() const override { return inner_->call_count(); }

private:
    std::shared_ptr<ChatBackend> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

class CachedTranslationBackend : public TranslationBackend {
public:
    CachedTranslationBackend(std::shared_ptr<TranslationBackend> inner,
                             std::shared_ptr<ResponseCache> cache);

    std::string translate(const TranslationJob& job) override;
    std::string provider_id() const override { return inner_->provider_id(); }
    long call_count() const override { return inner_->call_count(); }

private:
    std::shared_ptr<TranslationBackend> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

class CachedEmbeddingBackend : public EmbeddingBackend {
public:
    CachedEmbeddingBackend(std::shared_ptr<EmbeddingBackend> inner,
                           std::shared_ptr<ResponseCache> cache);

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    std::string provider_id() const override { return inner_->provider_id(); }
    int dimension() const override { return inner_->dimension(); }
    long call_count() const override { return inner_->call_count(); }

private:
    std::shared_ptr<EmbeddingBackend> inner_;
    std::shared_ptr<ResponseCache> cache_;
};

}  // namespace polyroute::backends
