#include "polyroute/response_cache.hpp"

#include <fstream>

namespace polyroute::backends {

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string cache_key(const std::string& provider, const std::string& model,
                      const nlohmann::json& canonical_payload) {
    const std::string blob = provider + "\x1f" + model + "\x1f" + canonical_payload.dump();
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(blob)));
    return buf;
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

ResponseCache::ProviderFile& ResponseCache::provider_file(const std::string& provider) const {
    auto it = files_.find(provider);
    if (it != files_.end()) return it->second;

    ProviderFile pf;
    pf.path = dir_ / (provider + ".jsonl");
    if (std::filesystem::exists(pf.path)) {
        std::ifstream in(pf.path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("key") || !j.contains("response")) continue;
            pf.index[j["key"].get<std::string>()] = j["response"].get<std::string>();
        }
    }
    return files_.emplace(provider, std::move(pf)).first->second;
}

std::optional<std::string> ResponseCache::lookup(const std::string& provider,
                                                 const std::string& key) const {
    std::lock_guard lock(mutex_);
    auto& pf = provider_file(provider);
    if (auto it = pf.index.find(key); it != pf.index.end()) return it->second;
    return std::nullopt;
}

void ResponseCache::store(const std::string& provider, const std::string& key,
                          const std::string& response) {
    std::lock_guard lock(mutex_);
    auto& pf = provider_file(provider);
    if (pf.index.count(key)) return;
    pf.index[key] = response;
    const nlohmann::json entry = {{"key", key},
                                  {"response", response},
                                  {"created_at", static_cast<long long>(std::time(nullptr))}};
    std::ofstream out(pf.path, std::ios::app);
    out << entry.dump() << "\n";
}

std::size_t ResponseCache::entry_count(const std::string& provider) const {
    std::lock_guard lock(mutex_);
    return provider_file(provider).index.size();
}

CachedChatBackend::CachedChatBackend(std::shared_ptr<ChatBackend> inner,
                                     std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::string CachedChatBackend::complete(const ChatRequest& req) {
    req.validate();
    const std::string key =
        cache_key(inner_->provider_id(), req.model_id, req.canonical_payload());
    if (auto hit = cache_->lookup(inner_->provider_id(), key)) return *hit;
    std::string response = inner_->complete(req);
    cache_->store(inner_->provider_id(), key, response);
    return response;
}

CachedTranslationBackend::CachedTranslationBackend(std::shared_ptr<TranslationBackend> inner,
                                                   std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::string CachedTranslationBackend::translate(const TranslationJob& job) {
    job.validate();
    const nlohmann::json payload = {{"text", job.text},
                                    {"source", job.source_lang.code},
                                    {"target", job.target_lang.code}};
    const std::string key = cache_key(inner_->provider_id(), "translate", payload);
    if (auto hit = cache_->lookup(inner_->provider_id(), key)) return *hit;
    std::string response = inner_->translate(job);
    cache_->store(inner_->provider_id(), key, response);
    return response;
}

CachedEmbeddingBackend::CachedEmbeddingBackend(std::shared_ptr<EmbeddingBackend> inner,
                                               std::shared_ptr<ResponseCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

std::vector<EmbeddingVector> CachedEmbeddingBackend::embed(
    const std::vector<std::string>& texts) {
    if (texts.empty()) throw InvalidInput("embed() requires at least one text");
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::string> misses;
    std::vector<std::size_t> miss_pos;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::string key =
            cache_key(inner_->provider_id(), "embed", nlohmann::json{{"text", texts[i]}});
        if (auto hit = cache_->lookup(inner_->provider_id(), key)) {
            const auto j = nlohmann::json::parse(*hit);
            out[i] = {inner_->provider_id(), inner_->dimension(),
                      j.get<std::vector<double>>()};
            out[i].validate();
        } else {
            misses.push_back(texts[i]);
            miss_pos.push_back(i);
        }
    }
    if (!misses.empty()) {
        auto fresh = inner_->embed(misses);
        if (fresh.size() != misses.size())
            throw ProtocolError("embedding backend returned wrong batch size");
        for (std::size_t i = 0; i < fresh.size(); ++i) {
            fresh[i].validate();
            const std::string key = cache_key(inner_->provider_id(), "embed",
                                              nlohmann::json{{"text", misses[i]}});
            cache_->store(inner_->provider_id(), key, nlohmann::json(fresh[i].values).dump());
            out[miss_pos[i]] = std::move(fresh[i]);
        }
    }
    return out;
}

}  // namespace polyroute::backends
