#include "polyroute/embedding.hpp"

#include <cmath>

#include "polyroute/response_cache.hpp"

namespace polyroute::backends {

void EmbeddingVector::validate() const {
    if (static_cast<int>(values.size()) != dimension)
        throw ProtocolError("embedding size does not match declared dimension for " +
                            provider_id);
    for (double v : values)
        if (!std::isfinite(v)) throw ProtocolError("non-finite embedding entry from " + provider_id);
}

HashedEmbedder::HashedEmbedder(int dim, std::string id)
    : dim_(dim), id_(id.empty() ? "mock-hash-" + std::to_string(dim) : std::move(id)) {
    if (dim_ < 1) throw InvalidInput("embedding dimension must be >= 1");
}

std::vector<double> HashedEmbedder::embed_one(const std::string& text) const {
    std::vector<double> acc(dim_, 0.0);
    std::string token;
    auto flush = [&] {
        if (token.empty()) return;
        const std::uint64_t h = fnv1a64(token);
        const int bin = static_cast<int>(h % static_cast<std::uint64_t>(dim_));
        const double sign = ((h >> 32) & 1u) ? 1.0 : -1.0;
        acc[bin] += sign;
        token.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c) || c == '_' || c >= 0x80) {
            token.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double v : acc) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : acc) v /= norm;
    }
    return acc;
}

std::vector<EmbeddingVector> HashedEmbedder::embed(const std::vector<std::string>& texts) {
    if (texts.empty()) throw InvalidInput("embed() requires at least one text");
    calls_.fetch_add(1);
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back({id_, dim_, embed_one(t)});
    return out;
}

}  // namespace polyroute::backends
