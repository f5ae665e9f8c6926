#pragma once

#include <atomic>
#include <string>
#include <vector>

#include "polyroute/errors.hpp"

namespace polyroute::backends {

struct EmbeddingVector {
    std::string provider_id;
    int dimension = 0;
    std::vector<double> values;

    void validate() const;  // size matches dimension, entries finite
};

class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    /// One vector per input text, all with the provider's fixed dimension.
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) = 0;
    virtual std::string provider_id() const = 0;
    virtual int dimension() const = 0;
    virtual long call_count() const = 0;
};

/// Deterministic bag-of-tokens feature hashing: each lowercase token lands
/// in hash(token) % dim with a hash-derived sign, then the vector is
/// L2-normalized. Identical texts always embed identically.
class HashedEmbedder : public EmbeddingBackend {
public:
    explicit HashedEmbedder(int dim, std::string id = "");

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;
    std::string provider_id() const override { return id_; }
    int dimension() const override { return dim_; }
    long call_count() const override { return calls_.load(); }

    std::vector<double> embed_one(const std::string& text) const;

private:
    int dim_;
    std::string id_;
    std::atomic<long> calls_{0};
};

}  // namespace polyroute::backends
