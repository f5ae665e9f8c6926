#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "polyroute/config_space.hpp"
#include "polyroute/embedding.hpp"
#include "polyroute/errors.hpp"

namespace polyroute::retrieval {

struct Document {
    std::string doc_id;
    LanguageTag language;
    std::string text;
};

struct DocumentChunk {
    std::string chunk_id;
    std::string doc_id;
    LanguageTag language;
    std::string text;
    // Codepoint offsets into the source document, half-open.
    std::size_t span_start = 0;
    std::size_t span_end = 0;
};

// Sliding window over codepoints: consecutive chunks share `overlap`
// codepoints. chunk_ids are "<doc_id>#<ordinal>".
std::vector<DocumentChunk> chunk(const Document& doc, int max_chars, int overlap);

struct IndexRow {
    std::string chunk_id;
    std::vector<double> vector;  // unit L2 norm
};

class VectorIndex {
 public:
    VectorIndex() = default;
    VectorIndex(std::string provider_id, int dimension, std::vector<IndexRow> rows);

    const std::string& provider_id() const { return provider_id_; }
    int dimension() const { return dimension_; }
    const std::vector<IndexRow>& rows() const { return rows_; }

    void save(const std::filesystem::path& file) const;
    static VectorIndex load(const std::filesystem::path& file);

 private:
    std::string provider_id_;
    int dimension_ = 0;
    std::vector<IndexRow> rows_;
};

class ChunkStore {
 public:
    void add(DocumentChunk chunk);
    const DocumentChunk& get(const std::string& chunk_id) const;  // throws IndexError
    std::size_t size() const { return order_.size(); }
    const std::vector<std::string>& ids() const { return order_; }

    void save_jsonl(const std::filesystem::path& file) const;
    static ChunkStore load_jsonl(const std::filesystem::path& file);

 private:
    std::map<std::string, DocumentChunk> by_id_;
    std::vector<std::string> order_;
};

// One normalized row per chunk, in chunk order.
VectorIndex build_index(const std::vector<DocumentChunk>& chunks,
                        backends::EmbeddingBackend& embedder);

struct RetrievalResult {
    DocumentChunk chunk;
    double score = 0.0;  // cosine in [-1, 1]
};

// Exhaustive exact top-k by cosine; ties broken by ascending chunk_id.
std::vector<RetrievalResult> search(const VectorIndex& index, const ChunkStore& store,
                                    const std::string& query_text,
                                    backends::EmbeddingBackend& embedder, int k = 3);

}  // namespace polyroute::retrieval
