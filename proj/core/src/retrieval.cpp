#include "polyroute/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "polyroute/text_normalize.hpp"

namespace polyroute::retrieval {

namespace {

nlohmann::json tag_to_json(const LanguageTag& tag) {
    return {{"code", tag.code},
            {"script", tag.script == Script::Latin ? "latin" : "non-latin"},
            {"class", tag.resource_class}};
}

LanguageTag tag_from_json(const nlohmann::json& j) {
    LanguageTag tag{j.at("code").get<std::string>(),
                    j.at("script").get<std::string>() == "latin" ? Script::Latin
                                                                 : Script::NonLatin,
                    j.at("class").get<int>()};
    tag.validate();
    return tag;
}

double unit_normalize(std::vector<double>& v) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& x : v) x /= norm;
    return norm;
}

}  // namespace

std::vector<DocumentChunk> chunk(const Document& doc, int max_chars, int overlap) {
    if (doc.text.empty()) throw InvalidInput("cannot chunk an empty document");
    if (overlap < 0 || max_chars <= overlap)
        throw InvalidInput("require max_chars > overlap >= 0");

    const auto cps = text::decode_utf8(doc.text);
    const std::size_t n = cps.size();
    std::vector<DocumentChunk> out;
    std::size_t start = 0;
    for (int ordinal = 0;; ++ordinal) {
        const std::size_t end = std::min(start + static_cast<std::size_t>(max_chars), n);
        DocumentChunk c;
        c.chunk_id = doc.doc_id + "#" + std::to_string(ordinal);
        c.doc_id = doc.doc_id;
        c.language = doc.language;
        c.text = text::encode_utf8({cps.begin() + start, cps.begin() + end});
        c.span_start = start;
        c.span_end = end;
        out.push_back(std::move(c));
        if (end >= n) break;
        start = end - static_cast<std::size_t>(overlap);
    }
    return out;
}

VectorIndex::VectorIndex(std::string provider_id, int dimension, std::vector<IndexRow> rows)
    : provider_id_(std::move(provider_id)), dimension_(dimension), rows_(std::move(rows)) {
    for (const auto& row : rows_) {
        if (static_cast<int>(row.vector.size()) != dimension_)
            throw InvalidInput("index row dimension mismatch for " + row.chunk_id);
        double norm = 0.0;
        for (double x : row.vector) norm += x * x;
        if (std::abs(std::sqrt(norm) - 1.0) > 1e-6)
            throw InvalidInput("index row not unit-normalized: " + row.chunk_id);
    }
}

void VectorIndex::save(const std::filesystem::path& file) const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : rows_)
        rows.push_back({{"chunk_id", row.chunk_id}, {"vector", row.vector}});
    const nlohmann::json doc = {
        {"provider", provider_id_}, {"dimension", dimension_}, {"rows", rows}};
    std::ofstream out(file);
    if (!out) throw InvalidInput("cannot write index: " + file.string());
    out << doc.dump() << "\n";
}

VectorIndex VectorIndex::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open index: " + file.string());
    nlohmann::json doc;
    in >> doc;
    std::vector<IndexRow> rows;
    for (const auto& row : doc.at("rows"))
        rows.push_back({row.at("chunk_id").get<std::string>(),
                        row.at("vector").get<std::vector<double>>()});
    return VectorIndex(doc.at("provider").get<std::string>(), doc.at("dimension").get<int>(),
                       std::move(rows));
}

void ChunkStore::add(DocumentChunk chunk) {
    if (chunk.text.empty()) throw InvalidInput("chunk text must be non-empty");
    if (by_id_.count(chunk.chunk_id))
        throw InvalidInput("duplicate chunk_id: " + chunk.chunk_id);
    order_.push_back(chunk.chunk_id);
    by_id_.emplace(chunk.chunk_id, std::move(chunk));
}

const DocumentChunk& ChunkStore::get(const std::string& chunk_id) const {
    const auto it = by_id_.find(chunk_id);
    if (it == by_id_.end()) throw IndexError("unknown chunk_id: " + chunk_id);
    return it->second;
}

void ChunkStore::save_jsonl(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw InvalidInput("cannot write chunk store: " + file.string());
    for (const auto& id : order_) {
        const auto& c = by_id_.at(id);
        const nlohmann::json j = {{"chunk_id", c.chunk_id},     {"doc_id", c.doc_id},
                                  {"language", tag_to_json(c.language)}, {"text", c.text},
                                  {"span_start", c.span_start}, {"span_end", c.span_end}};
        out << j.dump() << "\n";
    }
}

ChunkStore ChunkStore::load_jsonl(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open chunk store: " + file.string());
    ChunkStore store;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        DocumentChunk c;
        c.chunk_id = j.at("chunk_id").get<std::string>();
        c.doc_id = j.at("doc_id").get<std::string>();
        c.language = tag_from_json(j.at("language"));
        c.text = j.at("text").get<std::string>();
        c.span_start = j.at("span_start").get<std::size_t>();
        c.span_end = j.at("span_end").get<std::size_t>();
        store.add(std::move(c));
    }
    return store;
}

VectorIndex build_index(const std::vector<DocumentChunk>& chunks,
                        backends::EmbeddingBackend& embedder) {
    if (chunks.empty()) throw InvalidInput("cannot index zero chunks");
    std::vector<std::string> texts;
    texts.reserve(chunks.size());
    for (const auto& c : chunks) texts.push_back(c.text);

    const auto vectors = embedder.embed(texts);
    if (vectors.size() != chunks.size())
        throw ProtocolError("embedder returned wrong vector count");

    std::vector<IndexRow> rows;
    rows.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        auto v = vectors[i];
        v.validate();
        if (v.dimension != embedder.dimension())
            throw ProtocolError("mixed dimensions in embedding response");
        auto values = v.values;
        if (unit_normalize(values) == 0.0)
            throw InvalidInput("zero embedding for chunk " + chunks[i].chunk_id);
        rows.push_back({chunks[i].chunk_id, std::move(values)});
    }
    return VectorIndex(embedder.provider_id(), embedder.dimension(), std::move(rows));
}

std::vector<RetrievalResult> search(const VectorIndex& index, const ChunkStore& store,
                                    const std::string& query_text,
                                    backends::EmbeddingBackend& embedder, int k) {
    if (k < 1) throw InvalidInput("k must be >= 1");
    if (embedder.provider_id() != index.provider_id())
        throw IndexMismatch("index built by " + index.provider_id() + ", queried with " +
                            embedder.provider_id());
    if (embedder.dimension() != index.dimension())
        throw IndexMismatch("index dimension " + std::to_string(index.dimension()) +
                            " vs embedder " + std::to_string(embedder.dimension()));

    auto qv = embedder.embed({query_text}).at(0);
    qv.validate();
    auto q = qv.values;
    unit_normalize(q);

    struct Scored {
        double score;
        const IndexRow* row;
    };
    std::vector<Scored> scored;
    scored.reserve(index.rows().size());
    for (const auto& row : index.rows()) {
        double dot = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) dot += q[i] * row.vector[i];
        scored.push_back({dot, &row});
    }
    const auto cmp = [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.row->chunk_id < b.row->chunk_id;
    };
    const std::size_t take = std::min<std::size_t>(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), cmp);

    std::vector<RetrievalResult> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back({store.get(scored[i].row->chunk_id), scored[i].score});
    return out;
}

}  // namespace polyroute::retrieval
