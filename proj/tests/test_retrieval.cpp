#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "polyroute/retrieval.hpp"

using namespace polyroute;
using namespace polyroute::retrieval;

namespace {

const LanguageTag kEn{"en", Script::Latin, 5};
const LanguageTag kHi{"hi", Script::NonLatin, 4};

// Embeds by table lookup; lets tests pin exact vectors.
class TableEmbedder : public backends::EmbeddingBackend {
 public:
    TableEmbedder(std::string id, int dim) : id_(std::move(id)), dim_(dim) {}

    void set(const std::string& text, std::vector<double> v) { table_[text] = std::move(v); }

    std::vector<backends::EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        ++calls_;
        std::vector<backends::EmbeddingVector> out;
        for (const auto& t : texts) out.push_back({id_, dim_, table_.at(t)});
        return out;
    }
    std::string provider_id() const override { return id_; }
    int dimension() const override { return dim_; }
    long call_count() const override { return calls_; }

 private:
    std::string id_;
    int dim_;
    long calls_ = 0;
    std::map<std::string, std::vector<double>> table_;
};

std::vector<double> random_unit(std::mt19937& rng, int dim) {
    std::normal_distribution<double> gauss;
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = gauss(rng);
        norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

}  // namespace

TEST_SUITE("retrieval") {

TEST_CASE("chunking arithmetic") {
    Document doc{"d1", kEn, std::string(1000, 'x')};
    const auto chunks = chunk(doc, 400, 50);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].span_start == 0);
    CHECK(chunks[0].span_end == 400);
    CHECK(chunks[1].span_start == 350);
    CHECK(chunks[1].span_end == 750);
    CHECK(chunks[2].span_start == 700);
    CHECK(chunks[2].span_end == 1000);
    CHECK(chunks[0].chunk_id == "d1#0");
    CHECK(chunks[2].chunk_id == "d1#2");

    const auto single = chunk({"d2", kEn, "short"}, 400, 50);
    REQUIRE(single.size() == 1);
    CHECK(single[0].text == "short");

    CHECK_THROWS_AS(chunk({"d3", kEn, "x"}, 50, 50), InvalidInput);
    CHECK_THROWS_AS(chunk({"d4", kEn, ""}, 400, 50), InvalidInput);
}

TEST_CASE("chunking covers the document and respects the overlap") {
    std::mt19937 rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int len = 1 + static_cast<int>(rng() % 2000);
        const int max_chars = 2 + static_cast<int>(rng() % 500);
        const int overlap = static_cast<int>(rng() % max_chars);
        std::string text;
        for (int i = 0; i < len; ++i) text.push_back('a' + i % 26);
        const auto chunks = chunk({"p", kEn, text}, max_chars, overlap);

        std::string rebuilt = chunks[0].text;
        for (std::size_t i = 1; i < chunks.size(); ++i) {
            CHECK(chunks[i].span_start == chunks[i - 1].span_end - overlap);
            rebuilt += chunks[i].text.substr(overlap);
        }
        CHECK(rebuilt == text);
        for (const auto& c : chunks)
            CHECK(c.text.size() <= static_cast<std::size_t>(max_chars));
    }
}

TEST_CASE("chunk spans count codepoints, not bytes") {
    std::string text;
    for (int i = 0; i < 10; ++i) text += "दिल्ली";  // 6 codepoints, 18 bytes each
    const auto chunks = chunk({"dev", kHi, text}, 25, 5);
    CHECK(chunks[0].span_end == 25);
    CHECK(chunks[1].span_start == 20);
    std::string rebuilt = chunks[0].text;
    for (std::size_t i = 1; i < chunks.size(); ++i) {
        // overlap is 5 codepoints = 15 bytes here
        rebuilt += chunks[i].text.substr(15);
    }
    CHECK(rebuilt == text);
}

TEST_CASE("index rows are unit-normalized and deterministic") {
    backends::HashedEmbedder emb(32);
    std::vector<DocumentChunk> chunks;
    for (const auto* t : {"alpha beta", "gamma delta", "alpha beta"}) {
        DocumentChunk c;
        c.chunk_id = "c" + std::to_string(chunks.size());
        c.doc_id = "d";
        c.language = kEn;
        c.text = t;
        chunks.push_back(c);
    }
    const auto index = build_index(chunks, emb);
    REQUIRE(index.rows().size() == 3);
    for (const auto& row : index.rows()) {
        double norm = 0.0;
        for (double x : row.vector) norm += x * x;
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(index.rows()[0].vector == index.rows()[2].vector);

    CHECK_THROWS_AS(build_index({}, emb), InvalidInput);
}

TEST_CASE("self-query ranks its own chunk first with score one") {
    backends::HashedEmbedder emb(64);
    ChunkStore store;
    std::vector<DocumentChunk> chunks;
    int i = 0;
    for (const auto* t : {"the red fox", "a blue whale", "green tea leaves"}) {
        DocumentChunk c{"c" + std::to_string(i++), "d", kEn, t, 0, 0};
        chunks.push_back(c);
        store.add(c);
    }
    const auto index = build_index(chunks, emb);

    const auto hits = search(index, store, "a blue whale", emb, 2);
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].chunk.chunk_id == "c1");
    CHECK(hits[0].score == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(hits[0].score <= 1.0 + 1e-9);

    CHECK(search(index, store, "anything", emb, 10).size() == 3);  // k > size

    backends::HashedEmbedder other(64, "other-provider");
    CHECK_THROWS_AS(search(index, store, "q", other, 2), IndexMismatch);
}

TEST_CASE("equal scores break ties by ascending chunk id") {
    TableEmbedder emb("table", 4);
    emb.set("q", {1, 0, 0, 0});
    ChunkStore store;
    std::vector<IndexRow> rows;
    for (const auto* id : {"b", "a", "c"}) {
        rows.push_back({id, {1, 0, 0, 0}});
        store.add({id, "d", kEn, "text", 0, 0});
    }
    const VectorIndex index("table", 4, std::move(rows));
    const auto hits = search(index, store, "q", emb, 3);
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].chunk.chunk_id == "a");
    CHECK(hits[1].chunk.chunk_id == "b");
    CHECK(hits[2].chunk.chunk_id == "c");
}

TEST_CASE("exhaustive search equals the brute-force oracle") {
    constexpr int kRows = 1000, kDim = 64, kQueries = 100, kTop = 3;
    std::mt19937 rng(20240817);

    TableEmbedder emb("oracle", kDim);
    ChunkStore store;
    std::vector<IndexRow> rows;
    for (int i = 0; i < kRows; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "r%04d", i);
        rows.push_back({id, random_unit(rng, kDim)});
        store.add({id, "d", kEn, "chunk " + std::string(id), 0, 0});
    }
    const VectorIndex index("oracle", kDim, rows);

    for (int qi = 0; qi < kQueries; ++qi) {
        const std::string qtext = "query " + std::to_string(qi);
        const auto qvec = random_unit(rng, kDim);
        emb.set(qtext, qvec);

        // Oracle: full scored list, stable sort by (-score, id).
        std::vector<std::pair<double, std::string>> oracle;
        for (const auto& row : rows) {
            double dot = 0.0;
            for (int d = 0; d < kDim; ++d) dot += qvec[d] * row.vector[d];
            oracle.emplace_back(dot, row.chunk_id);
        }
        std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });

        const auto hits = search(index, store, qtext, emb, kTop);
        REQUIRE(hits.size() == kTop);
        for (int i = 0; i < kTop; ++i) {
            CHECK(hits[i].chunk.chunk_id == oracle[i].second);
            CHECK(hits[i].score == doctest::Approx(oracle[i].first).epsilon(1e-12));
        }
    }
}

TEST_CASE("index and chunk store persist losslessly") {
    backends::HashedEmbedder emb(16);
    ChunkStore store;
    std::vector<DocumentChunk> chunks;
    const auto parts = chunk({"doc", kHi, "नमस्ते दुनिया यह एक परीक्षण है"}, 10, 2);
    for (const auto& c : parts) {
        chunks.push_back(c);
        store.add(c);
    }
    const auto index = build_index(chunks, emb);

    const auto dir = std::filesystem::temp_directory_path() / "polyroute_test_retrieval";
    std::filesystem::create_directories(dir);
    index.save(dir / "index.json");
    store.save_jsonl(dir / "chunks.jsonl");

    const auto index2 = VectorIndex::load(dir / "index.json");
    const auto store2 = ChunkStore::load_jsonl(dir / "chunks.jsonl");
    CHECK(index2.provider_id() == index.provider_id());
    CHECK(index2.dimension() == index.dimension());
    REQUIRE(index2.rows().size() == index.rows().size());
    for (std::size_t i = 0; i < index.rows().size(); ++i)
        CHECK(index2.rows()[i].vector == index.rows()[i].vector);

    const auto a = search(index, store, "परीक्षण", emb, 2);
    const auto b = search(index2, store2, "परीक्षण", emb, 2);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].chunk.chunk_id == b[i].chunk.chunk_id);
        CHECK(a[i].score == b[i].score);
        CHECK(a[i].chunk.text == b[i].chunk.text);
    }
}

}  // TEST_SUITE
