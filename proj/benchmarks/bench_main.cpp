#include <benchmark/benchmark.h>

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "polyroute/embedding.hpp"
#include "polyroute/eval.hpp"
#include "polyroute/lang_similarity.hpp"
#include "polyroute/retrieval.hpp"
#include "polyroute/selector.hpp"

using namespace polyroute;

namespace {

const LanguageTag kHindi{"hi", Script::NonLatin, 4};

QueryTask make_task(int i) {
    QueryTask task;
    task.id = "bench-" + std::to_string(i);
    task.question = "what is the capital of country number " + std::to_string(i);
    task.context = "the capital of country number " + std::to_string(i) + " is city " +
                   std::to_string(i * 7 % 100);
    task.language = kHindi;
    return task;
}

ConfigurationSpace bench_space() {
    return ConfigurationSpace({"m1", "m2", "m3"}, {"e1", "e2"},
                              {Strategy::Mono, Strategy::Trans, Strategy::Sim,
                               Strategy::AggSrc, Strategy::AggTrans});
}

void BM_TokenF1(benchmark::State& state) {
    const LanguageTag en{"en", Script::Latin, 5};
    const auto pred = eval::normalize("the british raj ruled the indian subcontinent", en);
    const auto gold = eval::normalize("british raj", en);
    for (auto _ : state) benchmark::DoNotOptimize(eval::token_f1(pred, gold));
}
BENCHMARK(BM_TokenF1);

void BM_MlqaF1(benchmark::State& state) {
    const std::string pred = "la capitale de la france est paris";
    const std::vector<std::string> golds = {"paris", "la ville de paris"};
    const LanguageTag fr{"fr", Script::Latin, 5};
    for (auto _ : state) benchmark::DoNotOptimize(eval::mlqa_f1(pred, golds, fr));
}
BENCHMARK(BM_MlqaF1);

void BM_SimilarLanguages(benchmark::State& state) {
    const auto& table = langsim::DistanceTable::shared();
    const auto source = table.profile("hi");
    for (auto _ : state)
        benchmark::DoNotOptimize(langsim::similar_languages(source, table));
}
BENCHMARK(BM_SimilarLanguages);

void BM_IndexSearch(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    backends::HashedEmbedder embedder(64);
    std::vector<retrieval::DocumentChunk> chunks;
    retrieval::ChunkStore store;
    for (int i = 0; i < n; ++i) {
        retrieval::DocumentChunk c;
        c.chunk_id = "d#" + std::to_string(i);
        c.doc_id = "d";
        c.language = kHindi;
        c.text = "passage number " + std::to_string(i) + " about topic " +
                 std::to_string(i % 37);
        chunks.push_back(c);
        store.add(c);
    }
    const auto index = retrieval::build_index(chunks, embedder);
    int q = 0;
    for (auto _ : state) {
        auto hits = retrieval::search(index, store, "passage about topic " +
                                      std::to_string(q++ % 37), embedder, 3);
        benchmark::DoNotOptimize(hits);
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_IndexSearch)->Arg(1000)->Arg(4000);

void BM_SelectorPredict(benchmark::State& state) {
    auto provider = std::make_shared<backends::HashedEmbedder>(64);
    auto train_state = selector::TrainState::make(bench_space(), provider, 32, 11);
    const auto task = make_task(0);
    train_state.predict(task);  // warm the embedding caches
    for (auto _ : state) benchmark::DoNotOptimize(train_state.predict(task));
}
BENCHMARK(BM_SelectorPredict);

void BM_OfflineEpoch(benchmark::State& state) {
    auto provider = std::make_shared<backends::HashedEmbedder>(64);
    const auto space = bench_space();
    std::vector<selector::TrainSample> samples;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < 64; ++i) {
        selector::TrainSample s{make_task(i), ScoreTensor(space.shape())};
        for (int k = 0; k < space.total(); ++k) s.scores.set(k, uni(rng));
        samples.push_back(std::move(s));
    }
    auto train_state = selector::TrainState::make(space, provider, 32, 11);
    for (auto _ : state)
        benchmark::DoNotOptimize(selector::train_epoch_offline(train_state, samples));
    state.SetItemsProcessed(state.iterations() * samples.size());
}
BENCHMARK(BM_OfflineEpoch);

}  // namespace

BENCHMARK_MAIN();
