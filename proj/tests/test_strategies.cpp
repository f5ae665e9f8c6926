#include <doctest.h>

#include <sstream>

#include "polyroute/strategies.hpp"

using namespace polyroute;
using namespace polyroute::strategies;

namespace {

const LanguageTag kEn{"en", Script::Latin, 5};
const LanguageTag kHi{"hi", Script::NonLatin, 4};
const LanguageTag kTa{"ta", Script::NonLatin, 3};

QueryTask hindi_task() {
    QueryTask task;
    task.id = "t1";
    task.language = kHi;
    task.question = "राजधानी क्या है?";
    task.context = "भारत की राजधानी नई दिल्ली है।";
    return task;
}

struct MockRig {
    std::shared_ptr<backends::EchoChatBackend> chat =
        std::make_shared<backends::EchoChatBackend>();
    std::shared_ptr<backends::TaggingMockTranslator> translator =
        std::make_shared<backends::TaggingMockTranslator>();

    StrategyContext ctx() const {
        StrategyContext c;
        c.chat = chat;
        c.translator = translator;
        return c;
    }
};

// Picks candidate N from an aggregation prompt, otherwise answers by prompt
// flavor so base strategies yield distinguishable candidates.
std::shared_ptr<backends::LambdaChatBackend> scripted_judge(int pick) {
    return std::make_shared<backends::LambdaChatBackend>(
        "scripted", [pick](const backends::ChatRequest& req) -> std::string {
            const auto pos = req.user_text.find("\n1. ");
            if (pos == std::string::npos) {
                if (req.user_text.find("⟦") != std::string::npos) return "roundtrip answer";
                return "direct answer";
            }
            std::istringstream lines(req.user_text.substr(pos + 1));
            std::string line;
            const std::string prefix = std::to_string(pick) + ". ";
            while (std::getline(lines, line))
                if (line.rfind(prefix, 0) == 0) return line.substr(prefix.size());
            return "no such candidate";
        });
}

}  // namespace

TEST_SUITE("strategies") {

TEST_CASE("template rendering fills every referenced slot") {
    PromptTemplate t{"demo", "A {x} B {y}{x}"};
    CHECK(t.render({{"x", "1"}, {"y", "2"}}) == "A 1 B 21");
    CHECK_THROWS_AS(t.render({{"x", "1"}}), InvalidInput);
    const PromptTemplate unbalanced{"demo", "{open"};
    CHECK_THROWS_AS(unbalanced.render({}), InvalidInput);
}

TEST_CASE("exemplar picks are seeded and stable") {
    std::vector<Exemplar> pool;
    for (int i = 0; i < 10; ++i) pool.push_back({"q" + std::to_string(i), "", "a"});
    const auto a = pick_exemplars(pool, ShotMode::few(3, 42));
    const auto b = pick_exemplars(pool, ShotMode::few(3, 42));
    REQUIRE(a.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(a[i].question == b[i].question);

    const auto c = pick_exemplars(pool, ShotMode::few(3, 43));
    bool same = true;
    for (int i = 0; i < 3; ++i) same = same && a[i].question == c[i].question;
    CHECK(!same);

    CHECK(pick_exemplars(pool, ShotMode::zero()).empty());
    CHECK(pick_exemplars(pool, ShotMode::few(99)).size() == 10);
    CHECK_THROWS_AS(ShotMode::few(0), InvalidInput);
}

TEST_CASE("mono: one chat call, prompt in source language") {
    MockRig rig;
    const auto outcome = run_mono(hindi_task(), "m1", ShotMode::zero(), rig.ctx());
    CHECK(rig.chat->call_count() == 1);
    CHECK(rig.translator->call_count() == 0);
    // Echo model: the final answer is the rendered prompt itself.
    CHECK(outcome.final_answer.find("भारत की राजधानी") != std::string::npos);
    CHECK(outcome.final_answer.find("राजधानी क्या है?") != std::string::npos);
    CHECK(outcome.final_answer.find("Examples:") == std::string::npos);
    CHECK(outcome.config_used.strategy == Strategy::Mono);
}

TEST_CASE("mono few-shot embeds the seeded exemplars") {
    MockRig rig;
    auto task = hindi_task();
    for (int i = 0; i < 6; ++i)
        task.exemplars.push_back({"उदाहरण " + std::to_string(i), "", "उत्तर " + std::to_string(i)});
    const auto a = run_mono(task, "m1", ShotMode::few(2, 7), rig.ctx());
    const auto b = run_mono(task, "m1", ShotMode::few(2, 7), rig.ctx());
    CHECK(a.final_answer == b.final_answer);
    CHECK(a.final_answer.find("Examples:") != std::string::npos);
}

TEST_CASE("trans: round trip through english with tagged audit trail") {
    MockRig rig;
    const auto outcome = run_trans(hindi_task(), "m1", ShotMode::zero(), rig.ctx());

    CHECK(rig.chat->call_count() == 1);
    CHECK(rig.translator->call_count() == 3);  // context + question forward, answer back

    // Echo model answered with the English prompt; the back-translation
    // wraps it in the en->hi tag.
    CHECK(outcome.final_answer.rfind("⟦en→hi⟧", 0) == 0);
    CHECK(outcome.final_answer.find("⟦hi→en⟧भारत की राजधानी नई दिल्ली है।") !=
          std::string::npos);

    REQUIRE(outcome.intermediates.size() >= 4);
    CHECK(outcome.intermediates[0].label == "translated-context");
    CHECK(outcome.intermediates[0].language == "en");
    CHECK(outcome.intermediates.back().label == "back-translation");
    CHECK(outcome.intermediates.back().language == "hi");
}

TEST_CASE("trans on an english task skips translation") {
    MockRig rig;
    QueryTask task;
    task.id = "t2";
    task.language = kEn;
    task.question = "What is the capital?";
    task.context = "The capital of India is New Delhi.";
    const auto outcome = run_trans(task, "m1", ShotMode::zero(), rig.ctx());
    CHECK(rig.chat->call_count() == 1);
    CHECK(rig.translator->call_count() == 0);
    CHECK(outcome.final_answer.find("New Delhi") != std::string::npos);
}

TEST_CASE("trans without a translator fails as a strategy error") {
    MockRig rig;
    auto ctx = rig.ctx();
    ctx.translator = nullptr;
    CHECK_THROWS_AS(run_trans(hindi_task(), "m1", ShotMode::zero(), ctx), StrategyFailed);
}

TEST_CASE("sim: pivot-less language is inapplicable") {
    MockRig rig;
    QueryTask task = hindi_task();
    task.language = kTa;
    task.question = "தலைநகரம் எது?";
    task.context = "சென்னை தமிழ்நாட்டின் தலைநகரம்.";
    CHECK_THROWS_AS(run_sim(task, "m1", ShotMode::zero(), rig.ctx()), StrategyInapplicable);
    CHECK(rig.chat->call_count() == 0);
    CHECK(rig.translator->call_count() == 0);
}

TEST_CASE("sim resolves a pivot and round trips through it") {
    MockRig rig;
    const auto outcome = run_sim(hindi_task(), "m1", ShotMode::zero(), rig.ctx());
    // Shipped table: hi pivots through bn.
    CHECK(outcome.intermediates[0].label == "pivot");
    CHECK(outcome.intermediates[0].language == "bn");
    CHECK(outcome.final_answer.rfind("⟦bn→hi⟧", 0) == 0);
    CHECK(rig.chat->call_count() == 1);
    CHECK(rig.translator->call_count() == 3);
}

TEST_CASE("sim with an english pivot matches trans") {
    MockRig a, b;
    const auto sim = run_sim(hindi_task(), "m1", ShotMode::zero(), a.ctx(), kEn);
    const auto trans = run_trans(hindi_task(), "m1", ShotMode::zero(), b.ctx());
    CHECK(sim.final_answer == trans.final_answer);
    CHECK(a.chat->call_count() == b.chat->call_count());
    CHECK(a.translator->call_count() == b.translator->call_count());
}

TEST_CASE("agg_src aggregates all applicable candidates in one extra call") {
    MockRig rig;
    const auto outcome = run_agg_src(hindi_task(), "m1", ShotMode::zero(), rig.ctx());
    // mono + trans + sim + aggregation
    CHECK(rig.chat->call_count() == 4);
    std::vector<std::string> candidates;
    for (const auto& step : outcome.intermediates)
        if (step.label.rfind("candidate-", 0) == 0) candidates.push_back(step.text);
    CHECK(candidates.size() == 3);
    // Echo judge returns the whole aggregation prompt, which embeds every
    // candidate answer.
    for (const auto& c : candidates)
        CHECK(outcome.final_answer.find(c) != std::string::npos);
}

TEST_CASE("agg_src skips an inapplicable sim and still aggregates") {
    MockRig rig;
    QueryTask task = hindi_task();
    task.language = kTa;
    const auto outcome = run_agg_src(task, "m1", ShotMode::zero(), rig.ctx());
    CHECK(rig.chat->call_count() == 3);  // mono + trans + aggregation
    bool skipped = false;
    for (const auto& step : outcome.intermediates)
        if (step.label == "skipped-sim") skipped = true;
    CHECK(skipped);
}

TEST_CASE("agg_src with under two candidates fails") {
    MockRig rig;
    auto ctx = rig.ctx();
    ctx.translator = nullptr;  // trans fails, sim fails after pivoting
    QueryTask task = hindi_task();
    task.language = kTa;  // sim inapplicable too
    CHECK_THROWS_AS(run_agg_src(task, "m1", ShotMode::zero(), ctx), StrategyFailed);
}

TEST_CASE("the aggregation judge's pick is returned verbatim") {
    auto judge = scripted_judge(2);
    MockRig rig;
    auto ctx = rig.ctx();
    ctx.chat = judge;
    const auto outcome = run_agg_src(hindi_task(), "m1", ShotMode::zero(), ctx);

    std::vector<std::string> candidates;
    for (const auto& step : outcome.intermediates)
        if (step.label.rfind("candidate-", 0) == 0) candidates.push_back(step.text);
    REQUIRE(candidates.size() == 3);
    CHECK(outcome.final_answer == candidates[1]);
}

TEST_CASE("agg_trans aggregates in english and back-translates") {
    auto judge = scripted_judge(1);
    MockRig rig;
    auto ctx = rig.ctx();
    ctx.chat = judge;
    const auto outcome = run_agg_trans(hindi_task(), "m1", ShotMode::zero(), ctx);

    // The judge picks English candidate 1, the translated mono answer
    // "⟦hi→en⟧direct answer"; back-translating strips the tag again.
    CHECK(outcome.final_answer == "direct answer");
    CHECK(outcome.intermediates.back().label == "back-translation");
    bool saw_english_candidates = false;
    for (const auto& step : outcome.intermediates)
        if (step.label.rfind("candidate-en-", 0) == 0) saw_english_candidates = true;
    CHECK(saw_english_candidates);
    CHECK(judge->call_count() == 4);
}

TEST_CASE("dispatcher validates, attaches retrieval, stamps the config") {
    MockRig rig;
    auto ctx = rig.ctx();

    const Configuration config{"m1", "e1", Strategy::Mono};
    CHECK_THROWS_AS(
        run(Strategy::Trans, hindi_task(), config, ctx), InvalidConfiguration);

    auto direct = run(Strategy::Mono, hindi_task(), config, ctx);
    CHECK(direct.config_used == config);

    // No context, no index: refused.
    QueryTask bare = hindi_task();
    bare.context.reset();
    CHECK_THROWS_AS(run(Strategy::Mono, bare, config, ctx), InvalidInput);

    // With an index the context is retrieved and recorded.
    backends::HashedEmbedder embedder(32);
    retrieval::ChunkStore store;
    std::vector<retrieval::DocumentChunk> chunks;
    int i = 0;
    for (const auto* text : {"दिल्ली भारत की राजधानी है", "गंगा एक नदी है"}) {
        retrieval::DocumentChunk c{"c" + std::to_string(i++), "d", kHi, text, 0, 0};
        chunks.push_back(c);
        store.add(c);
    }
    const auto index = retrieval::build_index(chunks, embedder);
    ctx.index = &index;
    ctx.chunks = &store;
    ctx.embedder = &embedder;
    ctx.retrieval_k = 1;

    const auto outcome = run(Strategy::Mono, bare, config, ctx);
    CHECK(outcome.intermediates[0].label == "retrieved-context");
    CHECK(outcome.final_answer.find("राजधानी") != std::string::npos);
}

TEST_CASE("identical inputs give identical outcomes") {
    MockRig a, b;
    auto task = hindi_task();
    for (int i = 0; i < 5; ++i)
        task.exemplars.push_back({"q" + std::to_string(i), "", "a" + std::to_string(i)});
    const auto x = run_agg_src(task, "m1", ShotMode::few(2, 11), a.ctx());
    const auto y = run_agg_src(task, "m1", ShotMode::few(2, 11), b.ctx());
    CHECK(x.final_answer == y.final_answer);
    REQUIRE(x.intermediates.size() == y.intermediates.size());
    for (std::size_t i = 0; i < x.intermediates.size(); ++i) {
        CHECK(x.intermediates[i].label == y.intermediates[i].label);
        CHECK(x.intermediates[i].text == y.intermediates[i].text);
    }
}

}  // TEST_SUITE
