#include <doctest.h>

#include <fstream>
#include <random>

#include <json.hpp>

#include "polyroute/eval.hpp"

using namespace polyroute;
using namespace polyroute::eval;

namespace {

const LanguageTag kEn{"en", Script::Latin, 5};
const LanguageTag kHi{"hi", Script::NonLatin, 4};
const LanguageTag kXx{"xx", Script::Latin, 1};  // no article entry

LanguageTag tag_for(const std::string& code) {
    return LanguageTag{code, Script::Latin, 3};
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("normalization lowers, strips punctuation, drops articles") {
    CHECK(normalize("The British Raj.", kEn).tokens ==
          std::vector<std::string>{"british", "raj"});
    CHECK(normalize("", kEn).tokens.empty());
    CHECK(normalize("?!...;", kEn).tokens.empty());
    CHECK(normalize("An APPLE", kEn).tokens == std::vector<std::string>{"apple"});
    // Unlisted language: nothing is treated as an article.
    CHECK(normalize("the raj", kXx).tokens == std::vector<std::string>{"the", "raj"});
    // Devanagari danda is punctuation.
    CHECK(normalize("दिल्ली।", kHi).tokens == std::vector<std::string>{"दिल्ली"});
}

TEST_CASE("token f1 hand values") {
    const NormalizedAnswer a{{"british", "raj"}};
    const NormalizedAnswer b{{"british"}};
    CHECK(token_f1(a, a) == doctest::Approx(1.0));
    CHECK(token_f1(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(token_f1({{"x"}}, {{"y"}}) == 0.0);
    CHECK(token_f1({}, {}) == 1.0);
    CHECK(token_f1({{"x"}}, {}) == 0.0);
    CHECK(token_f1({}, {{"x"}}) == 0.0);
}

TEST_CASE("token f1 is symmetric and bounded") {
    std::mt19937 rng(7);
    const std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    for (int trial = 0; trial < 200; ++trial) {
        NormalizedAnswer x, y;
        const auto fill = [&](NormalizedAnswer& t) {
            const int len = static_cast<int>(rng() % 6);
            for (int i = 0; i < len; ++i) t.tokens.push_back(vocab[rng() % vocab.size()]);
        };
        fill(x);
        fill(y);
        const double xy = token_f1(x, y);
        CHECK(xy == token_f1(y, x));
        CHECK(xy >= 0.0);
        CHECK(xy <= 1.0);
    }
}

TEST_CASE("mlqa f1 takes the max over gold answers") {
    CHECK(mlqa_f1("delhi", {"delhi"}, kEn) == 1.0);
    CHECK(mlqa_f1("B", {"A", "B"}, kEn) == 1.0);
    CHECK(mlqa_f1("b c", {"a", "b c d"}, kEn) == doctest::Approx(0.8));
    CHECK_THROWS_AS(mlqa_f1("x", {}, kEn), InvalidInput);
}

TEST_CASE("fifty-pair fixture matches the frozen reference values") {
    std::ifstream in(std::string(TEST_FIXTURE_DIR) + "/f1_oracle.json");
    REQUIRE(in);
    nlohmann::json rows;
    in >> rows;
    REQUIRE(rows.size() == 50);
    for (const auto& row : rows) {
        const auto lang = tag_for(row.at("lang").get<std::string>());
        const auto pred = normalize(row.at("pred").get<std::string>(), lang);
        const auto gold = normalize(row.at("gold").get<std::string>(), lang);
        INFO("pred=", row.at("pred").get<std::string>());
        CHECK(pred.tokens == row.at("pred_tokens").get<std::vector<std::string>>());
        CHECK(gold.tokens == row.at("gold_tokens").get<std::vector<std::string>>());
        const double got = mlqa_f1(row.at("pred").get<std::string>(),
                                   {row.at("gold").get<std::string>()}, lang);
        CHECK(got == doctest::Approx(row.at("f1").get<double>()).epsilon(1e-9));
    }
}

TEST_CASE("verdict parsing is lenient about casing and wrapping only") {
    CHECK(parse_verdict("Yes") == Verdict::Yes);
    CHECK(parse_verdict("  partial ") == Verdict::Partial);
    CHECK(parse_verdict("NO.") == Verdict::No);
    CHECK(parse_verdict("\"Yes\"") == Verdict::Yes);
    CHECK_THROWS_AS(parse_verdict("maybe"), JudgeProtocolError);
    CHECK_THROWS_AS(parse_verdict("yes it is correct"), JudgeProtocolError);
    CHECK_THROWS_AS(parse_verdict(""), JudgeProtocolError);
}

TEST_CASE("annotator collects one verdict per answer and flags garbage") {
    auto judge = std::make_shared<backends::LambdaChatBackend>(
        "scripted", [](const backends::ChatRequest& req) -> std::string {
            if (req.user_text.find("correct-answer") != std::string::npos) return "Yes";
            if (req.user_text.find("half-answer") != std::string::npos) return "Partial";
            if (req.user_text.find("broken") != std::string::npos) return "I cannot judge this";
            return "No";
        });
    GptAnnotator annotator(judge, "judge-model", "system");
    const auto judged = annotator.annotate("q", "ctx", "gt",
                                           {"correct-answer", "wrong", "half-answer", "broken"});
    REQUIRE(judged.size() == 4);
    CHECK(judged[0].verdict == Verdict::Yes);
    CHECK(judged[1].verdict == Verdict::No);
    CHECK(judged[2].verdict == Verdict::Partial);
    CHECK(judged[3].verdict == Verdict::No);
    CHECK(judged[3].parse_failed);
    CHECK(!judged[0].parse_failed);
    CHECK(judge->call_count() == 4);
}

TEST_CASE("annotator user message carries all four fields") {
    const auto msg = GptAnnotator::user_message("Q?", "CTX", "GT", "ANS");
    CHECK(msg.find("Q?") != std::string::npos);
    CHECK(msg.find("CTX") != std::string::npos);
    CHECK(msg.find("GT") != std::string::npos);
    CHECK(msg.find("ANS") != std::string::npos);
}

TEST_CASE("enrichment keeps the original first and dedups") {
    const auto e1 = enrich("gt", {"a0", "a1"}, std::vector<Verdict>{Verdict::Yes, Verdict::No});
    CHECK(e1.accepted == std::vector<std::string>{"gt", "a0"});

    const auto e2 = enrich("gt", {"a0", "a1"}, std::vector<Verdict>{Verdict::No, Verdict::No});
    CHECK(e2.accepted == std::vector<std::string>{"gt"});

    const auto e3 = enrich("gt", {"gt", "x", "x"},
                           std::vector<Verdict>{Verdict::Yes, Verdict::Yes, Verdict::Yes});
    CHECK(e3.accepted == std::vector<std::string>{"gt", "x"});

    // Idempotent: enriching the accepted set again with the same verdicts
    // adds nothing new.
    const auto again = enrich("gt", {"gt", "x", "x"},
                              std::vector<Verdict>{Verdict::Yes, Verdict::Yes, Verdict::Yes});
    CHECK(again.accepted == e3.accepted);

    CHECK_THROWS_AS(enrich("gt", {"a"}, std::vector<Verdict>{}), InvalidInput);
}

TEST_CASE("enriched scoring never drops below the single-gold score") {
    const std::vector<std::string> answers{"new delhi", "capital city", "delhi"};
    for (int mask = 0; mask < 8; ++mask) {
        std::vector<Verdict> verdicts;
        for (int i = 0; i < 3; ++i)
            verdicts.push_back((mask >> i) & 1 ? Verdict::Yes : Verdict::No);
        const auto enriched = enrich("the capital", answers, verdicts);
        for (const auto& pred : answers) {
            const double base = mlqa_f1(pred, {"the capital"}, kEn);
            CHECK(gptannotator_f1(pred, enriched, kEn) >= base - 1e-12);
        }
    }
}

TEST_CASE("a yes verdict lifts the enriched score to one") {
    // Judged correct although token overlap with the original gold is partial:
    // enrichment inserts the prediction itself, so the rescored value is 1.
    const std::string pred = "british raj";
    const std::string gt = "the british raj era";
    CHECK(mlqa_f1(pred, {gt}, kEn) < 1.0);
    const auto enriched = enrich(gt, {pred}, std::vector<Verdict>{Verdict::Yes});
    CHECK(gptannotator_f1(pred, enriched, kEn) == 1.0);
}

TEST_CASE("human scores by verdict") {
    CHECK(human_score(Verdict::Yes, "x", "y", kEn) == 1.0);
    CHECK(human_score(Verdict::No, "x", "y", kEn) == 0.0);
    CHECK(human_score(Verdict::Partial, "british raj", "british", kEn) ==
          doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(human_score(Verdict::Partial, "x", "y", kEn, PartialScoring::Flat) == 0.5);
}

TEST_CASE("default judge prompt loads and names the three options") {
    const auto prompt = GptAnnotator::default_system_prompt();
    CHECK(prompt.find("Yes") != std::string::npos);
    CHECK(prompt.find("Partial") != std::string::npos);
    CHECK(prompt.find("No") != std::string::npos);
}

}  // TEST_SUITE
