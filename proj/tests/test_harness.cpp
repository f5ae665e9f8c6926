#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "polyroute/harness.hpp"
#include "polyroute/translation.hpp"

using namespace polyroute;
using namespace polyroute::harness;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("polyroute_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::filesystem::path write_file(const std::filesystem::path& dir, const std::string& name,
                                 const std::string& content) {
    auto path = dir / name;
    std::ofstream(path) << content;
    return path;
}

// Every level of the language-tag hierarchy in one fixture: top-level hi,
// entry-level zz (unknown to the distance table), paragraph-level te, and
// one qa-level bn override.
const char* kSquadFixture = R"({
  "language": "hi",
  "data": [
    {
      "paragraphs": [
        {
          "context": "दिल्ली भारत की राजधानी है।",
          "qas": [
            {"id": "q1", "question": "भारत की राजधानी क्या है?",
             "answers": [{"text": "दिल्ली"}]},
            {"id": "q2", "question": "রাজধানী কোথায়?", "language": "bn",
             "answers": [{"text": "দিল্লি"}, {"text": ""}]}
          ]
        },
        {
          "context": "తెలుగు సందర్భం", "language": "te",
          "qas": [
            {"id": "q3", "question": "ప్రశ్న ఏమిటి?", "answers": [{"text": "జవాబు"}]}
          ]
        }
      ]
    },
    {
      "language": "zz",
      "paragraphs": [
        {
          "context": "passage for an unlisted language",
          "qas": [
            {"id": "q4", "question": "first question?", "answers": [{"text": "alpha"}]},
            {"id": "q5", "question": "second question?", "answers": [{"text": "beta"}]}
          ]
        }
      ]
    }
  ]
})";

DatasetRecord make_record(std::string id, const std::string& code) {
    DatasetRecord rec;
    rec.id = std::move(id);
    rec.language = LanguageTag{code, Script::NonLatin, 3};
    rec.context = "context for " + rec.id;
    rec.question = "question for " + rec.id;
    rec.answers = {"answer " + rec.id};
    return rec;
}

std::vector<DatasetRecord> make_records(const std::string& code, int count, int first = 0) {
    std::vector<DatasetRecord> out;
    for (int i = 0; i < count; ++i)
        out.push_back(make_record(code + "-" + std::to_string(first + i), code));
    return out;
}

std::set<std::string> ids_of(const std::vector<DatasetRecord>& records) {
    std::set<std::string> out;
    for (const auto& rec : records) out.insert(rec.id);
    return out;
}

strategies::StrategyContext echo_ctx(std::shared_ptr<backends::ChatBackend> chat) {
    strategies::StrategyContext ctx;
    ctx.chat = std::move(chat);
    ctx.translator = std::make_shared<backends::TaggingMockTranslator>();
    return ctx;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("squad loader resolves the innermost language tag") {
    auto dir = temp_dir("squad_load");
    auto file = write_file(dir, "data.json", kSquadFixture);

    auto records = load_dataset(file);
    REQUIRE(records.size() == 5);
    CHECK(records[0].id == "q1");
    CHECK(records[0].language == LanguageTag{"hi", Script::NonLatin, 4});
    CHECK(records[0].context == "दिल्ली भारत की राजधानी है।");
    CHECK(records[0].answers == std::vector<std::string>{"दिल्ली"});

    CHECK(records[1].language.code == "bn");
    CHECK(records[1].language.resource_class == 3);
    // blank answer texts are dropped, not kept as empty golds
    CHECK(records[1].answers == std::vector<std::string>{"দিল্লি"});

    CHECK(records[2].language == LanguageTag{"te", Script::NonLatin, 1});

    // zz is not in the distance table: conservative fallback profile
    CHECK(records[3].language == LanguageTag{"zz", Script::NonLatin, 3});
    CHECK(records[4].id == "q5");
}

TEST_CASE("squad loader rejects schema violations with a record locus") {
    auto dir = temp_dir("squad_errors");
    auto base = nlohmann::json::parse(kSquadFixture);

    SUBCASE("missing answers field") {
        auto doc = base;
        doc["data"][0]["paragraphs"][0]["qas"][0].erase("answers");
        auto file = write_file(dir, "bad.json", doc.dump());
        CHECK_THROWS_WITH_AS(load_dataset(file),
                             "data[0].paragraphs[0].qas[0] (id=q1): missing answers field",
                             ParseError);
    }
    SUBCASE("answers present but all blank") {
        auto doc = base;
        doc["data"][0]["paragraphs"][0]["qas"][0]["answers"] =
            nlohmann::json::array({{{"text", ""}}});
        auto file = write_file(dir, "bad.json", doc.dump());
        CHECK_THROWS_AS(load_dataset(file), ParseError);
    }
    SUBCASE("duplicate ids") {
        auto doc = base;
        doc["data"][1]["paragraphs"][0]["qas"][1]["id"] = "q4";
        auto file = write_file(dir, "bad.json", doc.dump());
        CHECK_THROWS_WITH_AS(load_dataset(file),
                             "data[1].paragraphs[0].qas[1] (id=q4): duplicate task id",
                             ParseError);
    }
    SUBCASE("no language tag in scope") {
        auto doc = base;
        doc.erase("language");
        auto file = write_file(dir, "bad.json", doc.dump());
        CHECK_THROWS_AS(load_dataset(file), ParseError);
    }
    SUBCASE("paragraph without context") {
        auto doc = base;
        doc["data"][0]["paragraphs"][0].erase("context");
        auto file = write_file(dir, "bad.json", doc.dump());
        CHECK_THROWS_WITH_AS(load_dataset(file),
                             "data[0].paragraphs[0]: missing context passage", ParseError);
    }
    SUBCASE("not json at all") {
        auto file = write_file(dir, "bad.json", "this is not json");
        CHECK_THROWS_AS(load_dataset(file), ParseError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_dataset(dir / "nope.json"), InvalidInput);
    }
}

TEST_CASE("records survive a jsonl round trip") {
    auto dir = temp_dir("records_jsonl");
    auto records = load_dataset(write_file(dir, "data.json", kSquadFixture));

    auto path = dir / "records.jsonl";
    save_records_jsonl(records, path);
    auto back = load_records_jsonl(path);

    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].id == records[i].id);
        CHECK(back[i].language == records[i].language);
        CHECK(back[i].context == records[i].context);
        CHECK(back[i].question == records[i].question);
        CHECK(back[i].answers == records[i].answers);
    }

    write_file(dir, "dup.jsonl", records[0].to_json().dump() + "\n" +
                                     records[0].to_json().dump() + "\n");
    CHECK_THROWS_AS(load_records_jsonl(dir / "dup.jsonl"), ParseError);
}

TEST_CASE("split honors fractions exactly on a round hundred") {
    auto records = make_records("hi", 100);
    auto parts = split(records, {0.6, 0.2, 0.2}, 7);
    CHECK(parts.offline.size() == 60);
    CHECK(parts.online.size() == 20);
    CHECK(parts.test.size() == 20);
    CHECK(parts.holdout.empty());

    std::set<std::string> all = ids_of(parts.offline);
    for (const auto& rec : parts.online) CHECK(all.insert(rec.id).second);
    for (const auto& rec : parts.test) CHECK(all.insert(rec.id).second);
    CHECK(all == ids_of(records));
}

TEST_CASE("split is deterministic per seed and varies across seeds") {
    auto records = make_records("hi", 50);
    auto a = split(records, {0.6, 0.2, 0.2}, 11);
    auto b = split(records, {0.6, 0.2, 0.2}, 11);
    CHECK(ids_of(a.offline) == ids_of(b.offline));
    CHECK(ids_of(a.online) == ids_of(b.online));
    CHECK(ids_of(a.test) == ids_of(b.test));

    auto c = split(records, {0.6, 0.2, 0.2}, 12);
    CHECK(ids_of(a.offline) != ids_of(c.offline));
}

TEST_CASE("split stratifies by language") {
    auto records = make_records("hi", 50);
    auto te = make_records("te", 50);
    records.insert(records.end(), te.begin(), te.end());

    auto parts = split(records, {0.6, 0.2, 0.2}, 3);
    auto count_lang = [](const std::vector<DatasetRecord>& part, const std::string& code) {
        return std::count_if(part.begin(), part.end(),
                             [&](const DatasetRecord& r) { return r.language.code == code; });
    };
    CHECK(count_lang(parts.offline, "hi") == 30);
    CHECK(count_lang(parts.offline, "te") == 30);
    CHECK(count_lang(parts.online, "hi") == 10);
    CHECK(count_lang(parts.test, "te") == 10);
}

TEST_CASE("split rounds odd group sizes by largest remainder") {
    // 7 records: quotas 4.2 / 1.4 / 1.4 so the leftover seat goes to the
    // online part (first of the two largest remainders in stable order).
    auto parts = split(make_records("hi", 7), {0.6, 0.2, 0.2}, 5);
    CHECK(parts.offline.size() == 4);
    CHECK(parts.online.size() == 2);
    CHECK(parts.test.size() == 1);
}

TEST_CASE("split validates fractions") {
    auto records = make_records("hi", 10);
    CHECK_THROWS_AS(split(records, {0.5, 0.2, 0.2}, 1), InvalidInput);
    CHECK_THROWS_AS(split(records, {1.2, -0.1, -0.1}, 1), InvalidInput);
}

TEST_CASE("excluded languages land in the holdout untouched") {
    auto records = make_records("hi", 20);
    auto kn = make_records("kn", 10);
    records.insert(records.end(), kn.begin(), kn.end());

    auto parts = split(records, {0.6, 0.2, 0.2}, 9, {"kn"});
    CHECK(parts.holdout.size() == 10);
    for (const auto& rec : parts.holdout) CHECK(rec.language.code == "kn");
    CHECK(parts.offline.size() == 12);
    CHECK(parts.online.size() == 4);
    CHECK(parts.test.size() == 4);
    for (const auto& rec : parts.offline) CHECK(rec.language.code == "hi");
}

TEST_CASE("result rows separate deterministic fields from telemetry") {
    ResultRow row;
    row.task_id = "t1";
    row.config = {"model-a", "embed-a", Strategy::Trans};
    row.status = "ok";
    row.answer = "some answer";
    row.mlqa_f1 = 0.625;
    row.latency_ms = 123.4;
    row.cache_hit = true;

    auto j = row.to_json();
    CHECK(!j.contains("latency_ms"));
    CHECK(!j.contains("cache_hit"));
    auto back = ResultRow::from_json(j);
    CHECK(back.task_id == row.task_id);
    CHECK(back.config == row.config);
    CHECK(back.status == "ok");
    CHECK(back.answer == row.answer);
    CHECK(back.mlqa_f1 == 0.625);
    CHECK(!back.gptannotator_f1.has_value());
    CHECK(back.latency_ms == 0.0);
    CHECK_FALSE(back.cache_hit);

    auto t = row.telemetry_json();
    CHECK(t.at("latency_ms").get<double>() == 123.4);
    CHECK(t.at("cache_hit").get<bool>());
    CHECK(!t.contains("answer"));

    auto bad_status = j;
    bad_status["status"] = "exploded";
    CHECK_THROWS_AS(ResultRow::from_json(bad_status), ParseError);
    auto bad_score = j;
    bad_score["mlqa_f1"] = 1.5;
    CHECK_THROWS_AS(ResultRow::from_json(bad_score), ParseError);
}

TEST_CASE("run manifests hash their identifying fields") {
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto records = make_records("hi", 3);

    RunManifest manifest{.dataset_path = "data/x.json",
                         .dataset_hash = dataset_hash(records),
                         .record_count = 3,
                         .space = space,
                         .seed = 42,
                         .fractions = {0.6, 0.2, 0.2},
                         .providers = {{"chat", "mock-echo"}},
                         .metric = "mlqa_f1",
                         .shots = "zero"};
    auto back = RunManifest::from_json(manifest.to_json());
    CHECK(back.hash() == manifest.hash());
    CHECK(back.space == space);
    CHECK(back.providers.at("chat") == "mock-echo");

    auto other = manifest;
    other.space = ConfigurationSpace({"m1", "m2"}, {"e1"}, {Strategy::Mono});
    CHECK(other.hash() != manifest.hash());

    // dataset hash is order-sensitive: a reshuffled dataset is a new run
    auto reversed = records;
    std::reverse(reversed.begin(), reversed.end());
    CHECK(dataset_hash(reversed) != dataset_hash(records));
    CHECK(dataset_hash(records) == dataset_hash(make_records("hi", 3)));
}

TEST_CASE("run_grid fills every cell and writes replayable artifacts") {
    auto dir = temp_dir("run_grid_basic");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto chat = std::make_shared<backends::EchoChatBackend>();
    auto ctx = echo_ctx(chat);
    auto records = make_records("hi", 3);

    auto result = run_grid(records, space, ctx, dir / "run");
    REQUIRE(result.rows.size() == 6);
    REQUIRE(result.scores.size() == 3);
    for (const auto& row : result.rows) {
        CHECK(row.status == "ok");
        REQUIRE(row.mlqa_f1.has_value());
        CHECK(*row.mlqa_f1 >= 0.0);
        CHECK(*row.mlqa_f1 <= 1.0);
        CHECK_FALSE(row.cache_hit);
    }
    // record-major, configuration-minor order
    CHECK(result.rows[0].task_id == "hi-0");
    CHECK(result.rows[0].config.strategy == Strategy::Mono);
    CHECK(result.rows[1].task_id == "hi-0");
    CHECK(result.rows[1].config.strategy == Strategy::Trans);
    CHECK(result.rows[2].task_id == "hi-1");

    for (const auto& [task_id, tensor] : result.scores) CHECK(tensor.all_known());

    CHECK(std::filesystem::exists(dir / "run" / "manifest.json"));
    auto rows_text = slurp(dir / "run" / "rows.jsonl");
    CHECK(std::count(rows_text.begin(), rows_text.end(), '\n') == 6);
    auto scores_text = slurp(dir / "run" / "scores.jsonl");
    CHECK(std::count(scores_text.begin(), scores_text.end(), '\n') == 3);
}

TEST_CASE("run_grid artifacts are byte-identical across fresh runs") {
    auto dir = temp_dir("run_grid_determinism");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());
    auto records = make_records("hi", 3);

    run_grid(records, space, ctx, dir / "a");
    run_grid(records, space, ctx, dir / "b");
    CHECK(slurp(dir / "a" / "rows.jsonl") == slurp(dir / "b" / "rows.jsonl"));
    CHECK(slurp(dir / "a" / "scores.jsonl") == slurp(dir / "b" / "scores.jsonl"));
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
}

TEST_CASE("run_grid resumes from finished rows without recomputing") {
    auto dir = temp_dir("run_grid_resume");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto chat = std::make_shared<backends::EchoChatBackend>();
    auto ctx = echo_ctx(chat);
    auto records = make_records("hi", 3);

    run_grid(records, space, ctx, dir / "run");
    const auto before = slurp(dir / "run" / "rows.jsonl");
    const long calls = chat->call_count();

    auto again = run_grid(records, space, ctx, dir / "run");
    CHECK(chat->call_count() == calls);
    for (const auto& row : again.rows) CHECK(row.cache_hit);
    CHECK(slurp(dir / "run" / "rows.jsonl") == before);

    SUBCASE("partial progress is completed in place") {
        std::istringstream lines(before);
        std::string line, kept;
        for (int i = 0; i < 3 && std::getline(lines, line); ++i) kept += line + "\n";
        std::ofstream(dir / "run" / "rows.jsonl", std::ios::trunc) << kept;

        auto resumed = run_grid(records, space, ctx, dir / "run");
        CHECK(slurp(dir / "run" / "rows.jsonl") == before);
        int fresh = 0;
        for (const auto& row : resumed.rows) fresh += row.cache_hit ? 0 : 1;
        CHECK(fresh == 3);
    }
}

TEST_CASE("run_grid refuses a run directory from a different job") {
    auto dir = temp_dir("run_grid_mismatch");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono});
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());
    run_grid(make_records("hi", 2), space, ctx, dir / "run");

    ConfigurationSpace other({"m1", "m2"}, {"e1"}, {Strategy::Mono});
    CHECK_THROWS_AS(run_grid(make_records("hi", 2), other, ctx, dir / "run"), InvalidInput);
    CHECK_THROWS_AS(run_grid(make_records("hi", 3), space, ctx, dir / "run"), InvalidInput);
}

TEST_CASE("inapplicable strategies become masked cells, not failures") {
    auto dir = temp_dir("run_grid_inapplicable");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Sim});
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());
    // zz has no distance-table entry, so Sim has no pivot to work with
    auto records = make_records("zz", 1);

    auto result = run_grid(records, space, ctx, dir / "run");
    REQUIRE(result.rows.size() == 2);
    CHECK(result.rows[0].status == "ok");
    CHECK(result.rows[1].status == "inapplicable");
    CHECK(!result.rows[1].mlqa_f1.has_value());

    const auto& tensor = result.scores[0].second;
    CHECK(tensor.known(space.linear_index({"m1", "e1", Strategy::Mono})));
    CHECK_FALSE(tensor.known(space.linear_index({"m1", "e1", Strategy::Sim})));
}

TEST_CASE("concurrent cell evaluation matches the serial artifacts") {
    auto dir = temp_dir("run_grid_parallel");
    ConfigurationSpace space({"m1", "m2"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());
    auto records = make_records("hi", 4);

    run_grid(records, space, ctx, dir / "serial");
    RunGridOptions options;
    options.concurrency = 4;
    run_grid(records, space, ctx, dir / "parallel", options);
    CHECK(slurp(dir / "serial" / "rows.jsonl") == slurp(dir / "parallel" / "rows.jsonl"));
}

TEST_CASE("annotation pools answers per question and widens the gold set") {
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono});
    auto records = make_records("hi", 1);
    records[0].answers = {"दिल्ली"};

    std::vector<ResultRow> rows(2);
    rows[0].task_id = rows[1].task_id = records[0].id;
    rows[0].config = rows[1].config = {"m1", "e1", Strategy::Mono};
    rows[0].status = rows[1].status = "ok";
    rows[0].answer = "नई दिल्ली";
    rows[1].answer = "मुंबई";

    // Judge says Yes to the New-Delhi variant and No to Mumbai.
    auto judge = std::make_shared<backends::LambdaChatBackend>(
        "mock-judge", [](const backends::ChatRequest& req) {
            return req.user_text.find("नई दिल्ली") != std::string::npos ? "Yes" : "No";
        });
    eval::GptAnnotator annotator(judge, "judge-model");

    auto annotated = annotate_rows(rows, records, annotator);
    REQUIRE(annotated[0].gptannotator_f1.has_value());
    REQUIRE(annotated[1].gptannotator_f1.has_value());
    CHECK(*annotated[0].gptannotator_f1 == 1.0);
    CHECK(*annotated[1].gptannotator_f1 == 0.0);
    CHECK(judge->call_count() == 2);

    std::vector<ResultRow> orphan(1);
    orphan[0].task_id = "missing";
    orphan[0].status = "ok";
    CHECK_THROWS_AS(annotate_rows(orphan, records, annotator), InvalidInput);
}

TEST_CASE("grid results convert to selector training samples") {
    auto dir = temp_dir("grid_to_samples");
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());
    auto records = make_records("hi", 2);

    auto result = run_grid(records, space, ctx, dir / "run");
    auto samples = to_train_samples(records, result.scores);
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].task.id == "hi-0");
    CHECK(samples[0].task.question == records[0].question);
    CHECK(samples[0].scores.all_known());
    CHECK(samples[0].scores.raw(0) == *result.rows[0].mlqa_f1);

    // artifact loaders reproduce the in-memory result
    auto rows_back = load_rows_jsonl(dir / "run" / "rows.jsonl");
    REQUIRE(rows_back.size() == result.rows.size());
    CHECK(rows_back[3].answer == result.rows[3].answer);
    auto scores_back = load_scores_jsonl(dir / "run" / "scores.jsonl");
    REQUIRE(scores_back.size() == 2);
    CHECK(scores_back[1].first == "hi-1");
    CHECK(scores_back[1].second.raw(1) == result.scores[1].second.raw(1));
}

TEST_CASE("report averages per language and bolds the row best") {
    std::vector<DatasetRecord> records;
    records.push_back(make_record("h1", "hi"));
    records.push_back(make_record("h2", "hi"));
    records.push_back(make_record("t1", "te"));

    auto row = [](std::string task, Strategy strategy, double f1) {
        ResultRow r;
        r.task_id = std::move(task);
        r.config = {"m1", "e1", strategy};
        r.status = "ok";
        r.answer = "a";
        r.mlqa_f1 = f1;
        return r;
    };
    std::vector<ResultRow> rows{row("h1", Strategy::Mono, 0.5), row("h2", Strategy::Mono, 0.52),
                                row("h1", Strategy::Trans, 0.4), row("h2", Strategy::Trans, 0.3),
                                row("t1", Strategy::Mono, 0.2), row("t1", Strategy::Trans, 0.9)};

    auto tables = report(rows, records, {GroupKey::Strategy});
    CHECK(tables.markdown.find("| language | Mono | Trans |") != std::string::npos);
    CHECK(tables.markdown.find("| hi | **0.510** | 0.350 |") != std::string::npos);
    CHECK(tables.markdown.find("| te | 0.200 | **0.900** |") != std::string::npos);
    CHECK(tables.csv.find("language,Mono,Trans") != std::string::npos);
    CHECK(tables.csv.find("hi,0.510000,0.350000") != std::string::npos);

    SUBCASE("aggregation is permutation invariant") {
        auto shuffled = rows;
        std::mt19937 rng(99);
        for (int trial = 0; trial < 5; ++trial) {
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            auto again = report(shuffled, records, {GroupKey::Strategy});
            CHECK(again.markdown == tables.markdown);
            CHECK(again.csv == tables.csv);
        }
    }
    SUBCASE("non-ok rows and missing combinations leave gaps") {
        rows[4].status = "inapplicable";
        rows[4].mlqa_f1.reset();
        auto sparse = report(rows, records, {GroupKey::Strategy});
        CHECK(sparse.markdown.find("| te | - | **0.900** |") != std::string::npos);
    }
    SUBCASE("compound grouping keys label columns with every part") {
        auto compound = report(rows, records, {GroupKey::Model, GroupKey::Strategy});
        CHECK(compound.markdown.find("m1/Mono") != std::string::npos);
        CHECK_THROWS_AS(report(rows, records, {}), InvalidInput);
    }
}

TEST_CASE("routing service answers with the argmax configuration") {
    ConfigurationSpace space({"m1"}, {"e1"},
                             {Strategy::Mono, Strategy::Trans, Strategy::Sim});
    auto provider = std::make_shared<backends::HashedEmbedder>(32, "hash-32");
    auto state = selector::TrainState::make(space, provider, 16, 21);
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());

    RoutingService service(std::move(state), space, ctx);

    auto health = service.health();
    CHECK(health.at("status") == "ok");

    nlohmann::json request{{"question", "भारत की राजधानी क्या है?"},
                           {"language", "hi"},
                           {"context", "दिल्ली भारत की राजधानी है।"}};
    auto reply = service.answer(request);
    CHECK(!reply.at("answer").get<std::string>().empty());
    CHECK(reply.at("configuration").contains("strategy"));
    CHECK(reply.at("predicted_scores_top5").size() == 3);
    for (const auto& entry : reply.at("predicted_scores_top5")) {
        double score = entry.at("score").get<double>();
        CHECK(score > 0.0);
        CHECK(score < 1.0);
    }

    // identical request, identical routing: the checkpoint is read-only
    auto reply2 = service.answer(request);
    CHECK(reply2.at("configuration") == reply.at("configuration"));
    CHECK(reply2.at("answer") == reply.at("answer"));

    SUBCASE("context-free requests need a configured retrieval index") {
        nlohmann::json bare{{"question", "capital?"}, {"language", "hi"}};
        CHECK_THROWS_AS(service.answer(bare), InvalidInput);
    }
    SUBCASE("languages without a pivot never route to Sim") {
        nlohmann::json zz{{"question", "anything?"}, {"language", "zz"}, {"context", "passage"}};
        auto masked = service.answer(zz);
        CHECK(masked.at("configuration").at("strategy") != "Sim");
        CHECK(masked.at("predicted_scores_top5").size() == 2);
        for (const auto& entry : masked.at("predicted_scores_top5"))
            CHECK(entry.at("configuration").at("strategy") != "Sim");
    }
    SUBCASE("malformed requests are rejected") {
        CHECK_THROWS_AS(service.answer({{"language", "hi"}}), InvalidInput);
        CHECK_THROWS_AS(service.answer({{"question", "q"}}), InvalidInput);
        CHECK_THROWS_AS(service.answer(nlohmann::json::array()), InvalidInput);
        nlohmann::json bad_ctx{{"question", "q"}, {"language", "hi"}, {"context", 7}};
        CHECK_THROWS_AS(service.answer(bad_ctx), InvalidInput);
    }
}

TEST_CASE("routing service refuses a checkpoint for a different space") {
    ConfigurationSpace trained({"m1"}, {"e1"}, {Strategy::Mono});
    ConfigurationSpace served({"m1", "m2"}, {"e1"}, {Strategy::Mono});
    auto provider = std::make_shared<backends::HashedEmbedder>(32, "hash-32");
    auto state = selector::TrainState::make(trained, provider, 16, 21);
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());

    CHECK_THROWS_AS(RoutingService(std::move(state), served, ctx), CheckpointMismatch);
}

TEST_CASE("routing service speaks http") {
    ConfigurationSpace space({"m1"}, {"e1"}, {Strategy::Mono, Strategy::Trans});
    auto provider = std::make_shared<backends::HashedEmbedder>(32, "hash-32");
    auto state = selector::TrainState::make(space, provider, 16, 21);
    auto ctx = echo_ctx(std::make_shared<backends::EchoChatBackend>());

    RoutingService service(std::move(state), space, ctx);
    const int port = 18731;
    std::thread server([&] { service.listen("127.0.0.1", port); });

    httplib::Client client("127.0.0.1", port);
    client.set_connection_timeout(5, 0);
    bool up = false;
    for (int attempt = 0; attempt < 100 && !up; ++attempt) {
        if (auto res = client.Get("/healthz"); res && res->status == 200) up = true;
        else std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    REQUIRE(up);

    nlohmann::json request{
        {"question", "capital?"}, {"language", "hi"}, {"context", "the capital is delhi"}};
    auto res = client.Post("/answer", request.dump(), "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);
    auto body = nlohmann::json::parse(res->body);
    CHECK(body.contains("answer"));
    CHECK(body.contains("predicted_scores_top5"));

    auto bad = client.Post("/answer", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);
    CHECK(nlohmann::json::parse(bad->body).contains("error"));

    auto missing = client.Post("/answer", nlohmann::json{{"language", "hi"}}.dump(),
                               "application/json");
    REQUIRE(missing);
    CHECK(missing->status == 400);

    service.stop();
    server.join();
}

}  // TEST_SUITE
