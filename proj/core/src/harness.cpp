#include "polyroute/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <mutex>
#include <random>
#include <sstream>

#include <httplib.h>

#include "polyroute/response_cache.hpp"

namespace polyroute::harness {

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

nlohmann::json config_to_json(const Configuration& c) {
    return {{"model", c.model_id},
            {"embedding", c.embedding_id},
            {"strategy", to_string(c.strategy)}};
}

Configuration config_from_json(const nlohmann::json& j) {
    return Configuration{j.at("model").get<std::string>(),
                         j.at("embedding").get<std::string>(),
                         parse_strategy(j.at("strategy").get<std::string>())};
}

/// Known code -> full profile; anything else -> conservative low-resource tag.
LanguageTag resolve_language(const std::string& code, const langsim::DistanceTable* profiles) {
    if (code.empty()) throw ParseError("empty language code");
    const langsim::DistanceTable& table =
        profiles != nullptr ? *profiles : langsim::DistanceTable::shared();
    if (table.has_language(code)) return table.profile(code);
    return LanguageTag{code, Script::NonLatin, 3};
}

std::optional<std::string> language_field(const nlohmann::json& j, const std::string& locus) {
    if (!j.contains("language")) return std::nullopt;
    if (!j.at("language").is_string())
        throw ParseError(locus + ": language must be a string");
    return j.at("language").get<std::string>();
}

std::string shots_label(const strategies::ShotMode& shots) {
    if (shots.kind == strategies::ShotMode::Kind::Zero) return "zero";
    return "few:" + std::to_string(shots.n_examples) + ":" + std::to_string(shots.seed);
}

nlohmann::json parse_json_line(const std::string& line, const std::string& locus) {
    try {
        return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(locus + ": " + e.what());
    }
}

void append_line(std::ofstream& out, const nlohmann::json& j) {
    out << j.dump() << '\n';
    out.flush();
}

std::string format_fixed(double value, int digits) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, value);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

QueryTask DatasetRecord::to_task() const {
    QueryTask task;
    task.id = id;
    task.language = language;
    task.question = question;
    if (!context.empty()) task.context = context;
    task.gold_answers = answers;
    return task;
}

nlohmann::json DatasetRecord::to_json() const {
    return {{"id", id},
            {"language", tag_to_json(language)},
            {"context", context},
            {"question", question},
            {"answers", answers}};
}

DatasetRecord DatasetRecord::from_json(const nlohmann::json& j) {
    try {
        DatasetRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.language = tag_from_json(j.at("language"));
        rec.context = j.at("context").get<std::string>();
        rec.question = j.at("question").get<std::string>();
        rec.answers = j.at("answers").get<std::vector<std::string>>();
        if (rec.id.empty()) throw ParseError("record has an empty id");
        if (rec.question.empty()) throw ParseError("record '" + rec.id + "' has an empty question");
        if (rec.answers.empty()) throw ParseError("record '" + rec.id + "' has no answers");
        return rec;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed dataset record: ") + e.what());
    }
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                        const langsim::DistanceTable* profiles) {
    (void)format;  // squad_json is the only wire format so far
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open dataset file: " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }

    if (!doc.is_object() || !doc.contains("data") || !doc.at("data").is_array())
        throw ParseError(path.string() + ": expected a top-level object with a data array");
    auto top_lang = language_field(doc, "top level");

    std::vector<DatasetRecord> records;
    std::set<std::string> seen;
    const auto& data = doc.at("data");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string entry_locus = "data[" + std::to_string(i) + "]";
        const auto& entry = data[i];
        if (!entry.is_object()) throw ParseError(entry_locus + ": expected an object");
        auto entry_lang = language_field(entry, entry_locus);
        if (!entry_lang) entry_lang = top_lang;
        if (!entry.contains("paragraphs") || !entry.at("paragraphs").is_array())
            throw ParseError(entry_locus + ": missing paragraphs array");

        const auto& paragraphs = entry.at("paragraphs");
        for (std::size_t p = 0; p < paragraphs.size(); ++p) {
            const std::string para_locus = entry_locus + ".paragraphs[" + std::to_string(p) + "]";
            const auto& para = paragraphs[p];
            if (!para.is_object() || !para.contains("context") || !para.at("context").is_string())
                throw ParseError(para_locus + ": missing context passage");
            auto para_lang = language_field(para, para_locus);
            if (!para_lang) para_lang = entry_lang;
            if (!para.contains("qas") || !para.at("qas").is_array())
                throw ParseError(para_locus + ": missing qas array");

            const auto& qas = para.at("qas");
            for (std::size_t q = 0; q < qas.size(); ++q) {
                std::string locus = para_locus + ".qas[" + std::to_string(q) + "]";
                const auto& qa = qas[q];
                if (!qa.is_object()) throw ParseError(locus + ": expected an object");
                if (!qa.contains("id") || !qa.at("id").is_string() ||
                    qa.at("id").get<std::string>().empty())
                    throw ParseError(locus + ": missing id");
                DatasetRecord rec;
                rec.id = qa.at("id").get<std::string>();
                locus += " (id=" + rec.id + ")";
                if (!seen.insert(rec.id).second)
                    throw ParseError(locus + ": duplicate task id");
                if (!qa.contains("question") || !qa.at("question").is_string() ||
                    qa.at("question").get<std::string>().empty())
                    throw ParseError(locus + ": missing question");
                rec.question = qa.at("question").get<std::string>();
                rec.context = para.at("context").get<std::string>();

                if (!qa.contains("answers") || !qa.at("answers").is_array())
                    throw ParseError(locus + ": missing answers field");
                for (const auto& ans : qa.at("answers")) {
                    if (!ans.is_object() || !ans.contains("text") || !ans.at("text").is_string())
                        throw ParseError(locus + ": answers entries need a text field");
                    std::string text = ans.at("text").get<std::string>();
                    if (!text.empty()) rec.answers.push_back(std::move(text));
                }
                if (rec.answers.empty())
                    throw ParseError(locus + ": no non-empty answers");

                auto qa_lang = language_field(qa, locus);
                if (!qa_lang) qa_lang = para_lang;
                if (!qa_lang) throw ParseError(locus + ": no language tag in scope");
                rec.language = resolve_language(*qa_lang, profiles);
                records.push_back(std::move(rec));
            }
        }
    }
    return records;
}

std::vector<DatasetRecord> load_records_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open records file: " + path.string());
    std::vector<DatasetRecord> records;
    std::set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string locus = path.string() + ":" + std::to_string(line_no);
        auto rec = DatasetRecord::from_json(parse_json_line(line, locus));
        if (!seen.insert(rec.id).second)
            throw ParseError(locus + ": duplicate task id '" + rec.id + "'");
        records.push_back(std::move(rec));
    }
    return records;
}

void save_records_jsonl(const std::vector<DatasetRecord>& records,
                        const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot write records file: " + path.string());
    for (const auto& rec : records) out << rec.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------

SplitResult split(const std::vector<DatasetRecord>& records, std::array<double, 3> fractions,
                  std::uint64_t seed, const std::set<std::string>& exclude_langs) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw InvalidInput("split fractions must be non-negative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidInput("split fractions must sum to 1");

    SplitResult out;
    std::map<std::string, std::vector<DatasetRecord>> groups;
    for (const auto& rec : records) {
        if (exclude_langs.count(rec.language.code))
            out.holdout.push_back(rec);
        else
            groups[rec.language.code].push_back(rec);
    }

    // One rng stream over the language groups in sorted-code order keeps
    // the whole split a function of (records, fractions, seed).
    std::mt19937_64 rng(seed);
    for (auto& [code, group] : groups) {
        std::shuffle(group.begin(), group.end(), rng);
        const std::size_t n = group.size();
        std::array<std::size_t, 3> take{};
        std::array<double, 3> remainder{};
        std::size_t assigned = 0;
        for (int t = 0; t < 3; ++t) {
            double quota = fractions[t] * static_cast<double>(n);
            take[t] = static_cast<std::size_t>(std::floor(quota));
            remainder[t] = quota - static_cast<double>(take[t]);
            assigned += take[t];
        }
        std::array<int, 3> order{0, 1, 2};
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return remainder[a] > remainder[b]; });
        for (std::size_t extra = 0; extra < n - assigned; ++extra) take[order[extra % 3]] += 1;

        std::size_t cursor = 0;
        auto drain = [&](std::vector<DatasetRecord>& dest, std::size_t count) {
            for (std::size_t k = 0; k < count; ++k) dest.push_back(std::move(group[cursor++]));
        };
        drain(out.offline, take[0]);
        drain(out.online, take[1]);
        drain(out.test, take[2]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result rows.
// ---------------------------------------------------------------------------

nlohmann::json ResultRow::to_json() const {
    nlohmann::json j{{"task_id", task_id},
                     {"config", config_to_json(config)},
                     {"status", status},
                     {"answer", answer}};
    if (mlqa_f1) j["mlqa_f1"] = *mlqa_f1;
    if (gptannotator_f1) j["gptannotator_f1"] = *gptannotator_f1;
    return j;
}

nlohmann::json ResultRow::telemetry_json() const {
    return {{"task_id", task_id},
            {"config", config_to_json(config)},
            {"latency_ms", latency_ms},
            {"cache_hit", cache_hit}};
}

ResultRow ResultRow::from_json(const nlohmann::json& j) {
    try {
        ResultRow row;
        row.task_id = j.at("task_id").get<std::string>();
        row.config = config_from_json(j.at("config"));
        row.status = j.at("status").get<std::string>();
        row.answer = j.at("answer").get<std::string>();
        if (j.contains("mlqa_f1")) row.mlqa_f1 = j.at("mlqa_f1").get<double>();
        if (j.contains("gptannotator_f1"))
            row.gptannotator_f1 = j.at("gptannotator_f1").get<double>();
        if (row.status != "ok" && row.status != "inapplicable" && row.status != "failed")
            throw ParseError("unknown result status '" + row.status + "'");
        for (const auto& score : {row.mlqa_f1, row.gptannotator_f1})
            if (score && (*score < 0.0 || *score > 1.0))
                throw ParseError("result score outside [0,1] for task '" + row.task_id + "'");
        return row;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed result row: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Grid runs.
// ---------------------------------------------------------------------------

namespace {

ResultRow evaluate_cell(const DatasetRecord& rec, const QueryTask& task,
                        const Configuration& config, const strategies::StrategyContext& ctx,
                        const strategies::ShotMode& shots, const eval::ArticleTable& articles) {
    ResultRow row;
    row.task_id = rec.id;
    row.config = config;
    const auto started = std::chrono::steady_clock::now();
    try {
        auto outcome = strategies::run(config.strategy, task, config, ctx, shots);
        row.status = "ok";
        row.answer = outcome.final_answer;
        row.mlqa_f1 = eval::mlqa_f1(outcome.final_answer, rec.answers, rec.language, articles);
    } catch (const StrategyInapplicable&) {
        row.status = "inapplicable";
    } catch (const StrategyFailed&) {
        row.status = "failed";
    }
    row.latency_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    return row;
}

}  // namespace

RunGridResult run_grid(const std::vector<DatasetRecord>& records, const ConfigurationSpace& space,
                       const strategies::StrategyContext& ctx,
                       const std::filesystem::path& run_dir, const RunGridOptions& options) {
    if (!ctx.chat) throw InvalidInput("run_grid needs a chat backend");
    if (options.concurrency < 1) throw InvalidInput("concurrency must be at least 1");
    const eval::ArticleTable& articles =
        options.articles != nullptr ? *options.articles : eval::ArticleTable::shared();

    std::filesystem::create_directories(run_dir);

    RunManifest manifest{.dataset_path = {},
                         .dataset_hash = dataset_hash(records),
                         .record_count = records.size(),
                         .space = space,
                         .seed = 0,
                         .fractions = {1.0, 0.0, 0.0},
                         .providers = {},
                         .metric = "mlqa_f1",
                         .shots = shots_label(options.shots)};
    manifest.providers["chat"] = ctx.chat->provider_id();
    if (ctx.translator) manifest.providers["translation"] = ctx.translator->provider_id();
    if (ctx.embedder) manifest.providers["embedding"] = ctx.embedder->provider_id();

    const auto manifest_path = run_dir / "manifest.json";
    if (std::filesystem::exists(manifest_path)) {
        std::ifstream in(manifest_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(manifest_path.string() + ": " + e.what());
        }
        auto existing = RunManifest::from_json(j);
        // Path, seed, and fractions are pipeline bookkeeping; the run
        // itself is pinned by dataset, space, providers, metric, shots.
        existing.dataset_path = manifest.dataset_path;
        existing.seed = manifest.seed;
        existing.fractions = manifest.fractions;
        if (existing.hash() != manifest.hash())
            throw InvalidInput("run directory " + run_dir.string() +
                               " was created by a different job (manifest mismatch)");
    } else {
        std::ofstream out(manifest_path, std::ios::trunc);
        if (!out) throw InvalidInput("cannot write " + manifest_path.string());
        out << manifest.to_json().dump(2) << '\n';
    }

    const auto rows_path = run_dir / "rows.jsonl";
    std::map<std::pair<std::string, std::string>, ResultRow> done;
    if (std::filesystem::exists(rows_path)) {
        std::ifstream in(rows_path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const std::string locus = rows_path.string() + ":" + std::to_string(line_no);
            auto row = ResultRow::from_json(parse_json_line(line, locus));
            done[{row.task_id, row.config.canonical()}] = std::move(row);
        }
    }

    std::ofstream rows_out(rows_path, std::ios::app);
    std::ofstream telemetry_out(run_dir / "telemetry.jsonl", std::ios::app);
    if (!rows_out || !telemetry_out)
        throw InvalidInput("cannot write run artifacts under " + run_dir.string());

    const auto configs = space.enumerate();
    RunGridResult result;
    for (const auto& rec : records) {
        const QueryTask task = rec.to_task();
        std::vector<ResultRow> cells(configs.size());
        std::vector<std::size_t> pending;
        for (std::size_t c = 0; c < configs.size(); ++c) {
            auto it = done.find({rec.id, configs[c].canonical()});
            if (it != done.end()) {
                cells[c] = it->second;
                cells[c].cache_hit = true;
            } else {
                pending.push_back(c);
            }
        }

        if (options.concurrency == 1) {
            for (std::size_t c : pending)
                cells[c] = evaluate_cell(rec, task, configs[c], ctx, options.shots, articles);
        } else {
            for (std::size_t base = 0; base < pending.size();
                 base += static_cast<std::size_t>(options.concurrency)) {
                std::vector<std::future<ResultRow>> batch;
                for (std::size_t b = base;
                     b < std::min(pending.size(),
                                  base + static_cast<std::size_t>(options.concurrency));
                     ++b) {
                    std::size_t c = pending[b];
                    batch.push_back(std::async(std::launch::async, [&, c] {
                        return evaluate_cell(rec, task, configs[c], ctx, options.shots, articles);
                    }));
                }
                for (std::size_t b = 0; b < batch.size(); ++b)
                    cells[pending[base + b]] = batch[b].get();
            }
        }

        ScoreTensor scores(space.shape());
        for (std::size_t c = 0; c < configs.size(); ++c) {
            ResultRow& row = cells[c];
            if (!row.cache_hit) {
                append_line(rows_out, row.to_json());
                append_line(telemetry_out, row.telemetry_json());
            }
            if (row.status == "ok" && row.mlqa_f1)
                scores.set(space.linear_index(configs[c]), *row.mlqa_f1);
            result.rows.push_back(std::move(row));
        }
        result.scores.emplace_back(rec.id, std::move(scores));
    }

    // Derived wholesale from the rows, so a plain rewrite keeps it honest.
    std::ofstream scores_out(run_dir / "scores.jsonl", std::ios::trunc);
    for (const auto& [task_id, tensor] : result.scores)
        scores_out << nlohmann::json{{"task_id", task_id}, {"scores", tensor.to_json()}}.dump()
                   << '\n';
    return result;
}

std::vector<ResultRow> annotate_rows(std::vector<ResultRow> rows,
                                     const std::vector<DatasetRecord>& records,
                                     eval::GptAnnotator& annotator,
                                     const eval::ArticleTable& articles) {
    std::map<std::string, const DatasetRecord*> by_id;
    for (const auto& rec : records) by_id[rec.id] = &rec;

    std::map<std::string, std::vector<std::size_t>> ok_rows_by_task;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!by_id.count(rows[i].task_id))
            throw InvalidInput("row references unknown task id '" + rows[i].task_id + "'");
        if (rows[i].status == "ok") ok_rows_by_task[rows[i].task_id].push_back(i);
    }

    for (const auto& [task_id, indices] : ok_rows_by_task) {
        const DatasetRecord& rec = *by_id.at(task_id);
        if (rec.answers.empty())
            throw InvalidInput("task '" + task_id + "' has no gold answer to judge against");

        // Pool every distinct answer the grid produced for this question and
        // judge each once; Yes verdicts then widen the accepted set for all rows.
        std::vector<std::string> pooled;
        for (std::size_t i : indices) pooled.push_back(rows[i].answer);
        std::sort(pooled.begin(), pooled.end());
        pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

        auto judged = annotator.annotate(rec.question, rec.context, rec.answers.front(), pooled);
        auto enriched = eval::enrich(rec.answers.front(), pooled, judged);
        for (std::size_t i : indices) {
            double f1 = eval::gptannotator_f1(rows[i].answer, enriched, rec.language, articles);
            // Secondary gold answers stay in play alongside the enriched set.
            if (rec.answers.size() > 1)
                f1 = std::max(f1, eval::mlqa_f1(rows[i].answer, rec.answers, rec.language, articles));
            rows[i].gptannotator_f1 = f1;
        }
    }
    return rows;
}

std::vector<ResultRow> load_rows_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open rows file: " + path.string());
    std::vector<ResultRow> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string locus = path.string() + ":" + std::to_string(line_no);
        rows.push_back(ResultRow::from_json(parse_json_line(line, locus)));
    }
    return rows;
}

std::vector<std::pair<std::string, ScoreTensor>> load_scores_jsonl(
    const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open scores file: " + path.string());
    std::vector<std::pair<std::string, ScoreTensor>> scores;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string locus = path.string() + ":" + std::to_string(line_no);
        auto j = parse_json_line(line, locus);
        try {
            scores.emplace_back(j.at("task_id").get<std::string>(),
                                ScoreTensor::from_json(j.at("scores")));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(locus + ": " + e.what());
        }
    }
    return scores;
}

std::vector<selector::TrainSample> to_train_samples(
    const std::vector<DatasetRecord>& records,
    const std::vector<std::pair<std::string, ScoreTensor>>& scores) {
    std::map<std::string, const ScoreTensor*> by_id;
    for (const auto& [task_id, tensor] : scores) by_id[task_id] = &tensor;
    std::vector<selector::TrainSample> samples;
    for (const auto& rec : records) {
        auto it = by_id.find(rec.id);
        if (it == by_id.end()) throw InvalidInput("no scores recorded for task '" + rec.id + "'");
        samples.push_back({rec.to_task(), *it->second});
    }
    return samples;
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

namespace {

std::string column_label(const Configuration& config, const std::vector<GroupKey>& columns) {
    std::string label;
    for (GroupKey key : columns) {
        if (!label.empty()) label += '/';
        switch (key) {
            case GroupKey::Strategy: label += to_string(config.strategy); break;
            case GroupKey::Model: label += config.model_id; break;
            case GroupKey::Embedding: label += config.embedding_id; break;
        }
    }
    return label;
}

}  // namespace

ReportTables report(const std::vector<ResultRow>& rows, const std::vector<DatasetRecord>& records,
                    const std::vector<GroupKey>& columns) {
    if (columns.empty()) throw InvalidInput("report needs at least one grouping key");
    std::map<std::string, std::string> lang_of;
    for (const auto& rec : records) lang_of[rec.id] = rec.language.code;

    std::map<std::string, std::map<std::string, std::vector<double>>> cells;
    std::set<std::string> column_keys;
    for (const auto& row : rows) {
        if (row.status != "ok" || !row.mlqa_f1) continue;
        auto it = lang_of.find(row.task_id);
        if (it == lang_of.end())
            throw InvalidInput("row references unknown task id '" + row.task_id + "'");
        const std::string key = column_label(row.config, columns);
        cells[it->second][key].push_back(*row.mlqa_f1);
        column_keys.insert(key);
    }

    std::ostringstream md, csv;
    md << "| language |";
    csv << "language";
    for (const auto& key : column_keys) {
        md << ' ' << key << " |";
        csv << ',' << key;
    }
    md << "\n|---|";
    csv << '\n';
    for (std::size_t k = 0; k < column_keys.size(); ++k) md << "---|";
    md << '\n';

    for (const auto& [lang, by_key] : cells) {
        // Sorted accumulation makes each mean independent of row order.
        std::map<std::string, double> mean;
        double row_max = 0.0;
        for (const auto& [key, values] : by_key) {
            std::vector<double> sorted = values;
            std::sort(sorted.begin(), sorted.end());
            double sum = 0.0;
            for (double v : sorted) sum += v;
            mean[key] = sum / static_cast<double>(sorted.size());
            row_max = std::max(row_max, mean[key]);
        }

        md << "| " << lang << " |";
        csv << lang;
        for (const auto& key : column_keys) {
            auto it = mean.find(key);
            if (it == mean.end()) {
                md << " - |";
                csv << ',';
                continue;
            }
            const std::string shown = format_fixed(it->second, 3);
            if (it->second == row_max)
                md << " **" << shown << "** |";
            else
                md << ' ' << shown << " |";
            csv << ',' << format_fixed(it->second, 6);
        }
        md << '\n';
        csv << '\n';
    }
    return {md.str(), csv.str()};
}

// ---------------------------------------------------------------------------
// Serving.
// ---------------------------------------------------------------------------

struct RoutingService::Impl {
    selector::TrainState state;
    ConfigurationSpace space;
    strategies::StrategyContext ctx;
    ServiceOptions options;
    httplib::Server server;
    std::mutex mutex;
    long served = 0;
};

RoutingService::RoutingService(selector::TrainState state, const ConfigurationSpace& expected_space,
                               strategies::StrategyContext ctx, ServiceOptions options)
    : impl_(new Impl{std::move(state), expected_space, std::move(ctx), options, {}, {}, 0}) {
    if (impl_->state.space() != expected_space)
        throw CheckpointMismatch(
            "selector checkpoint was trained on a different configuration space");
    if (!impl_->ctx.chat) throw InvalidInput("routing service needs a chat backend");
    if (impl_->options.top_k < 1) throw InvalidInput("top_k must be at least 1");

    impl_->server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(health().dump(), "application/json");
    });
    impl_->server.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json reply;
        try {
            nlohmann::json body;
            try {
                body = nlohmann::json::parse(req.body);
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("request body is not valid JSON: ") + e.what());
            }
            reply = answer(body);
            res.status = 200;
        } catch (const InvalidInput& e) {
            res.status = 400;
            reply = {{"error", e.what()}};
        } catch (const ParseError& e) {
            res.status = 400;
            reply = {{"error", e.what()}};
        } catch (const BackendUnavailable& e) {
            res.status = 502;
            reply = {{"error", e.what()}};
        } catch (const RateLimited& e) {
            res.status = 502;
            reply = {{"error", e.what()}};
        } catch (const std::exception& e) {
            res.status = 500;
            reply = {{"error", e.what()}};
        }
        res.set_content(reply.dump(), "application/json");
    });
}

RoutingService::~RoutingService() {
    if (impl_) impl_->server.stop();
}

nlohmann::json RoutingService::answer(const nlohmann::json& request) {
    if (!request.is_object()) throw InvalidInput("request must be a JSON object");
    if (!request.contains("question") || !request.at("question").is_string() ||
        request.at("question").get<std::string>().empty())
        throw InvalidInput("request needs a non-empty question string");
    if (!request.contains("language") || !request.at("language").is_string() ||
        request.at("language").get<std::string>().empty())
        throw InvalidInput("request needs a language code");
    if (request.contains("context") && !request.at("context").is_string())
        throw InvalidInput("context must be a string when present");

    std::lock_guard<std::mutex> lock(impl_->mutex);
    const langsim::DistanceTable& table =
        impl_->ctx.distances != nullptr ? *impl_->ctx.distances : langsim::DistanceTable::shared();
    const std::string code = request.at("language").get<std::string>();
    const LanguageTag lang = table.has_language(code)
                                 ? table.profile(code)
                                 : LanguageTag{code, Script::NonLatin, 3};

    QueryTask task;
    task.id = "request-" + std::to_string(++impl_->served);
    task.language = lang;
    task.question = request.at("question").get<std::string>();
    if (request.contains("context")) task.context = request.at("context").get<std::string>();

    const selector::Tensor scores = impl_->state.predict(task);
    selector::CellMask mask(static_cast<std::size_t>(impl_->space.total()), 1);
    const bool sim_ok =
        table.has_language(lang.code) && langsim::pivot_for(lang, table).has_value();
    if (!sim_ok) {
        for (int k = 0; k < impl_->space.total(); ++k)
            if (impl_->space.multi_index(k).strategy == Strategy::Sim) mask[k] = 0;
    }

    const std::int64_t pick =
        impl_->options.sample
            ? selector::select_online(scores, impl_->options.temperature, impl_->state.rng(), &mask)
            : selector::select_offline(scores, &mask);
    const Configuration config = impl_->space.multi_index(static_cast<int>(pick));
    auto outcome = strategies::run(config.strategy, task, config, impl_->ctx);

    nlohmann::json top = nlohmann::json::array();
    for (std::int64_t k :
         selector::top_k(scores, static_cast<std::size_t>(impl_->options.top_k), &mask)) {
        nlohmann::json entry{
            {"configuration", config_to_json(impl_->space.multi_index(static_cast<int>(k)))},
            {"score", scores[static_cast<std::size_t>(k)]}};
        top.push_back(std::move(entry));
    }

    return {{"answer", outcome.final_answer},
            {"configuration", config_to_json(config)},
            {"predicted_scores_top5", top}};
}

nlohmann::json RoutingService::health() const {
    return {{"status", "ok"},
            {"space", impl_->space.to_json()},
            {"epoch", impl_->state.epoch()}};
}

bool RoutingService::listen(const std::string& host, int port) {
    return impl_->server.listen(host, port);
}

void RoutingService::stop() { impl_->server.stop(); }

// ---------------------------------------------------------------------------
// Manifests and hashing.
// ---------------------------------------------------------------------------

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

nlohmann::json RunManifest::to_json() const {
    return {{"dataset_path", dataset_path},
            {"dataset_hash", dataset_hash},
            {"record_count", record_count},
            {"space", space.to_json()},
            {"seed", seed},
            {"fractions", fractions},
            {"providers", providers},
            {"metric", metric},
            {"shots", shots}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    try {
        RunManifest m{.dataset_path = j.at("dataset_path").get<std::string>(),
                      .dataset_hash = j.at("dataset_hash").get<std::string>(),
                      .record_count = j.at("record_count").get<std::size_t>(),
                      .space = ConfigurationSpace::from_json(j.at("space")),
                      .seed = j.at("seed").get<std::uint64_t>(),
                      .fractions = j.at("fractions").get<std::array<double, 3>>(),
                      .providers = j.at("providers").get<std::map<std::string, std::string>>(),
                      .metric = j.at("metric").get<std::string>(),
                      .shots = j.at("shots").get<std::string>()};
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed run manifest: ") + e.what());
    }
}

std::string RunManifest::hash() const { return hex64(backends::fnv1a64(to_json().dump())); }

std::string dataset_hash(const std::vector<DatasetRecord>& records) {
    std::string buffer;
    for (const auto& rec : records) {
        buffer += rec.to_json().dump();
        buffer += '\n';
    }
    return hex64(backends::fnv1a64(buffer));
}

}  // namespace polyroute::harness
