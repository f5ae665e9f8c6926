#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyroute/config_space.hpp"
#include "polyroute/eval.hpp"
#include "polyroute/lang_similarity.hpp"
#include "polyroute/selector.hpp"
#include "polyroute/strategies.hpp"

namespace polyroute::harness {

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::string id;
    LanguageTag language;
    std::string context;
    std::string question;
    std::vector<std::string> answers;

    QueryTask to_task() const;

    nlohmann::json to_json() const;
    static DatasetRecord from_json(const nlohmann::json& j);
};

enum class DatasetFormat { SquadJson };

/// Reads a SQuAD-style file (data -> paragraphs -> qas). A `language` field
/// may sit on the data entry, the paragraph, or the qa; the innermost one
/// wins. Language codes known to the distance table get their full
/// profiles, everything else falls back to a non-Latin class-3 tag.
/// Schema violations and duplicate ids raise ParseError naming the record.
std::vector<DatasetRecord> load_dataset(
    const std::filesystem::path& path, DatasetFormat format = DatasetFormat::SquadJson,
    const langsim::DistanceTable* profiles = nullptr);

/// records.jsonl: one DatasetRecord per line.
std::vector<DatasetRecord> load_records_jsonl(const std::filesystem::path& path);
void save_records_jsonl(const std::vector<DatasetRecord>& records,
                        const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Splits.
// ---------------------------------------------------------------------------

struct SplitResult {
    std::vector<DatasetRecord> offline;
    std::vector<DatasetRecord> online;
    std::vector<DatasetRecord> test;
    /// Records of excluded languages, kept apart for adaptation studies.
    std::vector<DatasetRecord> holdout;
};

/// Language-stratified split with largest-remainder rounding per language,
/// deterministic for a given seed. Fractions must sum to 1.
SplitResult split(const std::vector<DatasetRecord>& records,
                  std::array<double, 3> fractions, std::uint64_t seed,
                  const std::set<std::string>& exclude_langs = {});

// ---------------------------------------------------------------------------
// Grid runs.
// ---------------------------------------------------------------------------

struct ResultRow {
    std::string task_id;
    Configuration config;
    std::string status;  // "ok" | "inapplicable" | "failed"
    std::string answer;
    std::optional<double> mlqa_f1;
    std::optional<double> gptannotator_f1;
    double latency_ms = 0.0;
    bool cache_hit = false;

    /// Deterministic fields only; latency and cache hits go to telemetry.
    nlohmann::json to_json() const;
    nlohmann::json telemetry_json() const;
    static ResultRow from_json(const nlohmann::json& j);
};

struct RunGridResult {
    std::vector<ResultRow> rows;
    /// Dense-where-known score tensor per task, in record order.
    std::vector<std::pair<std::string, ScoreTensor>> scores;
};

struct RunGridOptions {
    const eval::ArticleTable* articles = nullptr;  // null -> packaged table
    strategies::ShotMode shots = strategies::ShotMode::zero();
    /// Cells evaluated concurrently per task. Artifacts come out in the
    /// same order either way; backends must tolerate concurrent calls.
    int concurrency = 1;
};

/// Answers every (record, configuration) cell with the configured
/// strategy stack and scores it with the token-F1 metric. Artifacts are
/// append-only JSONL under run_dir (rows.jsonl, telemetry.jsonl,
/// scores.jsonl, manifest.json); rerunning over an existing run_dir
/// reuses finished rows instead of recomputing them.
RunGridResult run_grid(const std::vector<DatasetRecord>& records,
                       const ConfigurationSpace& space,
                       const strategies::StrategyContext& ctx,
                       const std::filesystem::path& run_dir,
                       const RunGridOptions& options = {});

/// Readers for the run_dir artifacts, for downstream stages in other
/// processes.
std::vector<ResultRow> load_rows_jsonl(const std::filesystem::path& path);
std::vector<std::pair<std::string, ScoreTensor>> load_scores_jsonl(
    const std::filesystem::path& path);

/// Judge-enriched scoring over finished rows: every distinct answer per
/// task is judged once, Yes answers join the gold set, and each row's
/// gptannotator_f1 is recomputed against that enriched set.
std::vector<ResultRow> annotate_rows(std::vector<ResultRow> rows,
                                     const std::vector<DatasetRecord>& records,
                                     eval::GptAnnotator& annotator,
                                     const eval::ArticleTable& articles =
                                         eval::ArticleTable::shared());

/// Score tensors reassembled as selector training samples.
std::vector<selector::TrainSample> to_train_samples(
    const std::vector<DatasetRecord>& records,
    const std::vector<std::pair<std::string, ScoreTensor>>& scores);

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

enum class GroupKey { Strategy, Model, Embedding };

struct ReportTables {
    std::string markdown;
    std::string csv;
};

/// One table row per language, one column per distinct combination of the
/// chosen configuration keys; cells are mean token-F1 over matching ok
/// rows. The markdown flavor bolds each language's best column. Aggregates
/// are order-independent over the input rows.
ReportTables report(const std::vector<ResultRow>& rows,
                    const std::vector<DatasetRecord>& records,
                    const std::vector<GroupKey>& columns = {GroupKey::Strategy});

// ---------------------------------------------------------------------------
// Serving.
// ---------------------------------------------------------------------------

struct ServiceOptions {
    bool sample = false;       // false: argmax selection
    double temperature = 1.0;  // softmax temperature when sampling
    int top_k = 5;
};

/// HTTP routing service: POST /answer {question, language, context?}
/// predicts per-configuration scores, picks a configuration, runs it, and
/// returns the answer with the top-k predictions. GET /healthz reports
/// liveness. Construction fails with CheckpointMismatch when the
/// checkpoint's configuration space differs from the configured one.
class RoutingService {
public:
    RoutingService(selector::TrainState state, const ConfigurationSpace& expected_space,
                   strategies::StrategyContext ctx, ServiceOptions options = {});
    ~RoutingService();

    /// The /answer request handler, exposed directly for tests.
    nlohmann::json answer(const nlohmann::json& request);
    nlohmann::json health() const;

    /// Blocks until stop(). Returns false if the port could not be bound.
    bool listen(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Manifests and hashing.
// ---------------------------------------------------------------------------

std::string hex64(std::uint64_t value);

/// Everything that pins down a reproducible run. run_grid fills the
/// dataset hash and provider ids itself; path, seed, and fractions are
/// caller-supplied bookkeeping for pipeline-level manifests.
struct RunManifest {
    std::string dataset_path;
    std::string dataset_hash;
    std::size_t record_count = 0;
    ConfigurationSpace space;
    std::uint64_t seed = 0;
    std::array<double, 3> fractions{1.0, 0.0, 0.0};
    std::map<std::string, std::string> providers;  // role -> provider id
    std::string metric = "mlqa_f1";
    std::string shots = "zero";

    nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    std::string hash() const;
};

std::string dataset_hash(const std::vector<DatasetRecord>& records);

}  // namespace polyroute::harness
