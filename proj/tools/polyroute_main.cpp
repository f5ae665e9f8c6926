#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyroute/harness.hpp"
#include "polyroute/openai_client.hpp"
#include "polyroute/response_cache.hpp"
#include "polyroute/translation.hpp"

using namespace polyroute;

namespace {

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file: " + path);
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

ConfigurationSpace space_from(const nlohmann::json& config) {
    if (!config.contains("space"))
        throw InvalidInput("config needs a \"space\" object (models, embeddings, strategies)");
    return ConfigurationSpace::from_json(config.at("space"));
}

backends::ProviderEndpoint endpoint_from(const nlohmann::json& spec) {
    backends::ProviderEndpoint ep;
    ep.provider_id = spec.value("provider_id", std::string("openai"));
    ep.base_url = spec.at("base_url").get<std::string>();
    // only the *name* of the env var lives in config; the key itself is
    // resolved from the environment by the client
    ep.key_env = spec.value("key_env", std::string());
    return ep;
}

struct Providers {
    std::shared_ptr<backends::ChatBackend> chat;
    std::shared_ptr<backends::TranslationBackend> translator;
    std::shared_ptr<backends::EmbeddingBackend> embedder;
    std::shared_ptr<backends::ResponseCache> cache;
};

Providers build_providers(const nlohmann::json& config) {
    Providers p;
    const auto specs = config.value("providers", nlohmann::json::object());
    if (config.contains("cache_dir"))
        p.cache =
            std::make_shared<backends::ResponseCache>(config.at("cache_dir").get<std::string>());

    const auto chat_spec = specs.value("chat", nlohmann::json{{"kind", "echo"}});
    const std::string chat_kind = chat_spec.value("kind", std::string("echo"));
    if (chat_kind == "echo")
        p.chat = std::make_shared<backends::EchoChatBackend>();
    else if (chat_kind == "openai")
        p.chat = std::make_shared<backends::OpenAiChatBackend>(endpoint_from(chat_spec));
    else
        throw InvalidInput("unknown chat provider kind: " + chat_kind);
    if (p.cache && chat_kind == "openai")
        p.chat = std::make_shared<backends::CachedChatBackend>(p.chat, p.cache);

    const auto tr_spec = specs.value("translation", nlohmann::json{{"kind", "mock-tagging"}});
    const std::string tr_kind = tr_spec.value("kind", std::string("mock-tagging"));
    if (tr_kind == "mock-tagging")
        p.translator = std::make_shared<backends::TaggingMockTranslator>();
    else if (tr_kind == "chat")
        // rides the main chat backend, so it shares that backend's cache
        p.translator = std::make_shared<backends::ChatTranslationBackend>(
            p.chat, tr_spec.at("model").get<std::string>());
    else if (tr_kind == "openai") {
        std::shared_ptr<backends::ChatBackend> chat =
            std::make_shared<backends::OpenAiChatBackend>(endpoint_from(tr_spec));
        if (p.cache) chat = std::make_shared<backends::CachedChatBackend>(chat, p.cache);
        p.translator = std::make_shared<backends::ChatTranslationBackend>(
            std::move(chat), tr_spec.at("model").get<std::string>());
    } else {
        throw InvalidInput("unknown translation provider kind: " + tr_kind);
    }

    const auto emb_spec = specs.value("embedding", nlohmann::json{{"kind", "hashed"}});
    const std::string emb_kind = emb_spec.value("kind", std::string("hashed"));
    if (emb_kind == "hashed")
        p.embedder = std::make_shared<backends::HashedEmbedder>(
            emb_spec.value("dimension", 64), emb_spec.value("id", std::string()));
    else if (emb_kind == "openai")
        p.embedder = std::make_shared<backends::OpenAiEmbeddingBackend>(
            endpoint_from(emb_spec), emb_spec.at("model").get<std::string>(),
            emb_spec.at("dimension").get<int>());
    else
        throw InvalidInput("unknown embedding provider kind: " + emb_kind);
    if (p.cache && emb_kind == "openai")
        p.embedder = std::make_shared<backends::CachedEmbeddingBackend>(p.embedder, p.cache);
    return p;
}

strategies::StrategyContext build_ctx(const Providers& p, const nlohmann::json& config) {
    strategies::StrategyContext ctx;
    ctx.chat = p.chat;
    ctx.translator = p.translator;
    ctx.embedder = p.embedder.get();
    ctx.temperature = config.value("temperature", 0.0);
    ctx.max_tokens = config.value("max_tokens", 256);
    ctx.retrieval_k = config.value("retrieval_k", 3);
    return ctx;
}

selector::TrainHyper hyper_from(const nlohmann::json& config) {
    const auto sel = config.value("selector", nlohmann::json::object());
    selector::TrainHyper hyper;
    hyper.lr = sel.value("lr", hyper.lr);
    hyper.batch_size = sel.value("batch_size", hyper.batch_size);
    hyper.temperature = sel.value("sample_temperature", hyper.temperature);
    hyper.train_backbone = sel.value("train_backbone", hyper.train_backbone);
    return hyper;
}

std::size_t projection_dim_from(const nlohmann::json& config) {
    return config.value("selector", nlohmann::json::object())
        .value("projection_dim", std::size_t{64});
}

strategies::ShotMode parse_shots(const std::string& text) {
    if (text == "zero") return strategies::ShotMode::zero();
    std::istringstream in(text);
    std::string kind;
    std::getline(in, kind, ':');
    if (kind != "few") throw InvalidInput("shots must be 'zero' or 'few[:n[:seed]]'");
    auto mode = strategies::ShotMode::few();
    std::string part;
    if (std::getline(in, part, ':')) mode.n_examples = std::stoi(part);
    if (std::getline(in, part, ':')) mode.seed = static_cast<unsigned>(std::stoul(part));
    return mode;
}

std::vector<harness::GroupKey> parse_group_by(const std::string& text) {
    std::vector<harness::GroupKey> keys;
    std::istringstream in(text);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (part == "strategy")
            keys.push_back(harness::GroupKey::Strategy);
        else if (part == "model")
            keys.push_back(harness::GroupKey::Model);
        else if (part == "embedding")
            keys.push_back(harness::GroupKey::Embedding);
        else
            throw InvalidInput("unknown group-by key: " + part +
                               " (expected strategy, model, or embedding)");
    }
    return keys;
}

selector::LogSink jsonl_sink(const std::string& path) {
    if (path.empty()) return {};
    auto out = std::make_shared<std::ofstream>(path, std::ios::app);
    if (!*out) throw InvalidInput("cannot open log file: " + path);
    return [out](const nlohmann::json& j) { *out << j.dump() << '\n'; };
}

/// Ground truth queried live: run the strategy, score against the task's
/// gold answers. Cells that cannot run at all score zero.
selector::OnlineOracle live_oracle(const strategies::StrategyContext& ctx) {
    return [&ctx](const QueryTask& task, const Configuration& config) {
        try {
            auto outcome = strategies::run(config.strategy, task, config, ctx);
            return eval::mlqa_f1(outcome.final_answer, task.gold_answers, task.language);
        } catch (const StrategyInapplicable&) {
            return 0.0;
        } catch (const StrategyFailed&) {
            return 0.0;
        }
    };
}

selector::MaskProvider sim_mask(const ConfigurationSpace& space,
                                const langsim::DistanceTable& table) {
    auto pivotable = std::make_shared<std::map<std::string, bool>>();
    return [&space, &table, pivotable](const QueryTask& task) {
        auto [it, fresh] = pivotable->try_emplace(task.language.code, false);
        if (fresh)
            it->second =
                table.has_language(task.language.code) &&
                langsim::pivot_for(table.profile(task.language.code), table).has_value();
        selector::CellMask mask(static_cast<std::size_t>(space.total()), 1);
        if (!it->second)
            for (int k = 0; k < space.total(); ++k)
                if (space.multi_index(k).strategy == Strategy::Sim) mask[k] = 0;
        return mask;
    };
}

void write_pipeline_manifest(const std::filesystem::path& run_dir, const harness::RunManifest& m) {
    std::filesystem::create_directories(run_dir);
    const auto path = run_dir / "manifest.json";
    if (std::filesystem::exists(path)) return;  // run_grid verifies compatibility
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + path.string());
    out << m.to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Subcommands.
// ---------------------------------------------------------------------------

struct CommonOpts {
    std::string config_path;
};

void cmd_ingest(const CommonOpts& common, const std::string& input, const std::string& output,
                const std::string& format) {
    (void)load_config(common.config_path);  // validated for early feedback
    if (format != "squad_json") throw InvalidInput("unknown dataset format: " + format);
    auto records = harness::load_dataset(input);
    harness::save_records_jsonl(records, output);
    std::cout << "ingested " << records.size() << " records -> " << output << "\n";
}

void cmd_split(const CommonOpts& common, const std::string& records_path,
               const std::string& out_dir, std::vector<double> fractions, std::uint64_t seed,
               const std::vector<std::string>& exclude) {
    auto config = load_config(common.config_path);
    if (fractions.empty() && config.contains("fractions"))
        fractions = config.at("fractions").get<std::vector<double>>();
    if (fractions.empty()) fractions = {0.6, 0.2, 0.2};
    if (fractions.size() != 3)
        throw InvalidInput("expected exactly three split fractions");

    auto records = harness::load_records_jsonl(records_path);
    auto parts = harness::split(records, {fractions[0], fractions[1], fractions[2]}, seed,
                                {exclude.begin(), exclude.end()});

    std::filesystem::create_directories(out_dir);
    const std::filesystem::path dir(out_dir);
    harness::save_records_jsonl(parts.offline, dir / "offline.jsonl");
    harness::save_records_jsonl(parts.online, dir / "online.jsonl");
    harness::save_records_jsonl(parts.test, dir / "test.jsonl");
    if (!parts.holdout.empty())
        harness::save_records_jsonl(parts.holdout, dir / "holdout.jsonl");

    std::cout << "offline=" << parts.offline.size() << " online=" << parts.online.size()
              << " test=" << parts.test.size() << " holdout=" << parts.holdout.size() << "\n";
}

void cmd_run_grid(const CommonOpts& common, const std::string& records_path,
                  const std::string& run_dir, const std::string& shots_text, int concurrency) {
    auto config = load_config(common.config_path);
    auto space = space_from(config);
    auto providers = build_providers(config);
    auto ctx = build_ctx(providers, config);
    auto records = harness::load_records_jsonl(records_path);

    harness::RunGridOptions options;
    options.shots = parse_shots(shots_text);
    options.concurrency = concurrency;

    harness::RunManifest manifest{.dataset_path = records_path,
                                  .dataset_hash = harness::dataset_hash(records),
                                  .record_count = records.size(),
                                  .space = space,
                                  .seed = config.value("seed", std::uint64_t{0}),
                                  .fractions = {1.0, 0.0, 0.0},
                                  .providers = {},
                                  .metric = config.value("metric", std::string("mlqa_f1")),
                                  .shots = shots_text};
    manifest.providers["chat"] = providers.chat->provider_id();
    manifest.providers["translation"] = providers.translator->provider_id();
    manifest.providers["embedding"] = providers.embedder->provider_id();
    manifest.shots = options.shots.kind == strategies::ShotMode::Kind::Zero
                         ? "zero"
                         : "few:" + std::to_string(options.shots.n_examples) + ":" +
                               std::to_string(options.shots.seed);
    write_pipeline_manifest(run_dir, manifest);

    auto result = harness::run_grid(records, space, ctx, run_dir, options);

    std::size_t ok = 0;
    double sum = 0.0;
    for (const auto& row : result.rows)
        if (row.status == "ok" && row.mlqa_f1) {
            ++ok;
            sum += *row.mlqa_f1;
        }
    std::cout << "rows=" << result.rows.size() << " ok=" << ok << " mean_f1="
              << (ok ? sum / static_cast<double>(ok) : 0.0) << " chat_calls="
              << providers.chat->call_count() << "\n";
}

void cmd_report(const CommonOpts& common, const std::string& records_path,
                const std::string& rows_path, const std::string& group_by,
                const std::string& out_md, const std::string& out_csv) {
    (void)load_config(common.config_path);
    auto records = harness::load_records_jsonl(records_path);
    auto rows = harness::load_rows_jsonl(rows_path);
    auto tables = harness::report(rows, records, parse_group_by(group_by));

    if (!out_md.empty()) std::ofstream(out_md, std::ios::trunc) << tables.markdown;
    if (!out_csv.empty()) std::ofstream(out_csv, std::ios::trunc) << tables.csv;
    std::cout << tables.markdown;
}

void cmd_train_offline(const CommonOpts& common, const std::string& records_path,
                       const std::string& run_dir, const std::string& checkpoint,
                       std::size_t epochs, const std::string& log_path,
                       const std::string& checkpoint_dir) {
    auto config = load_config(common.config_path);
    auto space = space_from(config);
    auto providers = build_providers(config);
    auto records = harness::load_records_jsonl(records_path);
    auto scores = harness::load_scores_jsonl(std::filesystem::path(run_dir) / "scores.jsonl");
    auto samples = harness::to_train_samples(records, scores);

    auto state = selector::TrainState::make(space, providers.embedder, projection_dim_from(config),
                                            config.value("seed", std::uint64_t{42}),
                                            hyper_from(config));
    std::optional<std::filesystem::path> ckpt_dir;
    if (!checkpoint_dir.empty()) ckpt_dir = checkpoint_dir;
    selector::train_offline(state, samples, epochs, jsonl_sink(log_path), ckpt_dir);
    state.save(checkpoint);

    auto metrics = selector::selector_metrics(state, samples);
    std::cout << "trained " << epochs << " epochs on " << samples.size() << " tasks -> "
              << checkpoint << "\n"
              << metrics.to_json().dump() << "\n";
}

void cmd_train_online(const CommonOpts& common, const std::string& records_path,
                      const std::string& checkpoint, const std::string& out,
                      std::size_t epochs, const std::string& log_path, double fraction) {
    auto config = load_config(common.config_path);
    auto providers = build_providers(config);
    auto ctx = build_ctx(providers, config);
    auto records = harness::load_records_jsonl(records_path);

    if (fraction < 1.0) {
        auto parts = harness::split(records, {fraction, 1.0 - fraction, 0.0},
                                    config.value("seed", std::uint64_t{42}));
        records = std::move(parts.offline);
    }
    std::vector<QueryTask> tasks;
    for (const auto& rec : records) tasks.push_back(rec.to_task());

    auto state = selector::TrainState::load(checkpoint, providers.embedder);
    const auto& table =
        ctx.distances != nullptr ? *ctx.distances : langsim::DistanceTable::shared();
    selector::train_online(state, tasks, live_oracle(ctx), epochs, jsonl_sink(log_path),
                           sim_mask(state.space(), table));
    state.save(out);
    std::cout << "adapted " << epochs << " epochs on " << tasks.size() << " tasks -> " << out
              << "\n";
}

void cmd_evaluate(const CommonOpts& common, const std::string& records_path,
                  const std::string& run_dir, const std::string& checkpoint) {
    auto config = load_config(common.config_path);
    auto space = space_from(config);
    auto providers = build_providers(config);
    auto ctx = build_ctx(providers, config);
    auto records = harness::load_records_jsonl(records_path);

    auto result = harness::run_grid(records, space, ctx, run_dir);
    auto samples = harness::to_train_samples(records, result.scores);
    auto state = selector::TrainState::load(checkpoint, providers.embedder);
    auto metrics = selector::selector_metrics(state, samples);
    std::cout << metrics.to_json().dump(2) << "\n";
}

void cmd_serve(const CommonOpts& common, const std::string& checkpoint, const std::string& host,
               int port, bool sample, double temperature, int top_k) {
    auto config = load_config(common.config_path);
    auto space = space_from(config);
    auto providers = build_providers(config);
    auto ctx = build_ctx(providers, config);

    harness::ServiceOptions options;
    options.sample = sample;
    options.temperature = temperature;
    options.top_k = top_k;
    auto state = selector::TrainState::load(checkpoint, providers.embedder);
    harness::RoutingService service(std::move(state), space, ctx, options);

    std::cout << "listening on " << host << ":" << port << "\n";
    if (!service.listen(host, port))
        throw InvalidInput("could not bind " + host + ":" + std::to_string(port));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multilingual QA configuration routing toolkit"};
    app.require_subcommand(1);
    CommonOpts common;

    auto* ingest = app.add_subcommand("ingest", "Convert a SQuAD-style file to records JSONL");
    std::string in_input, in_output, in_format = "squad_json";
    ingest->add_option("--config", common.config_path, "JSON config file");
    ingest->add_option("--input", in_input, "dataset file")->required();
    ingest->add_option("--output", in_output, "records JSONL to write")->required();
    ingest->add_option("--format", in_format, "dataset format (squad_json)");
    ingest->callback([&] { cmd_ingest(common, in_input, in_output, in_format); });

    auto* split = app.add_subcommand("split", "Stratified offline/online/test split");
    std::string sp_records, sp_out;
    std::vector<double> sp_fractions;
    std::uint64_t sp_seed = 42;
    std::vector<std::string> sp_exclude;
    split->add_option("--config", common.config_path, "JSON config file");
    split->add_option("--records", sp_records, "records JSONL")->required();
    split->add_option("--out-dir", sp_out, "directory for the split files")->required();
    split->add_option("--fractions", sp_fractions, "three fractions summing to 1");
    split->add_option("--seed", sp_seed, "shuffle seed");
    split->add_option("--exclude-langs", sp_exclude,
                      "language codes diverted to holdout.jsonl");
    split->callback(
        [&] { cmd_split(common, sp_records, sp_out, sp_fractions, sp_seed, sp_exclude); });

    auto* grid = app.add_subcommand("run-grid", "Answer and score every (task, config) cell");
    std::string rg_records, rg_dir, rg_shots = "zero";
    int rg_concurrency = 1;
    grid->add_option("--config", common.config_path, "JSON config file");
    grid->add_option("--records", rg_records, "records JSONL")->required();
    grid->add_option("--run-dir", rg_dir, "artifact directory")->required();
    grid->add_option("--shots", rg_shots, "zero or few[:n[:seed]]");
    grid->add_option("--concurrency", rg_concurrency, "cells evaluated in parallel");
    grid->callback([&] { cmd_run_grid(common, rg_records, rg_dir, rg_shots, rg_concurrency); });

    auto* report = app.add_subcommand("report", "Per-language score tables from grid rows");
    std::string rp_records, rp_rows, rp_group = "strategy", rp_md, rp_csv;
    report->add_option("--config", common.config_path, "JSON config file");
    report->add_option("--records", rp_records, "records JSONL")->required();
    report->add_option("--rows", rp_rows, "rows.jsonl from a grid run")->required();
    report->add_option("--group-by", rp_group, "comma list of strategy,model,embedding");
    report->add_option("--out-md", rp_md, "write the markdown table here");
    report->add_option("--out-csv", rp_csv, "write the CSV table here");
    report->callback([&] { cmd_report(common, rp_records, rp_rows, rp_group, rp_md, rp_csv); });

    auto* offline = app.add_subcommand("train-offline",
                                       "Fit the selector on dense grid scores");
    std::string to_records, to_dir, to_ckpt, to_log, to_ckpt_dir;
    std::size_t to_epochs = 100;
    offline->add_option("--config", common.config_path, "JSON config file");
    offline->add_option("--records", to_records, "records JSONL")->required();
    offline->add_option("--run-dir", to_dir, "grid artifacts with scores.jsonl")->required();
    offline->add_option("--checkpoint", to_ckpt, "checkpoint file to write")->required();
    offline->add_option("--epochs", to_epochs, "training epochs");
    offline->add_option("--log", to_log, "JSONL step log");
    offline->add_option("--checkpoint-dir", to_ckpt_dir, "per-epoch checkpoint directory");
    offline->callback([&] {
        cmd_train_offline(common, to_records, to_dir, to_ckpt, to_epochs, to_log, to_ckpt_dir);
    });

    auto* online = app.add_subcommand(
        "train-online", "Adapt a checkpoint with sampled selections and live scores");
    std::string tn_records, tn_ckpt, tn_out, tn_log;
    std::size_t tn_epochs = 10;
    online->add_option("--config", common.config_path, "JSON config file");
    online->add_option("--records", tn_records, "records JSONL")->required();
    online->add_option("--checkpoint", tn_ckpt, "starting checkpoint")->required();
    online->add_option("--out", tn_out, "adapted checkpoint to write")->required();
    online->add_option("--epochs", tn_epochs, "adaptation epochs");
    online->add_option("--log", tn_log, "JSONL step log");
    online->callback([&] {
        cmd_train_online(common, tn_records, tn_ckpt, tn_out, tn_epochs, tn_log, 1.0);
    });

    auto* adapt = app.add_subcommand(
        "adapt", "train-online on a stratified fraction of a new dataset");
    std::string ad_records, ad_ckpt, ad_out, ad_log;
    std::size_t ad_epochs = 10;
    double ad_fraction = 0.2;
    adapt->add_option("--config", common.config_path, "JSON config file");
    adapt->add_option("--records", ad_records, "records JSONL of the new dataset")->required();
    adapt->add_option("--checkpoint", ad_ckpt, "base checkpoint")->required();
    adapt->add_option("--out", ad_out, "adapted checkpoint to write")->required();
    adapt->add_option("--fraction", ad_fraction, "fraction of records used for adaptation");
    adapt->add_option("--epochs", ad_epochs, "adaptation epochs");
    adapt->add_option("--log", ad_log, "JSONL step log");
    adapt->callback([&] {
        cmd_train_online(common, ad_records, ad_ckpt, ad_out, ad_epochs, ad_log, ad_fraction);
    });

    auto* evaluate = app.add_subcommand("evaluate",
                                        "Selector metrics against grid ground truth");
    std::string ev_records, ev_dir, ev_ckpt;
    evaluate->add_option("--config", common.config_path, "JSON config file");
    evaluate->add_option("--records", ev_records, "records JSONL")->required();
    evaluate->add_option("--run-dir", ev_dir, "grid artifact directory")->required();
    evaluate->add_option("--checkpoint", ev_ckpt, "checkpoint to evaluate")->required();
    evaluate->callback([&] { cmd_evaluate(common, ev_records, ev_dir, ev_ckpt); });

    auto* serve = app.add_subcommand("serve", "HTTP routing service over a checkpoint");
    std::string sv_ckpt, sv_host = "127.0.0.1";
    int sv_port = 8080, sv_topk = 5;
    bool sv_sample = false;
    double sv_temp = 1.0;
    serve->add_option("--config", common.config_path, "JSON config file");
    serve->add_option("--checkpoint", sv_ckpt, "selector checkpoint")->required();
    serve->add_option("--host", sv_host, "bind address");
    serve->add_option("--port", sv_port, "bind port");
    serve->add_flag("--sample", sv_sample, "sample from softmax instead of argmax");
    serve->add_option("--temperature", sv_temp, "softmax temperature when sampling");
    serve->add_option("--top-k", sv_topk, "predictions returned per answer");
    serve->callback(
        [&] { cmd_serve(common, sv_ckpt, sv_host, sv_port, sv_sample, sv_temp, sv_topk); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
