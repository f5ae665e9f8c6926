#include "polyroute/strategies.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "polyroute/data_dir.hpp"

namespace polyroute::strategies {

namespace {

std::string trim(std::string_view s) {
    const auto* ws = " \t\r\n";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return "";
    const auto e = s.find_last_not_of(ws);
    return std::string(s.substr(b, e - b + 1));
}

const TemplateStore& templates_of(const StrategyContext& ctx) {
    return ctx.templates ? *ctx.templates : TemplateStore::shared();
}

const langsim::DistanceTable& distances_of(const StrategyContext& ctx) {
    return ctx.distances ? *ctx.distances : langsim::DistanceTable::shared();
}

std::string chat(const StrategyContext& ctx, const std::string& model_id,
                 const std::string& prompt) {
    if (!ctx.chat) throw BackendUnavailable("no chat backend configured");
    backends::ChatRequest req;
    req.model_id = model_id;
    req.user_text = prompt;
    req.temperature = ctx.temperature;
    req.max_tokens = ctx.max_tokens;
    return ctx.chat->complete(req);
}

std::string translate_or_fail(const StrategyContext& ctx, const std::string& strategy_label,
                              const std::string& text, const LanguageTag& from,
                              const LanguageTag& to) {
    if (!ctx.translator)
        throw StrategyFailed(strategy_label + ": no translation backend configured");
    try {
        return ctx.translator->translate({text, from, to});
    } catch (const StrategyFailed&) {
        throw;
    } catch (const Error& e) {
        throw StrategyFailed(strategy_label + ": translation failed: " + e.what());
    }
}

std::string resolved_context(const QueryTask& task) {
    if (!task.context || task.context->empty())
        throw InvalidInput("task " + task.id + " has no context; attach retrieval via run()");
    return *task.context;
}

std::string exemplar_block(const std::vector<Exemplar>& exemplars) {
    if (exemplars.empty()) return "";
    std::string out = "\n\nExamples:";
    for (const auto& ex : exemplars) {
        if (!ex.context.empty()) out += "\nContext: " + ex.context;
        out += "\nQuestion: " + ex.question + "\nAnswer: " + ex.answer;
    }
    return out;
}

// The shared round-trip skeleton behind Trans and Sim. `label` names the
// strategy in errors and audit steps.
StrategyOutcome roundtrip(const QueryTask& task, const std::string& model_id,
                          const ShotMode& shots, const StrategyContext& ctx,
                          const LanguageTag& pivot, const std::string& label,
                          Strategy strategy_id) {
    StrategyOutcome out;
    out.config_used = {model_id, "", strategy_id};
    const std::string context = resolved_context(task);
    const auto& src = task.language;

    if (src.code == pivot.code) {
        // Degenerate case: the source already is the pivot language.
        auto mono = run_mono(task, model_id, shots, ctx);
        out.final_answer = mono.final_answer;
        out.intermediates = std::move(mono.intermediates);
        return out;
    }

    const std::string t_context =
        translate_or_fail(ctx, label, context, src, pivot);
    const std::string t_question =
        translate_or_fail(ctx, label, task.question, src, pivot);
    out.intermediates.push_back({"translated-context", pivot.code, t_context});
    out.intermediates.push_back({"translated-question", pivot.code, t_question});

    std::vector<Exemplar> exemplars;
    for (const auto& ex : pick_exemplars(task.exemplars, shots)) {
        Exemplar t;
        if (!ex.context.empty()) t.context = translate_or_fail(ctx, label, ex.context, src, pivot);
        t.question = translate_or_fail(ctx, label, ex.question, src, pivot);
        t.answer = translate_or_fail(ctx, label, ex.answer, src, pivot);
        exemplars.push_back(std::move(t));
    }

    const auto prompt = templates_of(ctx).get("qa", pivot.code)
                            .render({{"context", t_context},
                                     {"question", t_question},
                                     {"exemplars", exemplar_block(exemplars)}});
    out.intermediates.push_back({"prompt", pivot.code, prompt});
    const std::string pivot_answer = trim(chat(ctx, model_id, prompt));
    out.intermediates.push_back({"model-answer", pivot.code, pivot_answer});

    out.final_answer =
        trim(translate_or_fail(ctx, label, pivot_answer, pivot, src));
    out.intermediates.push_back({"back-translation", src.code, out.final_answer});
    return out;
}

struct Candidate {
    std::string label;
    std::string answer;
};

// Mono/Trans/Sim results for aggregation; inapplicable or failed base
// strategies are dropped rather than aborting the aggregate.
std::vector<Candidate> base_candidates(const QueryTask& task, const std::string& model_id,
                                       const ShotMode& shots, const StrategyContext& ctx,
                                       std::vector<StepRecord>& steps) {
    std::vector<Candidate> candidates;
    const auto attempt = [&](const char* label, auto&& fn) {
        try {
            auto outcome = fn();
            steps.push_back({std::string("candidate-") + label, task.language.code,
                             outcome.final_answer});
            candidates.push_back({label, outcome.final_answer});
        } catch (const StrategyInapplicable& e) {
            steps.push_back({std::string("skipped-") + label, task.language.code, e.what()});
        } catch (const StrategyFailed& e) {
            steps.push_back({std::string("failed-") + label, task.language.code, e.what()});
        }
    };
    attempt("mono", [&] { return run_mono(task, model_id, shots, ctx); });
    attempt("trans", [&] { return run_trans(task, model_id, shots, ctx); });
    attempt("sim", [&] { return run_sim(task, model_id, shots, ctx); });
    return candidates;
}

std::string candidate_list(const std::vector<Candidate>& candidates) {
    std::string out;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        out += std::to_string(i + 1) + ". " + candidates[i].answer + "\n";
    return out;
}

}  // namespace

std::string PromptTemplate::render(const std::map<std::string, std::string>& slots) const {
    std::string out;
    out.reserve(instruction.size());
    std::size_t pos = 0;
    while (pos < instruction.size()) {
        const auto open = instruction.find('{', pos);
        if (open == std::string::npos) {
            out.append(instruction, pos, std::string::npos);
            break;
        }
        const auto close = instruction.find('}', open);
        if (close == std::string::npos)
            throw InvalidInput("unbalanced '{' in template " + strategy_id);
        out.append(instruction, pos, open - pos);
        const std::string name = instruction.substr(open + 1, close - open - 1);
        const auto it = slots.find(name);
        if (it == slots.end())
            throw InvalidInput("template " + strategy_id + " slot {" + name + "} not filled");
        out += it->second;
        pos = close + 1;
    }
    return out;
}

TemplateStore TemplateStore::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open template file: " + file.string());
    nlohmann::json j;
    in >> j;
    TemplateStore store;
    for (const auto& [key, langs] : j.items())
        for (const auto& [lang, text] : langs.items())
            store.by_key_[key][lang] = text.get<std::string>();
    return store;
}

const TemplateStore& TemplateStore::shared() {
    static const TemplateStore store = load(default_data_dir() / "prompt_templates.json");
    return store;
}

PromptTemplate TemplateStore::get(const std::string& key, const std::string& lang_code) const {
    const auto it = by_key_.find(key);
    if (it == by_key_.end()) throw InvalidInput("no template with key: " + key);
    auto lang_it = it->second.find(lang_code);
    if (lang_it == it->second.end()) lang_it = it->second.find("default");
    if (lang_it == it->second.end())
        throw InvalidInput("template " + key + " has no entry for " + lang_code +
                           " and no default");
    return {key + "/" + lang_it->first, lang_it->second};
}

ShotMode ShotMode::few(int n, unsigned seed) {
    if (n < 1) throw InvalidInput("few-shot needs n_examples >= 1");
    return {Kind::Few, n, seed};
}

std::vector<Exemplar> pick_exemplars(const std::vector<Exemplar>& pool, const ShotMode& shots) {
    if (shots.kind == ShotMode::Kind::Zero || pool.empty()) return {};
    const std::size_t n = std::min<std::size_t>(shots.n_examples, pool.size());
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937 rng(shots.seed);
    std::vector<Exemplar> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + rng() % (idx.size() - i);
        std::swap(idx[i], idx[j]);
        out.push_back(pool[idx[i]]);
    }
    return out;
}

StrategyOutcome run_mono(const QueryTask& task, const std::string& model_id,
                         const ShotMode& shots, const StrategyContext& ctx) {
    StrategyOutcome out;
    out.config_used = {model_id, "", Strategy::Mono};
    const std::string context = resolved_context(task);
    const auto exemplars = pick_exemplars(task.exemplars, shots);
    const auto prompt = templates_of(ctx).get("qa", task.language.code)
                            .render({{"context", context},
                                     {"question", task.question},
                                     {"exemplars", exemplar_block(exemplars)}});
    out.intermediates.push_back({"prompt", task.language.code, prompt});
    out.final_answer = trim(chat(ctx, model_id, prompt));
    out.intermediates.push_back({"model-answer", task.language.code, out.final_answer});
    return out;
}

StrategyOutcome run_trans(const QueryTask& task, const std::string& model_id,
                          const ShotMode& shots, const StrategyContext& ctx) {
    auto out = roundtrip(task, model_id, shots, ctx, ctx.english, "trans", Strategy::Trans);
    return out;
}

StrategyOutcome run_sim(const QueryTask& task, const std::string& model_id,
                        const ShotMode& shots, const StrategyContext& ctx,
                        std::optional<LanguageTag> pivot) {
    if (!pivot) {
        const auto& table = distances_of(ctx);
        if (table.has_language(task.language.code))
            pivot = langsim::pivot_for(table.profile(task.language.code), table);
    }
    if (!pivot)
        throw StrategyInapplicable("no pivot language available for " + task.language.code);
    auto out = roundtrip(task, model_id, shots, ctx, *pivot, "sim", Strategy::Sim);
    out.intermediates.insert(out.intermediates.begin(),
                             {"pivot", pivot->code, pivot->code});
    return out;
}

StrategyOutcome run_agg_src(const QueryTask& task, const std::string& model_id,
                            const ShotMode& shots, const StrategyContext& ctx) {
    StrategyOutcome out;
    out.config_used = {model_id, "", Strategy::AggSrc};
    const auto candidates = base_candidates(task, model_id, shots, ctx, out.intermediates);
    if (candidates.size() < 2)
        throw StrategyFailed("agg_src: only " + std::to_string(candidates.size()) +
                             " base strategies produced answers");

    const auto prompt = templates_of(ctx).get("aggregate", task.language.code)
                            .render({{"context", resolved_context(task)},
                                     {"question", task.question},
                                     {"candidates", candidate_list(candidates)},
                                     {"exemplars", ""}});
    out.intermediates.push_back({"aggregation-prompt", task.language.code, prompt});
    out.final_answer = trim(chat(ctx, model_id, prompt));
    out.intermediates.push_back({"model-answer", task.language.code, out.final_answer});
    return out;
}

StrategyOutcome run_agg_trans(const QueryTask& task, const std::string& model_id,
                              const ShotMode& shots, const StrategyContext& ctx) {
    StrategyOutcome out;
    out.config_used = {model_id, "", Strategy::AggTrans};
    const auto candidates = base_candidates(task, model_id, shots, ctx, out.intermediates);
    if (candidates.size() < 2)
        throw StrategyFailed("agg_trans: only " + std::to_string(candidates.size()) +
                             " base strategies produced answers");

    const auto& src = task.language;
    const auto& en = ctx.english;
    const bool already_english = src.code == en.code;

    std::vector<Candidate> english;
    for (const auto& c : candidates) {
        const std::string t =
            already_english ? c.answer
                            : translate_or_fail(ctx, "agg_trans", c.answer, src, en);
        english.push_back({c.label, t});
        out.intermediates.push_back({"candidate-en-" + c.label, en.code, t});
    }
    const std::string context =
        already_english ? resolved_context(task)
                        : translate_or_fail(ctx, "agg_trans", resolved_context(task), src, en);
    const std::string question =
        already_english ? task.question
                        : translate_or_fail(ctx, "agg_trans", task.question, src, en);

    const auto prompt = templates_of(ctx).get("aggregate", en.code)
                            .render({{"context", context},
                                     {"question", question},
                                     {"candidates", candidate_list(english)},
                                     {"exemplars", ""}});
    out.intermediates.push_back({"aggregation-prompt", en.code, prompt});
    const std::string aggregated = trim(chat(ctx, model_id, prompt));
    out.intermediates.push_back({"model-answer", en.code, aggregated});

    out.final_answer =
        already_english ? aggregated
                        : trim(translate_or_fail(ctx, "agg_trans", aggregated, en, src));
    out.intermediates.push_back({"back-translation", src.code, out.final_answer});
    return out;
}

StrategyOutcome run(Strategy strategy, const QueryTask& task, const Configuration& config,
                    const StrategyContext& ctx, const ShotMode& shots) {
    // Deliberately not task.validate(): strategies never read gold answers,
    // and serving-time tasks have none.
    task.language.validate();
    if (task.question.empty()) throw InvalidInput("task " + task.id + " has an empty question");
    if (config.strategy != strategy)
        throw InvalidConfiguration("dispatch strategy disagrees with configuration");

    QueryTask effective = task;
    std::vector<StepRecord> prefix;
    if (!effective.context || effective.context->empty()) {
        if (!ctx.index || !ctx.chunks || !ctx.embedder)
            throw InvalidInput("task " + task.id +
                               " has no context and no retrieval index is attached");
        const auto hits =
            retrieval::search(*ctx.index, *ctx.chunks, task.question, *ctx.embedder,
                              ctx.retrieval_k);
        std::string joined;
        for (const auto& hit : hits) {
            if (!joined.empty()) joined += "\n\n";
            joined += hit.chunk.text;
        }
        if (joined.empty()) throw InvalidInput("retrieval produced no context for " + task.id);
        effective.context = joined;
        prefix.push_back({"retrieved-context", task.language.code, joined});
    }

    StrategyOutcome out;
    switch (strategy) {
        case Strategy::Mono: out = run_mono(effective, config.model_id, shots, ctx); break;
        case Strategy::Trans: out = run_trans(effective, config.model_id, shots, ctx); break;
        case Strategy::Sim: out = run_sim(effective, config.model_id, shots, ctx); break;
        case Strategy::AggSrc: out = run_agg_src(effective, config.model_id, shots, ctx); break;
        case Strategy::AggTrans:
            out = run_agg_trans(effective, config.model_id, shots, ctx);
            break;
        default: throw InvalidConfiguration("unknown strategy id");
    }
    out.config_used = config;
    out.intermediates.insert(out.intermediates.begin(), prefix.begin(), prefix.end());
    return out;
}

}  // namespace polyroute::strategies
