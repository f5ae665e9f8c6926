#include "polyroute/eval.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "polyroute/data_dir.hpp"
#include "polyroute/text_normalize.hpp"

namespace polyroute::eval {

ArticleTable ArticleTable::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open article table: " + file.string());
    nlohmann::json j;
    in >> j;
    ArticleTable table;
    for (const auto& [lang, words] : j.items())
        table.by_lang_[lang] = words.get<std::vector<std::string>>();
    return table;
}

const ArticleTable& ArticleTable::shared() {
    static const ArticleTable table = load(default_data_dir() / "articles.json");
    return table;
}

const std::vector<std::string>& ArticleTable::for_language(const std::string& code) const {
    static const std::vector<std::string> kNone;
    const auto it = by_lang_.find(code);
    return it == by_lang_.end() ? kNone : it->second;
}

NormalizedAnswer normalize(std::string_view raw, const LanguageTag& lang,
                           const ArticleTable& articles) {
    const auto& drop = articles.for_language(lang.code);
    NormalizedAnswer out;
    std::string token;
    auto flush = [&] {
        if (!token.empty() && std::find(drop.begin(), drop.end(), token) == drop.end())
            out.tokens.push_back(token);
        token.clear();
    };
    for (char32_t cp : text::decode_utf8(raw)) {
        cp = text::to_lower(cp);
        if (text::is_space(cp)) {
            flush();
        } else if (!text::is_punctuation(cp)) {
            text::append_utf8(token, cp);
        }
    }
    flush();
    return out;
}

double token_f1(const NormalizedAnswer& pred, const NormalizedAnswer& gold) {
    if (pred.tokens.empty() && gold.tokens.empty()) return 1.0;
    if (pred.tokens.empty() || gold.tokens.empty()) return 0.0;
    std::map<std::string, int> counts;
    for (const auto& t : gold.tokens) ++counts[t];
    int common = 0;
    for (const auto& t : pred.tokens) {
        const auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / pred.tokens.size();
    const double recall = static_cast<double>(common) / gold.tokens.size();
    return 2.0 * precision * recall / (precision + recall);
}

double mlqa_f1(std::string_view pred, const std::vector<std::string>& golds,
               const LanguageTag& lang, const ArticleTable& articles) {
    if (golds.empty()) throw InvalidInput("mlqa_f1 requires at least one gold answer");
    const auto p = normalize(pred, lang, articles);
    double best = 0.0;
    for (const auto& gold : golds) best = std::max(best, token_f1(p, normalize(gold, lang, articles)));
    return best;
}

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::Yes: return "Yes";
        case Verdict::No: return "No";
        case Verdict::Partial: return "Partial";
    }
    throw InvalidInput("unknown verdict value");
}

Verdict parse_verdict(std::string_view reply) {
    std::string word;
    bool word_done = false;
    for (char32_t cp : text::decode_utf8(reply)) {
        cp = text::to_lower(cp);
        if (text::is_space(cp) || text::is_punctuation(cp)) {
            if (!word.empty()) word_done = true;
            continue;
        }
        if (word_done)  // a second word: not a bare verdict
            throw JudgeProtocolError("unparseable judge reply: \"" + std::string(reply) + "\"");
        text::append_utf8(word, cp);
    }
    if (word == "yes") return Verdict::Yes;
    if (word == "no") return Verdict::No;
    if (word == "partial") return Verdict::Partial;
    throw JudgeProtocolError("unparseable judge reply: \"" + std::string(reply) + "\"");
}

GptAnnotator::GptAnnotator(std::shared_ptr<backends::ChatBackend> judge, std::string judge_model,
                           std::string system_prompt)
    : judge_(std::move(judge)),
      judge_model_(std::move(judge_model)),
      system_prompt_(std::move(system_prompt)) {
    if (!judge_) throw InvalidInput("GptAnnotator requires a judge backend");
}

std::string GptAnnotator::user_message(const std::string& question, const std::string& context,
                                       const std::string& ground_truth,
                                       const std::string& answer) {
    return "Query: " + question + "\nContext: " + context + "\nCorrect answer: " + ground_truth +
           "\nAnswer to evaluate: " + answer;
}

std::string GptAnnotator::default_system_prompt() {
    const auto file = default_data_dir() / "judge_prompt.txt";
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open judge prompt: " + file.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return text;
}

std::vector<JudgedAnswer> GptAnnotator::annotate(const std::string& question,
                                                 const std::string& context,
                                                 const std::string& ground_truth,
                                                 const std::vector<std::string>& answers) const {
    std::vector<JudgedAnswer> out;
    out.reserve(answers.size());
    for (const auto& answer : answers) {
        backends::ChatRequest req;
        req.model_id = judge_model_;
        req.system_text = system_prompt_;
        req.user_text = user_message(question, context, ground_truth, answer);
        req.temperature = 0.0;
        req.max_tokens = 8;
        JudgedAnswer judged;
        judged.raw_reply = judge_->complete(req);
        try {
            judged.verdict = parse_verdict(judged.raw_reply);
        } catch (const JudgeProtocolError&) {
            judged.verdict = Verdict::No;
            judged.parse_failed = true;
        }
        out.push_back(std::move(judged));
    }
    return out;
}

EnrichedGroundTruth enrich(const std::string& ground_truth,
                           const std::vector<std::string>& answers,
                           const std::vector<Verdict>& verdicts) {
    if (answers.size() != verdicts.size())
        throw InvalidInput("enrich: answers and verdicts differ in length");
    EnrichedGroundTruth out{ground_truth, {ground_truth}};
    for (std::size_t i = 0; i < answers.size(); ++i) {
        if (verdicts[i] != Verdict::Yes) continue;
        if (std::find(out.accepted.begin(), out.accepted.end(), answers[i]) == out.accepted.end())
            out.accepted.push_back(answers[i]);
    }
    return out;
}

EnrichedGroundTruth enrich(const std::string& ground_truth,
                           const std::vector<std::string>& answers,
                           const std::vector<JudgedAnswer>& judged) {
    std::vector<Verdict> verdicts;
    verdicts.reserve(judged.size());
    for (const auto& j : judged) verdicts.push_back(j.verdict);
    return enrich(ground_truth, answers, verdicts);
}

double gptannotator_f1(std::string_view pred, const EnrichedGroundTruth& enriched,
                       const LanguageTag& lang, const ArticleTable& articles) {
    return mlqa_f1(pred, enriched.accepted, lang, articles);
}

double human_score(Verdict v, std::string_view pred, std::string_view ground_truth,
                   const LanguageTag& lang, PartialScoring partial,
                   const ArticleTable& articles) {
    switch (v) {
        case Verdict::Yes: return 1.0;
        case Verdict::No: return 0.0;
        case Verdict::Partial:
            if (partial == PartialScoring::Flat) return 0.5;
            return token_f1(normalize(pred, lang, articles),
                            normalize(ground_truth, lang, articles));
    }
    throw InvalidInput("unknown verdict value");
}

}  // namespace polyroute::eval
