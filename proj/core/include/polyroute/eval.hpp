#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "polyroute/chat_backend.hpp"
#include "polyroute/config_space.hpp"
#include "polyroute/errors.hpp"

namespace polyroute::eval {

struct NormalizedAnswer {
    std::vector<std::string> tokens;

    bool operator==(const NormalizedAnswer&) const = default;
};

// Stand-alone article words dropped during normalization, keyed by language
// code. Languages without an entry keep every token.
class ArticleTable {
 public:
    ArticleTable() = default;
    static ArticleTable load(const std::filesystem::path& file);
    static const ArticleTable& shared();

    const std::vector<std::string>& for_language(const std::string& code) const;

 private:
    std::map<std::string, std::vector<std::string>> by_lang_;
};

NormalizedAnswer normalize(std::string_view text, const LanguageTag& lang,
                           const ArticleTable& articles = ArticleTable::shared());

// Bag-of-tokens F1 with multiset overlap. Both empty: 1; exactly one empty: 0.
double token_f1(const NormalizedAnswer& pred, const NormalizedAnswer& gold);

// Max token F1 of the prediction against each gold answer.
double mlqa_f1(std::string_view pred, const std::vector<std::string>& golds,
               const LanguageTag& lang, const ArticleTable& articles = ArticleTable::shared());

enum class Verdict { Yes, No, Partial };

std::string to_string(Verdict v);

// Accepts the bare verdict word, case-insensitive, with surrounding
// whitespace or punctuation. Anything else is a protocol violation.
Verdict parse_verdict(std::string_view reply);

struct JudgedAnswer {
    Verdict verdict = Verdict::No;
    bool parse_failed = false;
    std::string raw_reply;
};

class GptAnnotator {
 public:
    GptAnnotator(std::shared_ptr<backends::ChatBackend> judge, std::string judge_model,
                 std::string system_prompt = default_system_prompt());

    // One verdict per answer. Unparseable judge replies are flagged and
    // scored as No instead of aborting the batch.
    std::vector<JudgedAnswer> annotate(const std::string& question, const std::string& context,
                                       const std::string& ground_truth,
                                       const std::vector<std::string>& answers) const;

    static std::string user_message(const std::string& question, const std::string& context,
                                    const std::string& ground_truth, const std::string& answer);
    static std::string default_system_prompt();

 private:
    std::shared_ptr<backends::ChatBackend> judge_;
    std::string judge_model_;
    std::string system_prompt_;
};

struct EnrichedGroundTruth {
    std::string original;
    std::vector<std::string> accepted;  // original first, then Yes answers, deduplicated
};

EnrichedGroundTruth enrich(const std::string& ground_truth,
                           const std::vector<std::string>& answers,
                           const std::vector<Verdict>& verdicts);
EnrichedGroundTruth enrich(const std::string& ground_truth,
                           const std::vector<std::string>& answers,
                           const std::vector<JudgedAnswer>& judged);

double gptannotator_f1(std::string_view pred, const EnrichedGroundTruth& enriched,
                       const LanguageTag& lang,
                       const ArticleTable& articles = ArticleTable::shared());

enum class PartialScoring { TokenF1, Flat };

double human_score(Verdict v, std::string_view pred, std::string_view ground_truth,
                   const LanguageTag& lang, PartialScoring partial = PartialScoring::TokenF1,
                   const ArticleTable& articles = ArticleTable::shared());

}  // namespace polyroute::eval
