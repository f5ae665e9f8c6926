#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "polyroute/chat_backend.hpp"
#include "polyroute/config_space.hpp"
#include "polyroute/embedding.hpp"
#include "polyroute/errors.hpp"
#include "polyroute/lang_similarity.hpp"
#include "polyroute/retrieval.hpp"
#include "polyroute/translation.hpp"

namespace polyroute::strategies {

struct PromptTemplate {
    std::string strategy_id;
    std::string instruction;  // with {context}/{question}/{exemplars}/{candidates} slots

    // Substitutes every {slot}; a placeholder without a binding is an error,
    // as is a binding that matches no placeholder.
    std::string render(const std::map<std::string, std::string>& slots) const;
};

// Prompt wording per (template key, language), with a "default" language
// fallback. Editable fixture, see data/prompt_templates.json.
class TemplateStore {
 public:
    static TemplateStore load(const std::filesystem::path& file);
    static const TemplateStore& shared();

    PromptTemplate get(const std::string& key, const std::string& lang_code) const;

 private:
    std::map<std::string, std::map<std::string, std::string>> by_key_;
};

struct ShotMode {
    enum class Kind { Zero, Few };
    Kind kind = Kind::Zero;
    int n_examples = 3;
    unsigned seed = 17;

    static ShotMode zero() { return {}; }
    static ShotMode few(int n = 3, unsigned seed = 17);
};

struct StepRecord {
    std::string label;
    std::string language;
    std::string text;
};

struct StrategyOutcome {
    std::string final_answer;
    std::vector<StepRecord> intermediates;
    Configuration config_used;
};

// Shared providers for a single configuration. Null template/distance
// pointers fall back to the packaged data files.
struct StrategyContext {
    std::shared_ptr<backends::ChatBackend> chat;
    std::shared_ptr<backends::TranslationBackend> translator;
    const TemplateStore* templates = nullptr;
    const langsim::DistanceTable* distances = nullptr;

    // Retrieval hook for tasks without direct context.
    const retrieval::VectorIndex* index = nullptr;
    const retrieval::ChunkStore* chunks = nullptr;
    backends::EmbeddingBackend* embedder = nullptr;
    int retrieval_k = 3;

    double temperature = 0.0;
    int max_tokens = 256;
    LanguageTag english{"en", Script::Latin, 5};
};

StrategyOutcome run_mono(const QueryTask& task, const std::string& model_id,
                         const ShotMode& shots, const StrategyContext& ctx);

StrategyOutcome run_trans(const QueryTask& task, const std::string& model_id,
                          const ShotMode& shots, const StrategyContext& ctx);

// Explicit pivot wins; otherwise one is resolved from the distance table.
// No pivot at all -> StrategyInapplicable.
StrategyOutcome run_sim(const QueryTask& task, const std::string& model_id,
                        const ShotMode& shots, const StrategyContext& ctx,
                        std::optional<LanguageTag> pivot = std::nullopt);

StrategyOutcome run_agg_src(const QueryTask& task, const std::string& model_id,
                            const ShotMode& shots, const StrategyContext& ctx);

StrategyOutcome run_agg_trans(const QueryTask& task, const std::string& model_id,
                              const ShotMode& shots, const StrategyContext& ctx);

StrategyOutcome run(Strategy strategy, const QueryTask& task, const Configuration& config,
                    const StrategyContext& ctx, const ShotMode& shots = ShotMode::zero());

// Seeded sampling without replacement; stable order for a fixed seed.
std::vector<Exemplar> pick_exemplars(const std::vector<Exemplar>& pool, const ShotMode& shots);

}  // namespace polyroute::strategies
