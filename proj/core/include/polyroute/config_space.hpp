#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyroute/errors.hpp"

namespace polyroute {

enum class Script { Latin, NonLatin };

/// ISO-639-1 language code plus the attributes the routing logic needs:
/// script family and the 0..5 resource-availability class.
struct LanguageTag {
    std::string code;
    Script script = Script::NonLatin;
    int resource_class = 0;

    void validate() const;
    bool is_latin() const { return script == Script::Latin; }
    bool operator==(const LanguageTag&) const = default;
};

enum class Strategy { Mono, Trans, Sim, AggSrc, AggTrans };

constexpr int kStrategyCount = 5;

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// One cell of the (model x embedding x strategy) grid.
struct Configuration {
    std::string model_id;
    std::string embedding_id;
    Strategy strategy = Strategy::Mono;

    /// Canonical text form, also used as the embedding input for the selector.
    std::string canonical() const;
    bool operator==(const Configuration&) const = default;
};

// ---------------------------------------------------------------------------
// Row-major index arithmetic for arbitrary-rank grids.
// ---------------------------------------------------------------------------

using GridShape = std::vector<int>;

std::int64_t grid_size(const GridShape& shape);
std::int64_t ravel_index(const GridShape& shape, std::span<const int> idx);
std::vector<int> unravel_index(const GridShape& shape, std::int64_t k);

/// The configuration grid: axis order is fixed as (model, embedding,
/// strategy) so linear indices are stable across logs and tensors.
class ConfigurationSpace {
public:
    ConfigurationSpace(std::vector<std::string> models,
                       std::vector<std::string> embeddings,
                       std::vector<Strategy> strategies);

    const std::vector<std::string>& models() const { return models_; }
    const std::vector<std::string>& embeddings() const { return embeddings_; }
    const std::vector<Strategy>& strategies() const { return strategies_; }

    GridShape shape() const;
    int total() const;

    int linear_index(const Configuration& config) const;
    Configuration multi_index(int k) const;
    std::vector<Configuration> enumerate() const;

    nlohmann::json to_json() const;
    static ConfigurationSpace from_json(const nlohmann::json& j);
    bool operator==(const ConfigurationSpace&) const = default;

private:
    std::vector<std::string> models_;
    std::vector<std::string> embeddings_;
    std::vector<Strategy> strategies_;
};

// ---------------------------------------------------------------------------
// Tasks and score tensors.
// ---------------------------------------------------------------------------

struct Exemplar {
    std::string question;
    std::string context;
    std::string answer;
};

/// A question to answer: the unit of work for every strategy and the
/// selector's task description.
struct QueryTask {
    std::string id;
    LanguageTag language;
    std::string question;
    std::optional<std::string> context;
    std::vector<std::string> gold_answers;
    std::vector<Exemplar> exemplars;

    void validate() const;
};

/// Dense m-dimensional array of scores in [0,1] over a configuration grid.
/// Entries may be individually unknown; the mask keeps the [0,1] invariant
/// intact for the known ones.
class ScoreTensor {
public:
    explicit ScoreTensor(GridShape shape);
    static ScoreTensor dense(GridShape shape, std::vector<double> values);

    const GridShape& shape() const { return shape_; }
    std::int64_t size() const { return static_cast<std::int64_t>(values_.size()); }

    void set(std::int64_t k, double value);
    bool known(std::int64_t k) const;
    /// Throws UnknownScoreError when the entry is masked.
    double at(std::int64_t k) const;
    /// Value without the known-check; only valid when known(k).
    double raw(std::int64_t k) const { return values_[check_range(k)]; }

    bool all_known() const;
    /// Dense-only consumers call this before reading values wholesale.
    void require_dense() const;

    std::vector<std::int64_t> known_indices() const;

    nlohmann::json to_json() const;
    static ScoreTensor from_json(const nlohmann::json& j);

private:
    std::int64_t check_range(std::int64_t k) const;

    GridShape shape_;
    std::vector<double> values_;
    std::vector<std::uint8_t> known_;
};

}  // namespace polyroute
