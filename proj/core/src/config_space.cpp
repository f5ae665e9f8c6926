#include "polyroute/config_space.hpp"

#include <algorithm>
#include <cctype>

namespace polyroute {

void LanguageTag::validate() const {
    if (code.size() < 2 || code.size() > 3)
        throw InvalidInput("language code must be 2-3 chars: '" + code + "'");
    for (char c : code) {
        if (!std::islower(static_cast<unsigned char>(c)))
            throw InvalidInput("language code must be lowercase: '" + code + "'");
    }
    if (resource_class < 0 || resource_class > 5)
        throw InvalidInput("resource class out of range [0,5] for '" + code + "'");
}

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Mono: return "Mono";
        case Strategy::Trans: return "Trans";
        case Strategy::Sim: return "Sim";
        case Strategy::AggSrc: return "AggSrc";
        case Strategy::AggTrans: return "AggTrans";
    }
    throw InvalidInput("invalid strategy value");
}

Strategy parse_strategy(const std::string& name) {
    if (name == "Mono") return Strategy::Mono;
    if (name == "Trans") return Strategy::Trans;
    if (name == "Sim") return Strategy::Sim;
    if (name == "AggSrc") return Strategy::AggSrc;
    if (name == "AggTrans") return Strategy::AggTrans;
    throw InvalidConfiguration("unknown strategy: '" + name + "'");
}

std::string Configuration::canonical() const {
    return "model=" + model_id + ";embedding=" + embedding_id +
           ";strategy=" + to_string(strategy);
}

std::int64_t grid_size(const GridShape& shape) {
    if (shape.empty()) throw InvalidInput("grid shape must have at least one axis");
    std::int64_t n = 1;
    for (int d : shape) {
        if (d < 1) throw InvalidInput("grid axis must be non-empty");
        n *= d;
    }
    return n;
}

std::int64_t ravel_index(const GridShape& shape, std::span<const int> idx) {
    if (idx.size() != shape.size())
        throw IndexError("index rank does not match grid rank");
    std::int64_t k = 0;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= shape[i])
            throw IndexError("grid index out of range on axis " + std::to_string(i));
        k = k * shape[i] + idx[i];
    }
    return k;
}

std::vector<int> unravel_index(const GridShape& shape, std::int64_t k) {
    const std::int64_t total = grid_size(shape);
    if (k < 0 || k >= total) throw IndexError("linear index out of range");
    std::vector<int> idx(shape.size());
    for (std::size_t i = shape.size(); i-- > 0;) {
        idx[i] = static_cast<int>(k % shape[i]);
        k /= shape[i];
    }
    return idx;
}

namespace {

template <typename T>
int axis_position(const std::vector<T>& axis, const T& value, const char* what) {
    auto it = std::find(axis.begin(), axis.end(), value);
    if (it == axis.end()) {
        if constexpr (std::is_same_v<T, std::string>) {
            throw InvalidConfiguration(std::string("unknown ") + what + ": '" + value + "'");
        } else {
            throw InvalidConfiguration(std::string("unknown ") + what);
        }
    }
    return static_cast<int>(it - axis.begin());
}

}  // namespace

ConfigurationSpace::ConfigurationSpace(std::vector<std::string> models,
                                       std::vector<std::string> embeddings,
                                       std::vector<Strategy> strategies)
    : models_(std::move(models)),
      embeddings_(std::move(embeddings)),
      strategies_(std::move(strategies)) {
    if (models_.empty() || embeddings_.empty() || strategies_.empty())
        throw InvalidConfiguration("every configuration axis must be non-empty");
    auto unique_size = [](auto axis) {
        std::sort(axis.begin(), axis.end());
        return std::unique(axis.begin(), axis.end()) - axis.begin();
    };
    if (unique_size(models_) != static_cast<std::ptrdiff_t>(models_.size()) ||
        unique_size(embeddings_) != static_cast<std::ptrdiff_t>(embeddings_.size()) ||
        unique_size(strategies_) != static_cast<std::ptrdiff_t>(strategies_.size()))
        throw InvalidConfiguration("configuration axes must not contain duplicates");
}

GridShape ConfigurationSpace::shape() const {
    return {static_cast<int>(models_.size()), static_cast<int>(embeddings_.size()),
            static_cast<int>(strategies_.size())};
}

int ConfigurationSpace::total() const {
    return static_cast<int>(models_.size() * embeddings_.size() * strategies_.size());
}

int ConfigurationSpace::linear_index(const Configuration& config) const {
    const int mi = axis_position(models_, config.model_id, "model");
    const int ei = axis_position(embeddings_, config.embedding_id, "embedding");
    const int si = axis_position(strategies_, config.strategy, "strategy");
    const int idx[3] = {mi, ei, si};
    return static_cast<int>(ravel_index(shape(), idx));
}

Configuration ConfigurationSpace::multi_index(int k) const {
    const auto idx = unravel_index(shape(), k);
    return Configuration{models_[idx[0]], embeddings_[idx[1]], strategies_[idx[2]]};
}

std::vector<Configuration> ConfigurationSpace::enumerate() const {
    std::vector<Configuration> out;
    out.reserve(total());
    for (const auto& m : models_)
        for (const auto& e : embeddings_)
            for (const auto s : strategies_) out.push_back({m, e, s});
    return out;
}

nlohmann::json ConfigurationSpace::to_json() const {
    nlohmann::json strategies = nlohmann::json::array();
    for (auto s : strategies_) strategies.push_back(to_string(s));
    return {{"models", models_}, {"embeddings", embeddings_}, {"strategies", strategies}};
}

ConfigurationSpace ConfigurationSpace::from_json(const nlohmann::json& j) {
    std::vector<Strategy> strategies;
    for (const auto& s : j.at("strategies"))
        strategies.push_back(parse_strategy(s.get<std::string>()));
    return ConfigurationSpace(j.at("models").get<std::vector<std::string>>(),
                              j.at("embeddings").get<std::vector<std::string>>(),
                              std::move(strategies));
}

void QueryTask::validate() const {
    language.validate();
    if (id.empty()) throw InvalidInput("task id must be non-empty");
    if (question.empty()) throw InvalidInput("task question must be non-empty: " + id);
    if (gold_answers.empty())
        throw InvalidInput("task must carry at least one gold answer: " + id);
}

ScoreTensor::ScoreTensor(GridShape shape)
    : shape_(std::move(shape)),
      values_(grid_size(shape_), 0.0),
      known_(values_.size(), 0) {}

ScoreTensor ScoreTensor::dense(GridShape shape, std::vector<double> values) {
    ScoreTensor t(std::move(shape));
    if (values.size() != t.values_.size())
        throw InvalidInput("value count does not match grid size");
    for (std::size_t i = 0; i < values.size(); ++i) t.set(static_cast<std::int64_t>(i), values[i]);
    return t;
}

std::int64_t ScoreTensor::check_range(std::int64_t k) const {
    if (k < 0 || k >= size()) throw IndexError("score index out of range");
    return k;
}

void ScoreTensor::set(std::int64_t k, double value) {
    check_range(k);
    if (!(value >= 0.0 && value <= 1.0))
        throw InvalidInput("score must lie in [0,1]");
    values_[k] = value;
    known_[k] = 1;
}

bool ScoreTensor::known(std::int64_t k) const { return known_[check_range(k)] != 0; }

double ScoreTensor::at(std::int64_t k) const {
    if (!known(k)) throw UnknownScoreError("score entry " + std::to_string(k) + " is unknown");
    return values_[k];
}

bool ScoreTensor::all_known() const {
    return std::all_of(known_.begin(), known_.end(), [](std::uint8_t b) { return b != 0; });
}

void ScoreTensor::require_dense() const {
    if (!all_known())
        throw UnknownScoreError("tensor has unknown entries; dense consumer refused");
}

std::vector<std::int64_t> ScoreTensor::known_indices() const {
    std::vector<std::int64_t> out;
    for (std::int64_t k = 0; k < size(); ++k)
        if (known_[k]) out.push_back(k);
    return out;
}

nlohmann::json ScoreTensor::to_json() const {
    nlohmann::json values = nlohmann::json::array();
    for (std::int64_t k = 0; k < size(); ++k) {
        if (known_[k])
            values.push_back(values_[k]);
        else
            values.push_back(nullptr);
    }
    return {{"shape", shape_}, {"values", values}};
}

ScoreTensor ScoreTensor::from_json(const nlohmann::json& j) {
    ScoreTensor t(j.at("shape").get<GridShape>());
    const auto& values = j.at("values");
    if (static_cast<std::int64_t>(values.size()) != t.size())
        throw ParseError("score tensor value count does not match shape");
    for (std::int64_t k = 0; k < t.size(); ++k) {
        if (!values[k].is_null()) t.set(k, values[k].get<double>());
    }
    return t;
}

}  // namespace polyroute
