#include "polyroute/lang_similarity.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "polyroute/data_dir.hpp"

namespace polyroute::langsim {

namespace {

std::string pair_key(const std::string& a, const std::string& b) {
    return a < b ? a + "|" + b : b + "|" + a;
}

Script parse_script(const std::string& s) {
    if (s == "latin") return Script::Latin;
    if (s == "non-latin") return Script::NonLatin;
    throw InvalidInput("unknown script value: " + s);
}

}  // namespace

DistanceTable DistanceTable::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open distance table: " + file.string());
    nlohmann::json j;
    in >> j;

    DistanceTable table;
    table.features_ = j.at("features").get<std::vector<std::string>>();
    if (table.features_.empty()) throw InvalidInput("distance table lists no features");

    for (const auto& entry : j.at("languages")) {
        LanguageTag tag{entry.at("code").get<std::string>(),
                        parse_script(entry.at("script").get<std::string>()),
                        entry.at("class").get<int>()};
        tag.validate();
        if (table.by_code_.count(tag.code))
            throw InvalidInput("duplicate language in distance table: " + tag.code);
        table.by_code_[tag.code] = table.languages_.size();
        table.languages_.push_back(std::move(tag));
    }

    for (const auto& feature : table.features_) {
        const auto it = j.at("distances").find(feature);
        if (it == j.at("distances").end()) continue;
        auto& slot = table.distances_[feature];
        for (const auto& [key, value] : it->items()) {
            const auto sep = key.find('|');
            if (sep == std::string::npos)
                throw InvalidInput("malformed distance key: " + key);
            const std::string a = key.substr(0, sep);
            const std::string b = key.substr(sep + 1);
            if (!table.by_code_.count(a) || !table.by_code_.count(b))
                throw InvalidInput("distance key references unlisted language: " + key);
            const double d = value.get<double>();
            if (d < 0.0 || d > 1.0)
                throw InvalidInput("distance out of [0,1] for " + key);
            slot[pair_key(a, b)] = d;
        }
    }
    return table;
}

const DistanceTable& DistanceTable::shared() {
    static const DistanceTable table = load(default_data_dir() / "lang_distances.json");
    return table;
}

bool DistanceTable::has_language(const std::string& code) const {
    return by_code_.count(code) > 0;
}

const LanguageTag& DistanceTable::profile(const std::string& code) const {
    const auto it = by_code_.find(code);
    if (it == by_code_.end()) throw UnknownLanguage("language not in distance table: " + code);
    return languages_[it->second];
}

std::optional<double> DistanceTable::distance(const std::string& feature, const std::string& a,
                                              const std::string& b) const {
    if (a == b) return 0.0;
    const auto feat = distances_.find(feature);
    if (feat == distances_.end()) return std::nullopt;
    const auto it = feat->second.find(pair_key(a, b));
    if (it == feat->second.end()) return std::nullopt;
    return it->second;
}

std::optional<double> DistanceTable::mean_distance(const std::string& a,
                                                   const std::string& b) const {
    double sum = 0.0;
    for (const auto& feature : features_) {
        const auto d = distance(feature, a, b);
        if (!d) return std::nullopt;
        sum += *d;
    }
    return sum / static_cast<double>(features_.size());
}

double relevance_score(double d_avg, int cls, bool is_latin, const SimilarityParams& params) {
    if (cls == 0) throw IneligibleLanguage("resource class 0 admits no relevance score");
    if (cls < 0) throw InvalidInput("resource class must be non-negative");
    if (d_avg < 0.0) throw InvalidInput("distance must be non-negative");
    const double w = is_latin ? params.w_latin : 1.0;
    return w * d_avg / cls;
}

std::vector<LanguageTag> similar_languages(const LanguageTag& source, const DistanceTable& table,
                                           const std::vector<LanguageTag>& profiles,
                                           const SimilarityParams& params) {
    if (!table.has_language(source.code))
        throw UnknownLanguage("source language not in distance table: " + source.code);

    std::vector<LanguageTag> out;
    for (const auto& candidate : profiles) {
        if (candidate.code == source.code) continue;
        if (candidate.resource_class < params.cls_threshold) continue;
        const auto mean = table.mean_distance(source.code, candidate.code);
        if (!mean) continue;
        const double score =
            relevance_score(*mean, candidate.resource_class, candidate.is_latin(), params);
        if (score <= params.dist_threshold) out.push_back(candidate);
    }
    std::sort(out.begin(), out.end(),
              [](const LanguageTag& a, const LanguageTag& b) { return a.code < b.code; });
    return out;
}

std::vector<LanguageTag> similar_languages(const LanguageTag& source, const DistanceTable& table,
                                           const SimilarityParams& params) {
    return similar_languages(source, table, table.languages(), params);
}

std::optional<LanguageTag> pick_pivot(const LanguageTag& source,
                                      const std::vector<LanguageTag>& candidates,
                                      const DistanceTable& table,
                                      const SimilarityParams& params) {
    std::optional<LanguageTag> best;
    double best_score = 0.0;
    for (const auto& candidate : candidates) {
        const auto mean = table.mean_distance(source.code, candidate.code);
        if (!mean) continue;
        const double score =
            relevance_score(*mean, candidate.resource_class, candidate.is_latin(), params);
        if (!best || score < best_score ||
            (score == best_score && candidate.code < best->code)) {
            best = candidate;
            best_score = score;
        }
    }
    return best;
}

std::optional<LanguageTag> pivot_for(const LanguageTag& source, const DistanceTable& table,
                                     const SimilarityParams& params) {
    return pick_pivot(source, similar_languages(source, table, params), table, params);
}

}  // namespace polyroute::langsim
