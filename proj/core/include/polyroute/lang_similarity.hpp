#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "polyroute/config_space.hpp"
#include "polyroute/errors.hpp"

namespace polyroute::langsim {

struct SimilarityParams {
    double w_latin = 0.9;
    int cls_threshold = 3;
    double dist_threshold = 0.5;
};

// Pairwise language distances per typological feature, plus the resource
// class and script of every covered language. Read-only after load.
class DistanceTable {
 public:
    static DistanceTable load(const std::filesystem::path& file);
    static const DistanceTable& shared();

    const std::vector<std::string>& features() const { return features_; }
    const std::vector<LanguageTag>& languages() const { return languages_; }

    bool has_language(const std::string& code) const;
    const LanguageTag& profile(const std::string& code) const;  // throws UnknownLanguage

    // Symmetric lookup; 0 on the diagonal; nullopt when the pair is not
    // covered for that feature.
    std::optional<double> distance(const std::string& feature, const std::string& a,
                                   const std::string& b) const;
    // Mean over all features; nullopt as soon as one feature is missing.
    std::optional<double> mean_distance(const std::string& a, const std::string& b) const;

 private:
    std::vector<std::string> features_;
    std::vector<LanguageTag> languages_;
    std::map<std::string, std::size_t> by_code_;
    std::map<std::string, std::map<std::string, double>> distances_;  // feature -> "a|b" -> d
};

// Lower is more relevant: (is_latin ? w_latin : 1) * d_avg / cls.
double relevance_score(double d_avg, int cls, bool is_latin,
                       const SimilarityParams& params = {});

// Candidates with resource_class >= cls_threshold whose weighted mean
// distance to the source stays within dist_threshold. Pairs without full
// feature coverage are ineligible. Sorted by code; never contains source.
std::vector<LanguageTag> similar_languages(const LanguageTag& source, const DistanceTable& table,
                                           const std::vector<LanguageTag>& profiles,
                                           const SimilarityParams& params = {});
std::vector<LanguageTag> similar_languages(const LanguageTag& source, const DistanceTable& table,
                                           const SimilarityParams& params = {});

// Minimum relevance score wins; ties break on the smaller language code.
std::optional<LanguageTag> pick_pivot(const LanguageTag& source,
                                      const std::vector<LanguageTag>& candidates,
                                      const DistanceTable& table,
                                      const SimilarityParams& params = {});

// similar_languages + pick_pivot against the shared table.
std::optional<LanguageTag> pivot_for(const LanguageTag& source, const DistanceTable& table,
                                     const SimilarityParams& params = {});

}  // namespace polyroute::langsim
