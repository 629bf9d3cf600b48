#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "ahan/manifest.hpp"

namespace ahan::metrics {

enum class Scenario { general, twin, hard_twin };

std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view text);

struct LabeledPair {
    std::size_t a = 0;  // manifest entry indices
    std::size_t b = 0;
    bool same = false;
};

/// general: random same/different pairs over all identities.
/// twin: same-person positives and cross-twin negatives within twin families.
/// hard_twin: cross-twin negatives only.
/// max_pairs caps each label class at max_pairs/2 (0 = no cap).
std::vector<LabeledPair> build_pairs(const TwinManifest& manifest, Scenario scenario, std::mt19937_64& rng,
                                     std::size_t max_pairs);

/// Same-person pairs restricted to members of twin families; pooled with hard_twin negatives for threshold metrics.
std::vector<LabeledPair> twin_family_positives(const TwinManifest& manifest, std::mt19937_64& rng,
                                               std::size_t max_pairs);

struct ScoredPair {
    double score = 0.0;
    bool same = false;
};

using ScoreSet = std::vector<ScoredPair>;

/// P(random positive outscores random negative), ties counted 1/2.
double roc_auc(const ScoreSet& scores);
/// TAR at the smallest observed-score threshold whose FAR (negatives >= t) is <= far_target.
double tar_at_far(const ScoreSet& scores, double far_target);
/// FAR = FRR crossing, linearly interpolated between adjacent thresholds.
double eer(const ScoreSet& scores);
/// Best fraction correct over thresholds at observed scores plus +/- infinity.
double accuracy_best_threshold(const ScoreSet& scores);

struct MetricReport {
    std::string scenario;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    double accuracy = 0.0;
    double auc = 0.0;
    double eer = 0.0;
    double tar_at_far_1e2 = 0.0;
    double tar_at_far_1e3 = 0.0;
    double tar_at_far_1e4 = 0.0;

    std::string to_json() const;
    std::string to_table() const;
};

MetricReport summarize(std::string scenario, const ScoreSet& scores);

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores);
ScoreSet read_scores_csv(const std::filesystem::path& path);

}  // namespace ahan::metrics
