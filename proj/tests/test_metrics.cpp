#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <set>

#include "ahan/metrics.hpp"

using namespace ahan;
using namespace ahan::metrics;

namespace {

ScoreSet random_scores(std::uint64_t seed, std::size_t n, bool ties) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> level(0, 9);
    ScoreSet s;
    for (std::size_t i = 0; i < n; ++i) {
        const bool same = i % 3 != 0;
        const double base = ties ? level(rng) / 10.0 : u(rng);
        s.push_back({same ? base + 0.2 : base, same});
    }
    return s;
}

std::vector<double> candidate_thresholds(const ScoreSet& s) {
    std::set<double> t;
    for (const auto& p : s) t.insert(p.score);
    std::vector<double> out(t.begin(), t.end());
    out.push_back(std::numeric_limits<double>::infinity());
    return out;
}

struct Rates {
    double far, tar;
};

Rates rates_at(const ScoreSet& s, double t) {
    double pa = 0, na = 0, p = 0, n = 0;
    for (const auto& x : s) {
        (x.same ? p : n) += 1;
        if (x.score >= t) (x.same ? pa : na) += 1;
    }
    return {na / n, pa / p};
}

double auc_oracle(const ScoreSet& s) {
    double wins = 0, total = 0;
    for (const auto& a : s)
        for (const auto& b : s)
            if (a.same && !b.same) {
                total += 1;
                wins += a.score > b.score ? 1.0 : a.score == b.score ? 0.5 : 0.0;
            }
    return wins / total;
}

double tar_oracle(const ScoreSet& s, double target) {
    for (double t : candidate_thresholds(s)) {
        const Rates r = rates_at(s, t);
        if (r.far <= target) return r.tar;
    }
    return 0.0;
}

double accuracy_oracle(const ScoreSet& s) {
    double best = 0;
    auto ts = candidate_thresholds(s);
    ts.push_back(-std::numeric_limits<double>::infinity());
    for (double t : ts) {
        double correct = 0;
        for (const auto& x : s) correct += (x.score >= t) == x.same;
        best = std::max(best, correct / static_cast<double>(s.size()));
    }
    return best;
}

double eer_oracle(const ScoreSet& s) {
    const auto ts = candidate_thresholds(s);
    double prev_far = 0, prev_frr = 0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const Rates r = rates_at(s, ts[i]);
        const double far = r.far, frr = 1 - r.tar;
        if (far <= frr) {
            if (i == 0 || far == frr) return far;
            // Segment from (prev_far, prev_frr) to (far, frr) meets the diagonal.
            const double a = prev_far - prev_frr, b = far - frr;
            return prev_far + a / (a - b) * (far - prev_far);
        }
        prev_far = far;
        prev_frr = frr;
    }
    return 0.0;
}

TwinManifest manifest(const std::vector<std::tuple<std::string, std::optional<std::string>, int>>& ids) {
    std::vector<ManifestEntry> e;
    for (const auto& [id, twin, n] : ids)
        for (int k = 0; k < n; ++k) e.push_back({id + "_" + std::to_string(k), id, twin, Split::test, "x.pgm"});
    return TwinManifest(e);
}

}  // namespace

TEST(Metrics, PerfectSeparation) {
    ScoreSet s{{0.9, true}, {0.8, true}, {0.1, false}, {0.2, false}};
    EXPECT_EQ(roc_auc(s), 1.0);
    EXPECT_EQ(eer(s), 0.0);
    EXPECT_EQ(accuracy_best_threshold(s), 1.0);
    EXPECT_EQ(tar_at_far(s, 1e-3), 1.0);
}

TEST(Metrics, ReversedScores) {
    ScoreSet s{{0.1, true}, {0.2, true}, {0.9, false}, {0.8, false}};
    EXPECT_EQ(roc_auc(s), 0.0);
    EXPECT_EQ(tar_at_far(s, 1e-2), 0.0);
    EXPECT_EQ(accuracy_best_threshold(s), 0.5);
    EXPECT_EQ(eer(s), 1.0);
}

TEST(Metrics, AllTiedIsChance) {
    ScoreSet s{{0.5, true}, {0.5, true}, {0.5, false}, {0.5, false}, {0.5, false}};
    EXPECT_EQ(roc_auc(s), 0.5);
}

TEST(Metrics, ThreeSampleAccuracy) {
    // No threshold separates the middle positive: best is two of three.
    ScoreSet s{{0.2, true}, {0.5, false}, {0.8, true}};
    EXPECT_NEAR(accuracy_best_threshold(s), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(roc_auc(s), 0.5);
}

TEST(Metrics, EerInterpolatesBetweenThresholds) {
    ScoreSet s{{0.9, true}, {0.4, true}, {0.6, false}, {0.1, false}};
    EXPECT_NEAR(eer(s), 0.5, 1e-15);
    EXPECT_NEAR(eer(s), eer_oracle(s), 1e-15);
}

TEST(Metrics, TarAtFarPicksSmallestFeasibleThreshold) {
    ScoreSet s;
    for (int i = 0; i < 100; ++i) s.push_back({i / 100.0, false});
    for (double v : {0.5, 0.985, 0.995, 0.996, 0.997}) s.push_back({v, true});
    // At most one negative (0.99) may sit at or above the threshold.
    EXPECT_NEAR(tar_at_far(s, 1e-2), 4.0 / 5.0, 1e-15);
    // No negative may: the threshold moves past 0.99.
    EXPECT_NEAR(tar_at_far(s, 1e-3), 3.0 / 5.0, 1e-15);
}

TEST(Metrics, RejectsDegenerateInput) {
    ScoreSet only_pos{{0.3, true}};
    EXPECT_THROW(roc_auc(only_pos), std::invalid_argument);
    EXPECT_THROW(eer(only_pos), std::invalid_argument);
    ScoreSet s{{0.3, true}, {0.1, false}};
    EXPECT_THROW(tar_at_far(s, 0.0), std::invalid_argument);
    EXPECT_THROW(tar_at_far(s, 1.0), std::invalid_argument);
}

class MetricOracle : public ::testing::TestWithParam<int> {};

TEST_P(MetricOracle, MatchesBruteForce) {
    for (bool ties : {false, true}) {
        const ScoreSet s = random_scores(100 + GetParam(), 60 + GetParam(), ties);
        EXPECT_NEAR(roc_auc(s), auc_oracle(s), 1e-12);
        EXPECT_NEAR(accuracy_best_threshold(s), accuracy_oracle(s), 1e-12);
        EXPECT_NEAR(eer(s), eer_oracle(s), 1e-12);
        for (double far : {1e-1, 1e-2, 1e-3, 1e-4}) EXPECT_NEAR(tar_at_far(s, far), tar_oracle(s, far), 1e-12);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, MetricOracle, ::testing::Range(0, 20));

TEST(Pairs, TwinScenarioSingleFamily) {
    const TwinManifest m = manifest({{"a", "b", 2}, {"b", "a", 2}});
    std::mt19937_64 rng(1);
    const auto pairs = build_pairs(m, Scenario::twin, rng, 0);
    std::size_t pos = 0, neg = 0;
    for (const auto& p : pairs) {
        (p.same ? pos : neg)++;
        const bool same_id = m.entries()[p.a].identity == m.entries()[p.b].identity;
        EXPECT_EQ(same_id, p.same);
        EXPECT_NE(p.a, p.b);
    }
    EXPECT_EQ(pos, 2u);
    EXPECT_EQ(neg, 4u);
}

TEST(Pairs, HardTwinHasOnlyCrossTwinNegatives) {
    const TwinManifest m = manifest({{"a", "b", 3}, {"b", "a", 2}, {"c", std::nullopt, 4}});
    std::mt19937_64 rng(2);
    const auto pairs = build_pairs(m, Scenario::hard_twin, rng, 0);
    EXPECT_EQ(pairs.size(), 6u);
    for (const auto& p : pairs) {
        EXPECT_FALSE(p.same);
        EXPECT_EQ(m.twin_of(m.entries()[p.a].identity), m.entries()[p.b].identity);
    }
}

TEST(Pairs, GeneralCountsAndCap) {
    const TwinManifest m = manifest({{"a", "b", 2}, {"b", "a", 2}, {"c", std::nullopt, 3}});
    std::mt19937_64 rng(3);
    const auto all = build_pairs(m, Scenario::general, rng, 0);
    std::size_t pos = 0;
    for (const auto& p : all) pos += p.same;
    EXPECT_EQ(pos, 1u + 1u + 3u);
    EXPECT_EQ(all.size() - pos, 21u - 5u);
    const auto capped = build_pairs(m, Scenario::general, rng, 6);
    EXPECT_EQ(capped.size(), 6u);
}

TEST(Pairs, TwinScenarioWithoutTwinsThrows) {
    const TwinManifest m = manifest({{"c", std::nullopt, 3}, {"d", std::nullopt, 3}});
    std::mt19937_64 rng(4);
    EXPECT_THROW(build_pairs(m, Scenario::twin, rng, 0), std::invalid_argument);
    EXPECT_NO_THROW(build_pairs(m, Scenario::general, rng, 0));
}

TEST(Pairs, SeededSelectionRepeats) {
    const TwinManifest m = manifest({{"a", "b", 5}, {"b", "a", 5}, {"c", std::nullopt, 5}});
    std::mt19937_64 r1(5), r2(5);
    const auto a = build_pairs(m, Scenario::general, r1, 10), b = build_pairs(m, Scenario::general, r2, 10);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].a == b[i].a && a[i].b == b[i].b);
}

TEST(Scenario, ParseRoundTrip) {
    for (auto s : {Scenario::general, Scenario::twin, Scenario::hard_twin}) EXPECT_EQ(parse_scenario(to_string(s)), s);
    EXPECT_THROW(parse_scenario("easy"), std::invalid_argument);
}

TEST(Report, JsonKeysAndCsvRoundTrip) {
    const ScoreSet s = random_scores(7, 40, false);
    const MetricReport r = summarize("twin", s);
    const std::string j = r.to_json();
    for (const char* key : {"\"scenario\"", "\"auc\"", "\"eer\"", "\"accuracy\"", "\"tar_at_far_1e-3\""})
        EXPECT_NE(j.find(key), std::string::npos) << key;
    EXPECT_NE(r.to_table().find("tar@far=1e-2"), std::string::npos);
    const auto path = std::filesystem::temp_directory_path() / "ahan_test_scores.csv";
    write_scores_csv(path, s);
    const ScoreSet back = read_scores_csv(path);
    ASSERT_EQ(back.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_EQ(back[i].score, s[i].score);
        EXPECT_EQ(back[i].same, s[i].same);
    }
    std::filesystem::remove(path);
}
