#include "ahan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ahan::metrics {

std::string_view to_string(Scenario s) {
    switch (s) {
        case Scenario::general: return "general";
        case Scenario::twin: return "twin";
        case Scenario::hard_twin: return "hard_twin";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view text) {
    if (text == "general") return Scenario::general;
    if (text == "twin") return Scenario::twin;
    if (text == "hard_twin") return Scenario::hard_twin;
    throw std::invalid_argument("unknown scenario '" + std::string(text) + "' (expected general, twin or hard_twin)");
}

namespace {

void cap(std::vector<LabeledPair>& pairs, std::size_t limit, std::mt19937_64& rng) {
    std::shuffle(pairs.begin(), pairs.end(), rng);
    if (limit > 0 && pairs.size() > limit) pairs.resize(limit);
}

std::vector<LabeledPair> same_person_pairs(const std::vector<std::size_t>& images) {
    std::vector<LabeledPair> out;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = i + 1; j < images.size(); ++j) out.push_back({images[i], images[j], true});
    return out;
}

std::size_t per_label_cap(std::size_t max_pairs) { return max_pairs == 0 ? 0 : std::max<std::size_t>(1, max_pairs / 2); }

}  // namespace

std::vector<LabeledPair> twin_family_positives(const TwinManifest& manifest, std::mt19937_64& rng,
                                               std::size_t max_pairs) {
    const auto families = manifest.twin_families();
    if (families.empty()) throw std::invalid_argument("manifest has no twin families");
    const auto by_id = manifest.images_by_identity();
    std::vector<LabeledPair> pos;
    for (const auto& [a, b] : families)
        for (const auto& id : {a, b}) {
            auto p = same_person_pairs(by_id.at(id));
            pos.insert(pos.end(), p.begin(), p.end());
        }
    if (pos.empty()) throw std::invalid_argument("twin families have no same-person image pairs");
    cap(pos, per_label_cap(max_pairs), rng);
    return pos;
}

std::vector<LabeledPair> build_pairs(const TwinManifest& manifest, Scenario scenario, std::mt19937_64& rng,
                                     std::size_t max_pairs) {
    if (manifest.empty()) throw std::invalid_argument("build_pairs: empty manifest");
    const auto by_id = manifest.images_by_identity();
    const std::size_t limit = per_label_cap(max_pairs);
    std::vector<LabeledPair> pos, neg;

    if (scenario == Scenario::general) {
        for (const auto& [id, imgs] : by_id) {
            auto p = same_person_pairs(imgs);
            pos.insert(pos.end(), p.begin(), p.end());
        }
        const auto& entries = manifest.entries();
        for (std::size_t i = 0; i < entries.size(); ++i)
            for (std::size_t j = i + 1; j < entries.size(); ++j)
                if (entries[i].identity != entries[j].identity) neg.push_back({i, j, false});
        if (pos.empty() || neg.empty()) {
            throw std::invalid_argument("general scenario needs same-person and different-person pairs");
        }
        cap(pos, limit, rng);
        cap(neg, limit, rng);
    } else {
        const auto families = manifest.twin_families();
        if (families.empty()) {
            throw std::invalid_argument(std::string(to_string(scenario)) + " scenario needs twin pairs in the manifest");
        }
        for (const auto& [a, b] : families)
            for (auto i : by_id.at(a))
                for (auto j : by_id.at(b)) neg.push_back({i, j, false});
        cap(neg, limit, rng);
        if (scenario == Scenario::twin) {
            pos = twin_family_positives(manifest, rng, max_pairs);
        }
    }
    std::vector<LabeledPair> out = std::move(pos);
    out.insert(out.end(), neg.begin(), neg.end());
    return out;
}

namespace {

struct Sweep {
    std::size_t positives = 0;
    std::size_t negatives = 0;
    // Per threshold (ascending, ending at +inf): how many of each label are accepted (score >= t).
    std::vector<double> thresholds;
    std::vector<std::size_t> pos_accepted;
    std::vector<std::size_t> neg_accepted;
};

Sweep sweep(const ScoreSet& scores) {
    ScoreSet sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    Sweep s;
    for (const auto& p : sorted) (p.same ? s.positives : s.negatives)++;
    std::size_t pos_below = 0, neg_below = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        const double t = sorted[i].score;
        s.thresholds.push_back(t);
        s.pos_accepted.push_back(s.positives - pos_below);
        s.neg_accepted.push_back(s.negatives - neg_below);
        while (i < sorted.size() && sorted[i].score == t) {
            (sorted[i].same ? pos_below : neg_below)++;
            ++i;
        }
    }
    s.thresholds.push_back(std::numeric_limits<double>::infinity());
    s.pos_accepted.push_back(0);
    s.neg_accepted.push_back(0);
    return s;
}

void require_both(const ScoreSet& scores, const char* what) {
    bool pos = false, neg = false;
    for (const auto& p : scores) (p.same ? pos : neg) = true;
    if (!pos || !neg) throw std::invalid_argument(std::string(what) + ": needs both same and different pairs");
}

}  // namespace

double roc_auc(const ScoreSet& scores) {
    require_both(scores, "roc_auc");
    ScoreSet sorted = scores;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    // Twice the Mann-Whitney count, kept integral so ties stay exact.
    unsigned long long wins2 = 0;
    std::size_t neg_below = 0, positives = 0, negatives = 0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t gp = 0, gn = 0;
        const double t = sorted[i].score;
        while (i < sorted.size() && sorted[i].score == t) {
            (sorted[i].same ? gp : gn)++;
            ++i;
        }
        wins2 += 2ULL * gp * neg_below + static_cast<unsigned long long>(gp) * gn;
        neg_below += gn;
        positives += gp;
        negatives += gn;
    }
    return static_cast<double>(wins2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

double tar_at_far(const ScoreSet& scores, double far_target) {
    if (!(far_target > 0.0 && far_target < 1.0)) {
        throw std::invalid_argument("tar_at_far: target " + std::to_string(far_target) + " outside (0, 1)");
    }
    require_both(scores, "tar_at_far");
    const Sweep s = sweep(scores);
    for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
        const double far = static_cast<double>(s.neg_accepted[i]) / static_cast<double>(s.negatives);
        if (far <= far_target) return static_cast<double>(s.pos_accepted[i]) / static_cast<double>(s.positives);
    }
    return 0.0;
}

double eer(const ScoreSet& scores) {
    require_both(scores, "eer");
    const Sweep s = sweep(scores);
    const double n = static_cast<double>(s.negatives);
    const double p = static_cast<double>(s.positives);
    auto far = [&](std::size_t i) { return static_cast<double>(s.neg_accepted[i]) / n; };
    auto frr = [&](std::size_t i) { return 1.0 - static_cast<double>(s.pos_accepted[i]) / p; };
    double prev_diff = 0.0;
    for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
        const double diff = far(i) - frr(i);
        if (diff <= 0.0) {
            if (diff == 0.0 || i == 0) return far(i);
            const double w = prev_diff / (prev_diff - diff);
            return far(i - 1) + w * (far(i) - far(i - 1));
        }
        prev_diff = diff;
    }
    return far(s.thresholds.size() - 1);
}

double accuracy_best_threshold(const ScoreSet& scores) {
    require_both(scores, "accuracy_best_threshold");
    const Sweep s = sweep(scores);
    const double total = static_cast<double>(s.positives + s.negatives);
    // -inf accepts everything, which the lowest observed threshold already does.
    double best = 0.0;
    for (std::size_t i = 0; i < s.thresholds.size(); ++i) {
        const std::size_t correct = s.pos_accepted[i] + (s.negatives - s.neg_accepted[i]);
        best = std::max(best, static_cast<double>(correct) / total);
    }
    return best;
}

MetricReport summarize(std::string scenario, const ScoreSet& scores) {
    MetricReport r;
    r.scenario = std::move(scenario);
    for (const auto& p : scores) (p.same ? r.positives : r.negatives)++;
    r.accuracy = accuracy_best_threshold(scores);
    r.auc = roc_auc(scores);
    r.eer = eer(scores);
    r.tar_at_far_1e2 = tar_at_far(scores, 1e-2);
    r.tar_at_far_1e3 = tar_at_far(scores, 1e-3);
    r.tar_at_far_1e4 = tar_at_far(scores, 1e-4);
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::ordered_json j;
    j["scenario"] = scenario;
    j["positives"] = positives;
    j["negatives"] = negatives;
    j["accuracy"] = accuracy;
    j["auc"] = auc;
    j["eer"] = eer;
    j["tar_at_far_1e-2"] = tar_at_far_1e2;
    j["tar_at_far_1e-3"] = tar_at_far_1e3;
    j["tar_at_far_1e-4"] = tar_at_far_1e4;
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(18) << "metric" << std::right << std::setw(12) << "value" << '\n';
    auto line = [&](const char* name, double v) {
        os << std::left << std::setw(18) << name << std::right << std::setw(12) << std::fixed << std::setprecision(4)
           << v << '\n';
    };
    os << std::left << std::setw(18) << "scenario" << std::right << std::setw(12) << scenario << '\n';
    os << std::left << std::setw(18) << "positives" << std::right << std::setw(12) << positives << '\n';
    os << std::left << std::setw(18) << "negatives" << std::right << std::setw(12) << negatives << '\n';
    line("accuracy", accuracy);
    line("auc", auc);
    line("eer", eer);
    line("tar@far=1e-2", tar_at_far_1e2);
    line("tar@far=1e-3", tar_at_far_1e3);
    line("tar@far=1e-4", tar_at_far_1e4);
    return os.str();
}

void write_scores_csv(const std::filesystem::path& path, const ScoreSet& scores) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "score,label\n";
    char buf[64];
    for (const auto& p : scores) {
        std::snprintf(buf, sizeof buf, "%.17g", p.score);
        out << buf << ',' << (p.same ? "same" : "different") << '\n';
    }
}

ScoreSet read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "score,label") throw std::runtime_error(path.string() + ": bad header");
    ScoreSet out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        const std::string label = line.substr(comma + 1);
        if (label != "same" && label != "different") throw std::runtime_error(path.string() + ": bad label " + label);
        out.push_back({std::stod(line.substr(0, comma)), label == "same"});
    }
    return out;
}

}  // namespace ahan::metrics
