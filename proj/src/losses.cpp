#include "ahan/losses.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace ahan {

void IdentityBatch::validate() const {
    if (embeddings.shape().size() != 2) throw DimensionError("embeddings must be B x D");
    if (labels.size() != embeddings.shape()[0]) {
        throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(embeddings.shape()[0]) +
                             " embeddings");
    }
    for (const auto& [a, b] : twin_of) {
        auto it = twin_of.find(b);
        if (a == b || it == twin_of.end() || it->second != a) {
            throw std::invalid_argument("twin map is not an involution at label " + std::to_string(a));
        }
    }
}

ArcHead ArcHead::init(std::size_t embedding_width, std::size_t classes, double margin, double scale,
                      std::mt19937_64& rng, double stddev) {
    return ArcHead{Var::parameter(Tensor::randn({embedding_width, classes}, rng, stddev)), margin, scale};
}

Var arcface_loss(const IdentityBatch& batch, const ArcHead& head) {
    batch.validate();
    if (batch.embeddings.shape()[1] != head.weights.shape()[0]) {
        throw DimensionError("arcface_loss: embeddings " + shape_str(batch.embeddings.shape()) +
                             " do not match head " + shape_str(head.weights.shape()));
    }
    for (auto l : batch.labels)
        if (l >= head.classes()) {
            throw std::out_of_range("arcface_loss: label " + std::to_string(l) + " outside " +
                                    std::to_string(head.classes()) + " classes");
        }
    Var e = normalize_rows(batch.embeddings);
    Var w = transpose(normalize_rows(transpose(head.weights)));
    Var cosines = matmul(e, w);
    return cross_entropy(arc_margin_logits(cosines, batch.labels, head.margin, head.scale), batch.labels);
}

std::vector<TripletChoice> mine_triplets(const Tensor& embeddings, const std::vector<std::size_t>& labels,
                                         const std::map<std::size_t, std::size_t>& twin_of) {
    const std::size_t b = embeddings.rows();
    const std::size_t d = embeddings.cols();
    std::vector<double> norms(b);
    for (std::size_t i = 0; i < b; ++i) {
        double ss = 0.0;
        for (double v : embeddings.row(i)) ss += v * v;
        norms[i] = std::sqrt(ss);
        if (norms[i] == 0.0) throw std::invalid_argument("mine_triplets: embedding " + std::to_string(i) + " is zero");
    }
    auto dist = [&](std::size_t i, std::size_t j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < d; ++k) dot += embeddings(i, k) * embeddings(j, k);
        return 1.0 - dot / (norms[i] * norms[j]);
    };
    std::vector<TripletChoice> out;
    for (std::size_t a = 0; a < b; ++a) {
        std::optional<std::size_t> pos;
        double pos_d = 0.0;
        for (std::size_t j = 0; j < b; ++j) {
            if (j == a || labels[j] != labels[a]) continue;
            const double dj = dist(a, j);
            if (!pos || dj > pos_d) {
                pos = j;
                pos_d = dj;
            }
        }
        if (!pos) continue;
        auto twin = twin_of.find(labels[a]);
        std::optional<std::size_t> neg;
        double neg_d = 0.0;
        bool via_twin = false;
        if (twin != twin_of.end()) {
            for (std::size_t j = 0; j < b; ++j) {
                if (labels[j] != twin->second) continue;
                const double dj = dist(a, j);
                if (!neg || dj < neg_d) {
                    neg = j;
                    neg_d = dj;
                }
            }
            via_twin = neg.has_value();
        }
        if (!neg) {
            for (std::size_t j = 0; j < b; ++j) {
                if (labels[j] == labels[a]) continue;
                const double dj = dist(a, j);
                if (!neg || dj < neg_d) {
                    neg = j;
                    neg_d = dj;
                }
            }
        }
        if (!neg) continue;
        out.push_back({a, *pos, *neg, via_twin});
    }
    return out;
}

Var twin_triplet_loss(const IdentityBatch& batch, double margin) {
    batch.validate();
    const auto triplets = mine_triplets(batch.embeddings.value(), batch.labels, batch.twin_of);
    if (triplets.empty()) throw std::invalid_argument("twin_triplet_loss: no anchor has both a positive and a negative");
    const std::size_t b = batch.labels.size();
    Var n = normalize_rows(batch.embeddings);
    Var sim = matmul(n, transpose(n));
    std::vector<std::size_t> ap, an;
    for (const auto& t : triplets) {
        ap.push_back(t.anchor * b + t.positive);
        an.push_back(t.anchor * b + t.negative);
    }
    // d(a,p) - d(a,n) = cos(a,n) - cos(a,p)
    Var gap = sub(gather(sim, an), gather(sim, ap));
    Var hinge = relu(add(gap, Var(Tensor(Shape{triplets.size()}, margin))));
    return mean(hinge);
}

Var total_loss(const Var& l_arc, const Var& l_trip, double lambda) {
    if (!std::isfinite(l_arc.value().item()) || !std::isfinite(l_trip.value().item())) {
        throw std::domain_error("total_loss: non-finite component");
    }
    return add(l_arc, scale(l_trip, lambda));
}

TwinBatchSampler::TwinBatchSampler(const TwinManifest& manifest, SamplerConfig config)
    : config_(config), images_(manifest.images_by_identity()) {
    if (manifest.empty()) throw std::invalid_argument("sampler: empty manifest");
    if (config_.images_per_identity == 0 || config_.batch_size % (2 * config_.images_per_identity) != 0) {
        throw std::invalid_argument("sampler: batch size " + std::to_string(config_.batch_size) +
                                    " must be a multiple of 2 x images_per_identity");
    }
    if (!(config_.oversample_ratio >= 0.0)) throw std::invalid_argument("sampler: oversample ratio must be >= 0");
    families_ = manifest.twin_families();
    for (const auto& [id, idx] : images_) {
        const auto& t = manifest.entries()[idx.front()].twin_identity;
        if (!t || !images_.count(*t)) singles_.push_back(id);
    }
    // A unit without twins needs two distinct identities to act as each other's distractor.
    if (singles_.size() < 2) singles_.clear();
    if (families_.empty()) throw std::invalid_argument("sampler: manifest contains no twin pair");
}

std::vector<std::size_t> TwinBatchSampler::pick_images(const std::string& identity, std::mt19937_64& rng) const {
    std::vector<std::size_t> pool = images_.at(identity);
    std::vector<std::size_t> out;
    if (pool.size() >= config_.images_per_identity) {
        std::shuffle(pool.begin(), pool.end(), rng);
        out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config_.images_per_identity));
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        for (std::size_t k = 0; k < config_.images_per_identity; ++k) out.push_back(pool[pick(rng)]);
    }
    return out;
}

std::vector<BatchSample> TwinBatchSampler::sample(std::mt19937_64& rng) const {
    const std::size_t units = config_.batch_size / (2 * config_.images_per_identity);
    const double q = config_.oversample_ratio / (config_.oversample_ratio + 1.0);
    std::bernoulli_distribution twin_unit(q);
    std::vector<std::size_t> fam_order(families_.size());
    for (std::size_t i = 0; i < fam_order.size(); ++i) fam_order[i] = i;
    std::shuffle(fam_order.begin(), fam_order.end(), rng);
    std::vector<std::string> single_order = singles_;
    std::shuffle(single_order.begin(), single_order.end(), rng);
    std::size_t next_fam = 0, next_single = 0;

    std::vector<BatchSample> batch;
    for (std::size_t u = 0; u < units; ++u) {
        const bool use_family = singles_.empty() || twin_unit(rng);
        std::string a, b;
        if (use_family) {
            const auto& fam = families_[fam_order[next_fam++ % fam_order.size()]];
            a = fam.first;
            b = fam.second;
        } else {
            a = single_order[next_single++ % single_order.size()];
            b = single_order[next_single++ % single_order.size()];
            if (a == b) b = single_order[next_single++ % single_order.size()];
        }
        const auto ia = pick_images(a, rng);
        const auto ib = pick_images(b, rng);
        for (std::size_t k = 0; k < ia.size(); ++k) batch.push_back({ia[k], ib[k], a, use_family});
        for (std::size_t k = 0; k < ib.size(); ++k) batch.push_back({ib[k], ia[k], b, use_family});
    }
    return batch;
}

}  // namespace ahan
