#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ahan/autograd.hpp"
#include "ahan/manifest.hpp"

namespace ahan {

/// Embeddings with class labels and the (symmetric) twin relation between labels.
struct IdentityBatch {
    Var embeddings;  // B x D
    std::vector<std::size_t> labels;
    std::map<std::size_t, std::size_t> twin_of;

    void validate() const;
};

struct ArcHead {
    Var weights;  // D x classes
    double margin = 0.5;
    double scale = 64.0;

    static ArcHead init(std::size_t embedding_width, std::size_t classes, double margin, double scale,
                        std::mt19937_64& rng, double stddev = 0.02);
    std::size_t classes() const { return weights.shape()[1]; }
};

/// Additive angular margin softmax loss on L2-normalized embeddings and class columns.
Var arcface_loss(const IdentityBatch& batch, const ArcHead& head);

struct TripletChoice {
    std::size_t anchor = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;
    bool twin_negative = false;
};

/// Batch-hard mining on cosine distance. Anchors without an in-batch positive are skipped.
/// The negative is the hardest twin sample when the twin is present, else the hardest other identity.
std::vector<TripletChoice> mine_triplets(const Tensor& embeddings, const std::vector<std::size_t>& labels,
                                         const std::map<std::size_t, std::size_t>& twin_of);

/// Mean over mined anchors of max(0, d(a,p) - d(a,n) + margin) with d = 1 - cos.
Var twin_triplet_loss(const IdentityBatch& batch, double margin);

/// l_arc + lambda * l_trip.
Var total_loss(const Var& l_arc, const Var& l_trip, double lambda);

struct SamplerConfig {
    std::size_t batch_size = 8;
    std::size_t images_per_identity = 2;
    double oversample_ratio = 3.0;  // twin-paired : unpaired anchors
};

struct BatchSample {
    std::size_t image = 0;       // manifest entry index
    std::size_t distractor = 0;  // twin image (or unrelated image for identities without a twin)
    std::string identity;
    bool twin_paired = false;  // the identity's twin also contributes images to this batch
};

/// Draws identity-balanced batches with twin families oversampled.
class TwinBatchSampler {
  public:
    TwinBatchSampler(const TwinManifest& manifest, SamplerConfig config);

    std::vector<BatchSample> sample(std::mt19937_64& rng) const;
    const SamplerConfig& config() const { return config_; }

  private:
    std::vector<std::size_t> pick_images(const std::string& identity, std::mt19937_64& rng) const;

    SamplerConfig config_;
    std::map<std::string, std::vector<std::size_t>> images_;
    std::vector<std::pair<std::string, std::string>> families_;
    std::vector<std::string> singles_;
};

}  // namespace ahan
