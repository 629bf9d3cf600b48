#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ahan/config.hpp"
#include "ahan/metrics.hpp"
#include "ahan/model.hpp"

namespace ahan {

/// A manifest with its images decoded, aligned with manifest entries.
struct ImageSet {
    TwinManifest manifest;
    std::vector<Tensor> images;
};

ImageSet load_images(const TwinManifest& manifest);

/// Class index per identity, in sorted identity order.
struct ClassMap {
    std::vector<std::string> identities;
    std::map<std::string, std::size_t> index;
    std::map<std::size_t, std::size_t> twin_of;

    static ClassMap from_manifest(const TwinManifest& manifest);
};

/// Sampled batch made ready for train_step, with optional flip/brightness augmentation.
TrainingBatch make_training_batch(const std::vector<BatchSample>& samples, const ImageSet& data,
                                  const ClassMap& classes, const AugmentConfig& augment, std::mt19937_64& rng);

struct TrainOutcome {
    AhanWeights weights;
    ClassMap classes;
    std::vector<StepResult> steps;
};

using StepCallback = std::function<void(std::size_t step, const StepResult&)>;

/// Trains from scratch on `data` (normally the train split). steps = 0 uses config.train.steps.
TrainOutcome train_model(const LoadedConfig& config, const ImageSet& data, std::size_t steps, std::uint64_t seed,
                         const StepCallback& on_step = {});

/// Inference embeddings for every image.
std::vector<Tensor> embed_images(const AhanWeights& weights, const ModelConfig& config,
                                 const std::vector<Tensor>& images);

/// Scenario pairs scored by cosine similarity. hard_twin pools cross-twin negatives with
/// same-person positives from the same families.
metrics::ScoreSet score_scenario(const ImageSet& data, const std::vector<Tensor>& embeddings,
                                 metrics::Scenario scenario, std::uint64_t seed, std::size_t max_pairs);

metrics::MetricReport evaluate(const AhanWeights& weights, const ModelConfig& config, const ImageSet& data,
                               metrics::Scenario scenario, std::uint64_t seed, std::size_t max_pairs);

}  // namespace ahan
