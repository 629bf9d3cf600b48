#include "ahan/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ahan/image_io.hpp"

namespace ahan {

ImageSet load_images(const TwinManifest& manifest) {
    ImageSet out{manifest, {}};
    out.images.reserve(manifest.size());
    for (const auto& e : manifest.entries()) out.images.push_back(read_image(manifest.resolve(e)));
    return out;
}

ClassMap ClassMap::from_manifest(const TwinManifest& manifest) {
    ClassMap c;
    c.identities = manifest.identities();
    for (std::size_t i = 0; i < c.identities.size(); ++i) c.index[c.identities[i]] = i;
    for (const auto& [a, b] : manifest.twin_families()) {
        c.twin_of[c.index.at(a)] = c.index.at(b);
        c.twin_of[c.index.at(b)] = c.index.at(a);
    }
    return c;
}

namespace {

Tensor augmented(const Tensor& image, const AugmentConfig& aug, std::mt19937_64& rng) {
    if (aug.hflip_prob <= 0.0 && aug.brightness <= 0.0) return image;
    Tensor out = image;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (aug.hflip_prob > 0.0 && u(rng) < aug.hflip_prob) {
        const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
                for (std::size_t ch = 0; ch < c; ++ch) out[(y * w + x) * c + ch] = image[(y * w + (w - 1 - x)) * c + ch];
    }
    if (aug.brightness > 0.0) {
        const double shift = (2.0 * u(rng) - 1.0) * aug.brightness;
        for (auto& v : out.values()) v += shift;
    }
    return out;
}

std::size_t updates_for(std::size_t steps, std::size_t accum) { return (steps + accum - 1) / accum; }

}  // namespace

TrainingBatch make_training_batch(const std::vector<BatchSample>& samples, const ImageSet& data,
                                  const ClassMap& classes, const AugmentConfig& augment, std::mt19937_64& rng) {
    TrainingBatch batch;
    batch.twin_of = classes.twin_of;
    for (const auto& s : samples) {
        batch.images.push_back(augmented(data.images.at(s.image), augment, rng));
        batch.labels.push_back(classes.index.at(s.identity));
    }
    for (const auto& s : samples) {
        auto it = std::find_if(samples.begin(), samples.end(), [&](const BatchSample& o) { return o.image == s.distractor; });
        if (it == samples.end()) throw std::logic_error("make_training_batch: distractor image not in batch");
        batch.distractor.push_back(static_cast<std::size_t>(it - samples.begin()));
    }
    return batch;
}

TrainOutcome train_model(const LoadedConfig& config, const ImageSet& data, std::size_t steps, std::uint64_t seed,
                         const StepCallback& on_step) {
    const AhanConfig& ac = config.ahan;
    if (data.manifest.empty()) throw std::invalid_argument("train_model: no training images");
    if (steps == 0) steps = ac.train.steps;
    if (steps == 0) {
        const std::size_t per_epoch = (data.manifest.size() + ac.train.batch_size - 1) / ac.train.batch_size;
        steps = per_epoch * ac.train.epochs;
    }
    if (steps == 0) throw std::invalid_argument("train_model: train.steps and train.epochs are both zero");

    ClassMap classes = ClassMap::from_manifest(data.manifest);
    AhanWeights weights = AhanWeights::init(ac.model, ac.loss, classes.identities.size(), seed);
    TwinBatchSampler sampler(data.manifest,
                             SamplerConfig{ac.train.batch_size, ac.train.images_per_identity, ac.loss.oversample_ratio});

    OptimConfig optim = ac.optim;
    if (optim.schedule_unit == "epoch" && optim.schedule_horizon > 0) {
        const double per_epoch = std::ceil(static_cast<double>(data.manifest.size()) /
                                           static_cast<double>(ac.train.batch_size * optim.accum_steps));
        optim.schedule_horizon = static_cast<std::size_t>(per_epoch) * optim.schedule_horizon;
    }
    OptimizerState opt(optim, weights, updates_for(steps, optim.accum_steps));

    std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
    std::mt19937_64 gate_rng(ac.model.tapwca.rng_seed ^ seed);
    TrainOutcome out{weights, classes, {}};
    for (std::size_t step = 1; step <= steps; ++step) {
        TrainingBatch batch = make_training_batch(sampler.sample(rng), data, classes, ac.train.augment, rng);
        StepResult r = train_step(batch, out.weights, ac, opt, gate_rng);
        out.steps.push_back(r);
        if (on_step) on_step(step, r);
    }
    return out;
}

std::vector<Tensor> embed_images(const AhanWeights& weights, const ModelConfig& config,
                                 const std::vector<Tensor>& images) {
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(ahan_forward(img, weights, config).value());
    return out;
}

metrics::ScoreSet score_scenario(const ImageSet& data, const std::vector<Tensor>& embeddings,
                                 metrics::Scenario scenario, std::uint64_t seed, std::size_t max_pairs) {
    std::mt19937_64 rng(seed);
    auto pairs = metrics::build_pairs(data.manifest, scenario, rng, max_pairs);
    if (scenario == metrics::Scenario::hard_twin) {
        auto pos = metrics::twin_family_positives(data.manifest, rng, max_pairs);
        pairs.insert(pairs.begin(), pos.begin(), pos.end());
    }
    metrics::ScoreSet scores;
    scores.reserve(pairs.size());
    for (const auto& p : pairs) scores.push_back({verify(embeddings.at(p.a), embeddings.at(p.b)), p.same});
    return scores;
}

metrics::MetricReport evaluate(const AhanWeights& weights, const ModelConfig& config, const ImageSet& data,
                               metrics::Scenario scenario, std::uint64_t seed, std::size_t max_pairs) {
    const auto embeddings = embed_images(weights, config, data.images);
    return metrics::summarize(std::string(metrics::to_string(scenario)),
                              score_scenario(data, embeddings, scenario, seed, max_pairs));
}

}  // namespace ahan
