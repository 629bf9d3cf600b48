#include "ahan/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ahan {

double grad_rel_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

struct FixedBatch {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> distractor;
    std::map<std::size_t, std::size_t> twin_of;
};

// Identities 0/1 and 2/3 are twins; each contributes images_per_identity images.
FixedBatch random_batch(const AhanConfig& config, std::mt19937_64& rng) {
    const ModelConfig& m = config.model;
    const std::size_t ipi = config.train.images_per_identity;
    FixedBatch b;
    b.twin_of = {{0, 1}, {1, 0}, {2, 3}, {3, 2}};
    for (std::size_t id = 0; id < 4; ++id)
        for (std::size_t k = 0; k < ipi; ++k) {
            b.images.push_back(Tensor::uniform({m.image_size, m.image_size, m.channels}, rng, 0.0, 1.0));
            b.labels.push_back(id);
            b.distractor.push_back((id ^ 1) * ipi + k);
        }
    return b;
}

Var batch_loss(const FixedBatch& b, const AhanWeights& w, const AhanConfig& config) {
    const ModelConfig& m = config.model;
    std::vector<Var> rows;
    for (std::size_t i = 0; i < b.images.size(); ++i) {
        ForwardOptions opts;
        opts.mode = Mode::train;
        opts.twin_image = &b.images[b.distractor[i]];
        opts.gate_open = true;
        rows.push_back(reshape(ahan_forward(b.images[i], w, m, opts), {1, m.embedding_width()}));
    }
    IdentityBatch ib{concat(rows, 0), b.labels, b.twin_of};
    return total_loss(arcface_loss(ib, w.head), twin_triplet_loss(ib, config.loss.triplet_margin), config.loss.lambda);
}

}  // namespace

GradcheckReport end_to_end_gradcheck(const AhanConfig& config, std::uint64_t seed, std::size_t n_samples, double eps,
                                     double floor) {
    config.validate();
    std::mt19937_64 rng(seed);
    const FixedBatch batch = random_batch(config, rng);
    AhanWeights w = AhanWeights::init(config.model, config.loss, 4, seed);
    auto params = w.named_parameters();

    w.zero_grad();
    backward(batch_loss(batch, w, config));

    GradcheckReport report;
    std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
    for (std::size_t s = 0; s < n_samples; ++s) {
        auto& [name, var] = params[pick_param(rng)];
        std::uniform_int_distribution<std::size_t> pick_index(0, var.size() - 1);
        const std::size_t idx = pick_index(rng);
        const double analytic = var.grad()[idx];
        Tensor& value = var.mutable_value();
        const double orig = value[idx];
        value[idx] = orig + eps;
        const double up = batch_loss(batch, w, config).value().item();
        value[idx] = orig - eps;
        const double down = batch_loss(batch, w, config).value().item();
        value[idx] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        GradcheckSample g{name, idx, analytic, numeric, grad_rel_error(analytic, numeric, floor)};
        report.max_rel_error = std::max(report.max_rel_error, g.rel_error);
        report.samples.push_back(std::move(g));
    }
    return report;
}

}  // namespace ahan
