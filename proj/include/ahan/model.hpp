#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ahan/attention.hpp"
#include "ahan/faam.hpp"
#include "ahan/hca.hpp"
#include "ahan/losses.hpp"
#include "ahan/tapwca.hpp"
#include "ahan/token_embed.hpp"

namespace ahan {

struct NamedRegion {
    std::string name;
    std::vector<RegionRect> rects;
};

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t channels = 1;
    std::size_t patch = 8;
    std::size_t width = 32;
    std::size_t heads = 4;
    std::size_t depth = 6;
    std::size_t mlp_ratio = 4;
    std::vector<std::size_t> scales{1, 2};
    std::vector<NamedRegion> regions;  // empty: default rectangles for the grid
    TapwcaConfig tapwca{true, 0.5, 3, 5, 0};
    double init_std = 0.02;
    double pixel_mean = 0.5;  // pixels enter the model as (v - mean) / std
    double pixel_std = 0.5;

    GridShape grid() const { return {image_size / patch, image_size / patch}; }
    std::size_t patch_values() const { return patch * patch * channels; }
    /// global (d) + HCA (4d) + asymmetry (d).
    std::size_t embedding_width() const { return 6 * width; }
    std::vector<RegionSpec> region_specs() const;
    /// Throws std::invalid_argument naming the violated constraint.
    void validate() const;
};

struct LossConfig {
    double lambda = 0.1;
    double triplet_margin = 0.5;
    double arc_margin = 0.5;
    double arc_scale = 64.0;
    double oversample_ratio = 3.0;
};

struct OptimConfig {
    double lr = 1e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t accum_steps = 4;
    /// Cosine annealing horizon in schedule units; 0 means the length of the run.
    std::size_t schedule_horizon = 0;
    std::string schedule_unit = "update";  // "update" or "epoch"
};

struct AugmentConfig {
    double hflip_prob = 0.0;
    double brightness = 0.0;  // uniform additive jitter in [-b, b]
    double contrast = 0.0;    // accepted, not applied at desk scale
    double saturation = 0.0;  // accepted, not applied at desk scale
    double rotation_deg = 0.0;  // accepted, not applied at desk scale
};

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t images_per_identity = 2;
    std::size_t steps = 200;
    std::size_t epochs = 0;  // used when steps is 0
    AugmentConfig augment;
};

struct AhanConfig {
    std::string profile = "desk";
    ModelConfig model;
    LossConfig loss;
    OptimConfig optim;
    TrainConfig train;

    void validate() const;
};

struct AhanWeights {
    EmbedParams embed;
    std::vector<BlockParams> blocks;
    Var final_gamma, final_beta;
    HcaParams hca;
    FaamParams faam;
    ArcHead head;

    static AhanWeights init(const ModelConfig& model, const LossConfig& loss, std::size_t num_classes,
                            std::uint64_t seed);
    /// Stable names; the order is the optimizer and checkpoint order.
    std::vector<std::pair<std::string, Var>> named_parameters() const;
    void zero_grad() const;
};

struct ForwardOptions {
    Mode mode = Mode::infer;
    const Tensor* twin_image = nullptr;
    /// Block inputs of the twin's plain forward (index l-1 feeds block l); computed from twin_image when absent.
    const std::vector<TokenSeq>* twin_states = nullptr;
    bool gate_open = false;
    AttentionRecorder* recorder = nullptr;
};

struct StreamFeatures {
    Var global;  // [d]
    Var hca;     // [4d]
    Var asym;    // [d]
    Var fused;   // [6d]
};

/// Block inputs of a plain (undistracted) forward for blocks 1..upto.
std::vector<TokenSeq> plain_block_inputs(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                                         std::size_t upto);

StreamFeatures ahan_streams(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                            const ForwardOptions& options = {});
/// f_final = [f_global; f_HCA; f_asym].
Var ahan_forward(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                 const ForwardOptions& options = {});

/// Cosine similarity of two embeddings.
double verify(const Tensor& a, const Tensor& b);

double cosine_lr(double base_lr, double t, double horizon);

/// Adam with decoupled weight decay, over a fixed parameter list.
class AdamW {
  public:
    AdamW(const OptimConfig& config, std::vector<Var> params);
    /// One update using gradients divided by grad_divisor.
    void step(double lr, double grad_divisor = 1.0);
    std::size_t updates() const { return t_; }

  private:
    OptimConfig config_;
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

/// Optimizer plus the gradient-accumulation counter and schedule bookkeeping.
struct OptimizerState {
    AdamW adam;
    std::size_t accumulated = 0;
    std::size_t horizon = 1;  // schedule length in updates
    double base_lr = 1e-4;
    std::size_t accum_steps = 1;

    OptimizerState(const OptimConfig& config, const AhanWeights& weights, std::size_t total_updates);
    double current_lr() const;
};

/// Images and labels for one step; distractor[i] indexes the twin image paired with images[i].
struct TrainingBatch {
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    std::vector<std::size_t> distractor;
    std::map<std::size_t, std::size_t> twin_of;
};

struct StepResult {
    double arc = 0.0;
    double triplet = 0.0;
    double total = 0.0;
    double lr = 0.0;
    bool gated = false;
    bool updated = false;
};

/// Forward (train mode) -> total loss -> backward; applies an update every accum_steps calls.
StepResult train_step(const TrainingBatch& batch, AhanWeights& weights, const AhanConfig& config,
                      OptimizerState& optimizer, std::mt19937_64& rng);

/// Digest of the architecture fields that determine parameter shapes.
std::uint64_t config_digest(const ModelConfig& config);

/// Little-endian: "AHANCKPT", u32 version, u64 digest, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, u64 dims, f64 values.
void save_checkpoint(const std::filesystem::path& path, const AhanWeights& weights, const ModelConfig& config);
AhanWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const LossConfig& loss);

}  // namespace ahan
