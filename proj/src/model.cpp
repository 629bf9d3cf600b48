#include "ahan/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ahan {

std::vector<RegionSpec> ModelConfig::region_specs() const {
    const GridShape g = grid();
    if (regions.empty()) return default_regions(g);
    std::vector<RegionSpec> out;
    for (const auto& r : regions) out.push_back(RegionSpec::from_rects(r.name, r.rects, g));
    return out;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& key, const std::string& why) {
        throw std::invalid_argument("model." + key + ": " + why);
    };
    if (image_size == 0) fail("image_size", "must be positive");
    if (channels == 0) fail("channels", "must be positive");
    if (patch == 0 || image_size % patch != 0) {
        fail("patch", "image_size " + std::to_string(image_size) + " must be divisible by patch " +
                          std::to_string(patch));
    }
    if (grid().cols % 2 != 0) {
        fail("patch", "patch grid width " + std::to_string(grid().cols) +
                          " must be even so the asymmetry module can split the face into halves");
    }
    if (width == 0 || heads == 0 || width % heads != 0) {
        fail("heads", "width " + std::to_string(width) + " must be divisible by heads " + std::to_string(heads));
    }
    if (depth == 0) fail("depth", "must be positive");
    if (mlp_ratio == 0) fail("mlp_ratio", "must be positive");
    if (scales.empty()) fail("scales", "at least one scale is required");
    std::set<std::size_t> seen;
    for (auto s : scales) {
        if (s == 0) fail("scales", "scales must be positive");
        if (!seen.insert(s).second) fail("scales", "duplicate scale " + std::to_string(s));
    }
    if (!regions.empty()) {
        if (regions.size() != kRegionNames.size()) fail("regions", "exactly 4 regions (eyes, nose, mouth, jaw) required");
        for (std::size_t k = 0; k < regions.size(); ++k) {
            if (regions[k].name != kRegionNames[k]) {
                fail("regions", "region " + std::to_string(k) + " must be '" + std::string(kRegionNames[k]) + "'");
            }
        }
    }
    try {
        (void)region_specs();
    } catch (const std::exception& e) {
        fail("regions", e.what());
    }
    try {
        tapwca.validate(depth);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("tapwca: ") + e.what());
    }
    if (!(init_std > 0.0)) fail("init_std", "must be positive");
    if (!(pixel_std > 0.0)) fail("pixel_std", "must be positive");
}

void AhanConfig::validate() const {
    model.validate();
    auto fail = [](const std::string& key, const std::string& why) { throw std::invalid_argument(key + ": " + why); };
    if (!(loss.lambda >= 0.0)) fail("loss.lambda", "must be >= 0");
    if (!(loss.triplet_margin >= 0.0)) fail("loss.triplet_margin", "must be >= 0");
    if (!(loss.arc_margin >= 0.0 && loss.arc_margin < std::numbers::pi)) fail("loss.arc_margin", "must lie in [0, pi)");
    if (!(loss.arc_scale > 0.0)) fail("loss.arc_scale", "must be positive");
    if (!(loss.oversample_ratio >= 0.0)) fail("loss.oversample_ratio", "must be >= 0");
    if (!(optim.lr >= 0.0)) fail("optim.lr", "must be >= 0");
    if (!(optim.weight_decay >= 0.0)) fail("optim.weight_decay", "must be >= 0");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0)) fail("optim.beta1", "must lie in [0, 1)");
    if (!(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) fail("optim.beta2", "must lie in [0, 1)");
    if (!(optim.eps > 0.0)) fail("optim.eps", "must be positive");
    if (optim.accum_steps == 0) fail("optim.accum_steps", "must be positive");
    if (optim.schedule_unit != "update" && optim.schedule_unit != "epoch") {
        fail("optim.schedule_unit", "must be 'update' or 'epoch'");
    }
    if (train.images_per_identity < 2) {
        fail("train.images_per_identity", "at least 2 so every anchor has an in-batch positive");
    }
    if (train.batch_size == 0 || train.batch_size % (2 * train.images_per_identity) != 0) {
        fail("train.batch_size", "must be a positive multiple of 2 x images_per_identity");
    }
    if (!(train.augment.hflip_prob >= 0.0 && train.augment.hflip_prob <= 1.0)) {
        fail("train.augment.hflip_prob", "must lie in [0, 1]");
    }
    if (!(train.augment.brightness >= 0.0)) fail("train.augment.brightness", "must be >= 0");
}

AhanWeights AhanWeights::init(const ModelConfig& model, const LossConfig& loss, std::size_t num_classes,
                              std::uint64_t seed) {
    if (num_classes == 0) throw std::invalid_argument("AhanWeights::init: need at least one class");
    std::mt19937_64 rng(seed);
    const double sd = model.init_std;
    const std::size_t d = model.width;
    AhanWeights w;
    w.embed = EmbedParams::init(model.patch_values(), model.grid().count(), d, rng, sd);
    for (std::size_t l = 0; l < model.depth; ++l) w.blocks.push_back(BlockParams::init(d, model.heads, model.mlp_ratio, rng, sd));
    w.final_gamma = Var::parameter(Tensor::ones({1, d}));
    w.final_beta = Var::parameter(Tensor::zeros({1, d}));
    w.hca = HcaParams::init(d, kRegionNames.size(), model.scales.size(), rng, sd);
    w.faam = FaamParams::init(d, rng, sd);
    w.head = ArcHead::init(model.embedding_width(), num_classes, loss.arc_margin, loss.arc_scale, rng, sd);
    return w;
}

std::vector<std::pair<std::string, Var>> AhanWeights::named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    out.emplace_back("embed.projection", embed.projection);
    out.emplace_back("embed.cls_token", embed.cls_token);
    out.emplace_back("embed.pos_embed", embed.pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        const std::string p = "block" + std::to_string(l + 1) + ".";
        const auto& b = blocks[l];
        for (std::size_t h = 0; h < b.attn.heads(); ++h) {
            const std::string hp = p + "attn.head" + std::to_string(h) + ".";
            out.emplace_back(hp + "wq", b.attn.wq[h]);
            out.emplace_back(hp + "wk", b.attn.wk[h]);
            out.emplace_back(hp + "wv", b.attn.wv[h]);
        }
        out.emplace_back(p + "attn.wo", b.attn.wo);
        out.emplace_back(p + "ln1.gamma", b.ln1_gamma);
        out.emplace_back(p + "ln1.beta", b.ln1_beta);
        out.emplace_back(p + "ln2.gamma", b.ln2_gamma);
        out.emplace_back(p + "ln2.beta", b.ln2_beta);
        out.emplace_back(p + "ff.w1", b.ff_w1);
        out.emplace_back(p + "ff.b1", b.ff_b1);
        out.emplace_back(p + "ff.w2", b.ff_w2);
        out.emplace_back(p + "ff.b2", b.ff_b2);
    }
    out.emplace_back("final_norm.gamma", final_gamma);
    out.emplace_back("final_norm.beta", final_beta);
    for (std::size_t k = 0; k < hca.regions(); ++k)
        for (std::size_t s = 0; s < hca.scales(); ++s) {
            const std::string p = "hca." + std::string(kRegionNames[k % kRegionNames.size()]) + ".scale" +
                                  std::to_string(s) + ".";
            out.emplace_back(p + "wq", hca.proj[k][s].wq);
            out.emplace_back(p + "wk", hca.proj[k][s].wk);
            out.emplace_back(p + "wv", hca.proj[k][s].wv);
        }
    out.emplace_back("hca.scale_logits", hca.scale_logits);
    out.emplace_back("faam.wq", faam.wq);
    out.emplace_back("faam.wk", faam.wk);
    out.emplace_back("faam.wv", faam.wv);
    out.emplace_back("arc_head.weights", head.weights);
    return out;
}

void AhanWeights::zero_grad() const {
    for (const auto& [name, v] : named_parameters()) {
        Var copy = v;
        copy.zero_grad();
    }
}

namespace {
void check_image(const Tensor& image, const ModelConfig& config) {
    const Shape expect{config.image_size, config.image_size, config.channels};
    if (image.shape() != expect) {
        throw DimensionError("image " + shape_str(image.shape()) + " does not match configured " + shape_str(expect));
    }
}

Tensor normalize_pixels(const Tensor& image, const ModelConfig& config) {
    Tensor out = image;
    for (auto& v : out.values()) v = (v - config.pixel_mean) / config.pixel_std;
    return out;
}
}  // namespace

std::vector<TokenSeq> plain_block_inputs(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                                         std::size_t upto) {
    check_image(image, config);
    if (upto > weights.blocks.size()) throw std::out_of_range("plain_block_inputs: beyond model depth");
    std::vector<TokenSeq> states;
    if (upto == 0) return states;
    states.push_back(embed(patchify(normalize_pixels(image, config), config.patch), weights.embed, config.grid()));
    for (std::size_t l = 1; l < upto; ++l) states.push_back(transformer_block(states.back(), weights.blocks[l - 1]));
    return states;
}

StreamFeatures ahan_streams(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                            const ForwardOptions& options) {
    check_image(image, config);
    const TapwcaConfig& ta = config.tapwca;
    const bool training_with_twin = options.mode == Mode::train && ta.enabled;
    if (training_with_twin && options.twin_image == nullptr && options.twin_states == nullptr) {
        throw std::invalid_argument("ahan_forward: training with twin distraction enabled requires a twin image");
    }
    const std::vector<TokenSeq>* twin_states = nullptr;
    std::vector<TokenSeq> local;
    if (training_with_twin && options.gate_open) {
        twin_states = options.twin_states;
        if (twin_states == nullptr) {
            local = plain_block_inputs(*options.twin_image, weights, config, ta.last_layer);
            twin_states = &local;
        }
    }

    TokenSeq x = embed(patchify(normalize_pixels(image, config), config.patch), weights.embed, config.grid());
    for (std::size_t l = 1; l <= weights.blocks.size(); ++l) {
        const TokenSeq* twin = (twin_states && l <= twin_states->size()) ? &(*twin_states)[l - 1] : nullptr;
        x = gated_layer_forward(l, x, twin, weights.blocks[l - 1], ta, options.mode, options.gate_open,
                                options.recorder);
    }
    TokenSeq normed{layer_norm(x.tokens, weights.final_gamma, weights.final_beta), x.grid, true};

    const std::size_t d = config.width;
    StreamFeatures f;
    f.global = reshape(normed.cls_token(), {d});
    const auto regions = config.region_specs();
    f.hca = hca_forward(normed, regions, config.scales, weights.hca, options.recorder);
    f.asym = faam_forward(normed, weights.faam, options.recorder);
    f.fused = concat({f.global, f.hca, f.asym}, 0);
    return f;
}

Var ahan_forward(const Tensor& image, const AhanWeights& weights, const ModelConfig& config,
                 const ForwardOptions& options) {
    return ahan_streams(image, weights, config, options).fused;
}

double verify(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) {
        throw DimensionError("verify: embeddings " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("verify: zero embedding");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_lr(double base_lr, double t, double horizon) {
    if (horizon <= 0.0) return base_lr;
    const double frac = std::clamp(t / horizon, 0.0, 1.0);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

AdamW::AdamW(const OptimConfig& config, std::vector<Var> params) : config_(config), params_(std::move(params)) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

void AdamW::step(double lr, double grad_divisor) {
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor g = params_[i].grad();
        Tensor& w = params_[i].mutable_value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] / grad_divisor;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * w[j]);
        }
    }
}

namespace {
std::vector<Var> parameter_list(const AhanWeights& weights) {
    std::vector<Var> out;
    for (auto& [name, v] : weights.named_parameters()) out.push_back(v);
    return out;
}
}  // namespace

OptimizerState::OptimizerState(const OptimConfig& config, const AhanWeights& weights, std::size_t total_updates)
    : adam(config, parameter_list(weights)),
      horizon(std::max<std::size_t>(1, config.schedule_horizon ? config.schedule_horizon : total_updates)),
      base_lr(config.lr),
      accum_steps(config.accum_steps) {}

double OptimizerState::current_lr() const {
    return cosine_lr(base_lr, static_cast<double>(adam.updates()), static_cast<double>(horizon));
}

StepResult train_step(const TrainingBatch& batch, AhanWeights& weights, const AhanConfig& config,
                      OptimizerState& optimizer, std::mt19937_64& rng) {
    const std::size_t b = batch.images.size();
    if (b == 0 || batch.labels.size() != b || batch.distractor.size() != b) {
        throw std::invalid_argument("train_step: inconsistent batch");
    }
    const ModelConfig& mc = config.model;
    StepResult result;
    result.gated = mc.tapwca.enabled && draw_gate(mc.tapwca, rng);

    std::map<std::size_t, std::vector<TokenSeq>> twin_cache;
    std::vector<Var> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = batch.distractor[i];
        if (j >= b) throw std::out_of_range("train_step: distractor index outside batch");
        ForwardOptions opts;
        opts.mode = Mode::train;
        opts.twin_image = &batch.images[j];
        opts.gate_open = result.gated;
        if (result.gated) {
            auto it = twin_cache.find(j);
            if (it == twin_cache.end())
                it = twin_cache.emplace(j, plain_block_inputs(batch.images[j], weights, mc, mc.tapwca.last_layer)).first;
            opts.twin_states = &it->second;
        }
        rows.push_back(reshape(ahan_forward(batch.images[i], weights, mc, opts), {1, mc.embedding_width()}));
    }
    IdentityBatch ib{concat(rows, 0), batch.labels, batch.twin_of};
    Var l_arc = arcface_loss(ib, weights.head);
    Var l_trip = twin_triplet_loss(ib, config.loss.triplet_margin);
    result.arc = l_arc.value().item();
    result.triplet = l_trip.value().item();
    if (!std::isfinite(result.arc)) throw std::runtime_error("train_step: ArcFace loss is not finite");
    if (!std::isfinite(result.triplet)) throw std::runtime_error("train_step: triplet loss is not finite");
    Var total = total_loss(l_arc, l_trip, config.loss.lambda);
    result.total = total.value().item();
    if (!std::isfinite(result.total)) throw std::runtime_error("train_step: total loss is not finite");

    backward(total);
    result.lr = optimizer.current_lr();
    if (++optimizer.accumulated == optimizer.accum_steps) {
        optimizer.adam.step(result.lr, static_cast<double>(optimizer.accum_steps));
        optimizer.accumulated = 0;
        weights.zero_grad();
        result.updated = true;
    }
    return result;
}

std::uint64_t config_digest(const ModelConfig& config) {
    std::ostringstream os;
    os << "image_size=" << config.image_size << ";channels=" << config.channels << ";patch=" << config.patch
       << ";width=" << config.width << ";heads=" << config.heads << ";depth=" << config.depth
       << ";mlp_ratio=" << config.mlp_ratio << ";scales=";
    for (auto s : config.scales) os << s << ',';
    for (const auto& r : config.region_specs()) {
        os << ";" << r.name << "=";
        for (auto i : r.patch_indices) os << i << ',';
    }
    // FNV-1a, 64 bit
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : os.str()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {
constexpr std::array<char, 8> kMagic = {'A', 'H', 'A', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& in) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) throw std::runtime_error("checkpoint truncated");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return static_cast<T>(v);
}

void put_double(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
double get_double(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AhanWeights& weights, const ModelConfig& config) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kVersion);
    put_le<std::uint64_t>(out, config_digest(config));
    const auto params = weights.named_parameters();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, v] : params) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Tensor& t = v.value();
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto dim : t.shape()) put_le<std::uint64_t>(out, dim);
        for (double x : t.values()) put_double(out, x);
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

AhanWeights load_checkpoint(const std::filesystem::path& path, const ModelConfig& model, const LossConfig& loss) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const auto digest = get_le<std::uint64_t>(in);
    if (digest != config_digest(model)) {
        throw std::runtime_error("checkpoint " + path.string() + " was written for a different model configuration");
    }
    const auto count = get_le<std::uint32_t>(in);
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = get_le<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        const auto rank = get_le<std::uint32_t>(in);
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(in)));
        std::vector<double> data(shape_numel(shape));
        for (auto& x : data) x = get_double(in);
        if (!in) throw std::runtime_error("checkpoint truncated");
        tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    auto head = tensors.find("arc_head.weights");
    if (head == tensors.end() || head->second.rank() != 2) throw std::runtime_error("checkpoint lacks arc_head.weights");
    AhanWeights w = AhanWeights::init(model, loss, head->second.dim(1), 0);
    auto named = w.named_parameters();
    if (named.size() != tensors.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                                 std::to_string(named.size()));
    }
    for (auto& [name, v] : named) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + name);
        if (it->second.shape() != v.shape()) {
            throw std::runtime_error("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape()) +
                                     ", expected " + shape_str(v.shape()));
        }
        v.mutable_value() = it->second;
    }
    return w;
}

}  // namespace ahan
