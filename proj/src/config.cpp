#include "ahan/config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ahan {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
}

void only_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fail(path.empty() ? key : path + "." + key, "unknown key");
    }
}

std::string join(const std::string& path, const char* key) { return path.empty() ? key : path + "." + key; }

template <typename T>
void read(const json& obj, const std::string& path, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (!it->is_number_integer() || it->template get<long long>() < 0) {
                fail(join(path, key), "expected a non-negative integer");
            }
        }
        out = it->template get<T>();
    } catch (const json::exception& e) {
        fail(join(path, key), e.what());
    }
}

json section(const json& root, const char* key) {
    auto it = root.find(key);
    return it == root.end() ? json::object() : *it;
}

void read_regions(const json& arr, ModelConfig& m) {
    const std::string path = "model.regions";
    if (!arr.is_array()) fail(path, "expected an array of {name, rects}");
    m.regions.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = path + "[" + std::to_string(i) + "]";
        only_keys(arr[i], p, {"name", "rects"});
        NamedRegion r;
        read(arr[i], p, "name", r.name);
        auto rects = arr[i].find("rects");
        if (rects == arr[i].end() || !rects->is_array() || rects->empty()) {
            fail(p + ".rects", "expected a nonempty array of [row0, col0, row1, col1]");
        }
        for (const auto& rect : *rects) {
            if (!rect.is_array() || rect.size() != 4) fail(p + ".rects", "each rectangle is [row0, col0, row1, col1]");
            try {
                r.rects.push_back({rect[0].get<std::size_t>(), rect[1].get<std::size_t>(), rect[2].get<std::size_t>(),
                                   rect[3].get<std::size_t>()});
            } catch (const json::exception& e) {
                fail(p + ".rects", e.what());
            }
        }
        m.regions.push_back(std::move(r));
    }
}

void read_model(const json& j, ModelConfig& m) {
    const std::string p = "model";
    only_keys(j, p, {"image_size", "channels", "patch", "width", "heads", "depth", "mlp_ratio", "scales", "regions",
                     "tapwca", "init_std", "pixel_mean", "pixel_std"});
    read(j, p, "image_size", m.image_size);
    read(j, p, "channels", m.channels);
    read(j, p, "patch", m.patch);
    read(j, p, "width", m.width);
    read(j, p, "heads", m.heads);
    read(j, p, "depth", m.depth);
    read(j, p, "mlp_ratio", m.mlp_ratio);
    read(j, p, "scales", m.scales);
    read(j, p, "init_std", m.init_std);
    read(j, p, "pixel_mean", m.pixel_mean);
    read(j, p, "pixel_std", m.pixel_std);
    if (auto it = j.find("regions"); it != j.end()) read_regions(*it, m);
    if (auto it = j.find("tapwca"); it != j.end()) {
        const std::string tp = "model.tapwca";
        only_keys(*it, tp, {"enabled", "probability", "layer_range", "seed"});
        read(*it, tp, "enabled", m.tapwca.enabled);
        read(*it, tp, "probability", m.tapwca.probability);
        read(*it, tp, "seed", m.tapwca.rng_seed);
        if (auto lr = it->find("layer_range"); lr != it->end()) {
            if (!lr->is_array() || lr->size() != 2) fail(tp + ".layer_range", "expected [first, last]");
            try {
                m.tapwca.first_layer = (*lr)[0].get<std::size_t>();
                m.tapwca.last_layer = (*lr)[1].get<std::size_t>();
            } catch (const json::exception& e) {
                fail(tp + ".layer_range", e.what());
            }
        }
    }
}

void read_loss(const json& j, LossConfig& l) {
    const std::string p = "loss";
    only_keys(j, p, {"lambda", "triplet_margin", "arc_margin", "arc_scale", "oversample_ratio"});
    read(j, p, "lambda", l.lambda);
    read(j, p, "triplet_margin", l.triplet_margin);
    read(j, p, "arc_margin", l.arc_margin);
    read(j, p, "arc_scale", l.arc_scale);
    read(j, p, "oversample_ratio", l.oversample_ratio);
}

void read_optim(const json& j, OptimConfig& o) {
    const std::string p = "optim";
    only_keys(j, p, {"lr", "weight_decay", "beta1", "beta2", "eps", "accum_steps", "schedule_horizon",
                     "schedule_unit"});
    read(j, p, "lr", o.lr);
    read(j, p, "weight_decay", o.weight_decay);
    read(j, p, "beta1", o.beta1);
    read(j, p, "beta2", o.beta2);
    read(j, p, "eps", o.eps);
    read(j, p, "accum_steps", o.accum_steps);
    read(j, p, "schedule_horizon", o.schedule_horizon);
    read(j, p, "schedule_unit", o.schedule_unit);
}

void read_train(const json& j, TrainConfig& t) {
    const std::string p = "train";
    only_keys(j, p, {"batch_size", "images_per_identity", "steps", "epochs", "augment"});
    read(j, p, "batch_size", t.batch_size);
    read(j, p, "images_per_identity", t.images_per_identity);
    read(j, p, "steps", t.steps);
    read(j, p, "epochs", t.epochs);
    if (auto it = j.find("augment"); it != j.end()) {
        const std::string ap = "train.augment";
        only_keys(*it, ap, {"hflip_prob", "brightness", "contrast", "saturation", "rotation_deg"});
        read(*it, ap, "hflip_prob", t.augment.hflip_prob);
        read(*it, ap, "brightness", t.augment.brightness);
        read(*it, ap, "contrast", t.augment.contrast);
        read(*it, ap, "saturation", t.augment.saturation);
        read(*it, ap, "rotation_deg", t.augment.rotation_deg);
    }
}

void read_synth(const json& j, SynthConfig& s) {
    const std::string p = "synth";
    only_keys(j, p, {"n_families", "n_singletons", "images_per_identity", "test_images_per_identity", "image_size",
                     "channels", "base_frequencies", "marks_per_identity", "mark_radius", "twin_divergence",
                     "noise_std"});
    read(j, p, "n_families", s.n_families);
    read(j, p, "n_singletons", s.n_singletons);
    read(j, p, "images_per_identity", s.images_per_identity);
    read(j, p, "test_images_per_identity", s.test_images_per_identity);
    read(j, p, "image_size", s.image_size);
    read(j, p, "channels", s.channels);
    read(j, p, "base_frequencies", s.base_frequencies);
    read(j, p, "marks_per_identity", s.marks_per_identity);
    read(j, p, "mark_radius", s.mark_radius);
    read(j, p, "twin_divergence", s.twin_divergence);
    read(j, p, "noise_std", s.noise_std);
}

void read_run(const json& j, RunOptions& r) {
    const std::string p = "run";
    only_keys(j, p, {"seed", "eval_max_pairs", "log_every"});
    read(j, p, "seed", r.seed);
    read(j, p, "eval_max_pairs", r.eval_max_pairs);
    read(j, p, "log_every", r.log_every);
}

}  // namespace

LoadedConfig parse_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    only_keys(root, "", {"profile", "model", "loss", "optim", "train", "synth", "run"});
    LoadedConfig c;
    read(root, "", "profile", c.ahan.profile);
    read_model(section(root, "model"), c.ahan.model);
    read_loss(section(root, "loss"), c.ahan.loss);
    read_optim(section(root, "optim"), c.ahan.optim);
    read_train(section(root, "train"), c.ahan.train);
    read_synth(section(root, "synth"), c.synth);
    read_run(section(root, "run"), c.run);
    c.ahan.validate();
    c.synth.validate();
    if (c.synth.image_size != c.ahan.model.image_size || c.synth.channels != c.ahan.model.channels) {
        fail("synth.image_size", "synthetic images must match model.image_size and model.channels");
    }
    return c;
}

LoadedConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

std::string dump_config(const LoadedConfig& c) {
    const auto& m = c.ahan.model;
    json regions = json::array();
    for (const auto& r : m.regions) {
        json rects = json::array();
        for (const auto& q : r.rects) rects.push_back({q.row0, q.col0, q.row1, q.col1});
        regions.push_back({{"name", r.name}, {"rects", rects}});
    }
    json model = {{"image_size", m.image_size}, {"channels", m.channels}, {"patch", m.patch},
                  {"width", m.width},           {"heads", m.heads},       {"depth", m.depth},
                  {"mlp_ratio", m.mlp_ratio},   {"scales", m.scales},     {"init_std", m.init_std},
                  {"pixel_mean", m.pixel_mean}, {"pixel_std", m.pixel_std},
                  {"tapwca",
                   {{"enabled", m.tapwca.enabled},
                    {"probability", m.tapwca.probability},
                    {"layer_range", {m.tapwca.first_layer, m.tapwca.last_layer}},
                    {"seed", m.tapwca.rng_seed}}}};
    if (!m.regions.empty()) model["regions"] = regions;
    const auto& l = c.ahan.loss;
    const auto& o = c.ahan.optim;
    const auto& t = c.ahan.train;
    const auto& s = c.synth;
    json j = {
        {"profile", c.ahan.profile},
        {"model", model},
        {"loss",
         {{"lambda", l.lambda},
          {"triplet_margin", l.triplet_margin},
          {"arc_margin", l.arc_margin},
          {"arc_scale", l.arc_scale},
          {"oversample_ratio", l.oversample_ratio}}},
        {"optim",
         {{"lr", o.lr},
          {"weight_decay", o.weight_decay},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"accum_steps", o.accum_steps},
          {"schedule_horizon", o.schedule_horizon},
          {"schedule_unit", o.schedule_unit}}},
        {"train",
         {{"batch_size", t.batch_size},
          {"images_per_identity", t.images_per_identity},
          {"steps", t.steps},
          {"epochs", t.epochs},
          {"augment",
           {{"hflip_prob", t.augment.hflip_prob},
            {"brightness", t.augment.brightness},
            {"contrast", t.augment.contrast},
            {"saturation", t.augment.saturation},
            {"rotation_deg", t.augment.rotation_deg}}}}},
        {"synth",
         {{"n_families", s.n_families},
          {"n_singletons", s.n_singletons},
          {"images_per_identity", s.images_per_identity},
          {"test_images_per_identity", s.test_images_per_identity},
          {"image_size", s.image_size},
          {"channels", s.channels},
          {"base_frequencies", s.base_frequencies},
          {"marks_per_identity", s.marks_per_identity},
          {"mark_radius", s.mark_radius},
          {"twin_divergence", s.twin_divergence},
          {"noise_std", s.noise_std}}},
        {"run", {{"seed", c.run.seed}, {"eval_max_pairs", c.run.eval_max_pairs}, {"log_every", c.run.log_every}}}};
    return j.dump(2);
}

}  // namespace ahan
