#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "ahan/config.hpp"
#include "ahan/gradcheck.hpp"
#include "ahan/heatmap.hpp"
#include "ahan/image_io.hpp"
#include "ahan/pipeline.hpp"
#include "ahan/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct Common {
    std::string config = "configs/desk.json";
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string checkpoint;
    std::string data;
};

std::uint64_t seed_of(const Common& c, const ahan::LoadedConfig& cfg) { return c.seed.value_or(cfg.run.seed); }

void emit(const std::string& json_text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << json_text << '\n';
        return;
    }
    std::ofstream f(out_path);
    if (!f) throw std::runtime_error("cannot write " + out_path);
    f << json_text << '\n';
}

ahan::ImageSet split_images(const std::string& manifest_path, ahan::Split split) {
    if (manifest_path.empty()) throw std::invalid_argument("--data <manifest.csv> is required");
    auto manifest = ahan::TwinManifest::read_csv(manifest_path).filter(split);
    if (manifest.empty()) {
        throw std::invalid_argument(manifest_path + " has no " + std::string(ahan::to_string(split)) + " images");
    }
    return ahan::load_images(manifest);
}

int gen_data(const Common& c, std::optional<double> divergence) {
    auto cfg = ahan::load_config(c.config);
    if (divergence) cfg.synth.twin_divergence = *divergence;
    if (c.out.empty()) throw std::invalid_argument("--out <directory> is required");
    const auto manifest = ahan::gen_twin_dataset(cfg.synth, seed_of(c, cfg), c.out);
    ordered_json j;
    j["manifest"] = (fs::path(c.out) / "manifest.csv").string();
    j["images"] = manifest.size();
    j["identities"] = manifest.identities().size();
    j["twin_families"] = manifest.twin_families().size();
    std::cout << j.dump(2) << '\n';
    return 0;
}

int train(const Common& c, std::size_t steps) {
    const auto cfg = ahan::load_config(c.config);
    if (c.checkpoint.empty()) throw std::invalid_argument("--checkpoint <path> is required for the trained weights");
    const auto data = split_images(c.data, ahan::Split::train);
    const std::size_t log_every = std::max<std::size_t>(1, cfg.run.log_every);
    auto outcome = ahan::train_model(cfg, data, steps, seed_of(c, cfg), [&](std::size_t step, const ahan::StepResult& r) {
        if (step == 1 || step % log_every == 0) {
            std::cerr << "step " << step << " total " << r.total << " arc " << r.arc << " triplet " << r.triplet
                      << " lr " << r.lr << (r.gated ? " twin-gated" : "") << '\n';
        }
    });
    ahan::save_checkpoint(c.checkpoint, outcome.weights, cfg.ahan.model);
    ordered_json j;
    j["checkpoint"] = c.checkpoint;
    j["steps"] = outcome.steps.size();
    j["classes"] = outcome.classes.identities;
    ordered_json traj = ordered_json::array();
    for (const auto& r : outcome.steps) traj.push_back({{"total", r.total}, {"arc", r.arc}, {"triplet", r.triplet}, {"lr", r.lr}});
    j["first_total"] = outcome.steps.front().total;
    j["last_total"] = outcome.steps.back().total;
    j["trajectory"] = traj;
    emit(j.dump(2), c.out);
    return 0;
}

int eval(const Common& c, const std::string& scenario_name, std::size_t max_pairs, bool table, bool scores_only) {
    const auto cfg = ahan::load_config(c.config);
    const auto scenario = ahan::metrics::parse_scenario(scenario_name);
    if (c.checkpoint.empty()) throw std::invalid_argument("--checkpoint <path> is required");
    const auto weights = ahan::load_checkpoint(c.checkpoint, cfg.ahan.model, cfg.ahan.loss);
    const auto data = split_images(c.data, ahan::Split::test);
    const std::size_t cap = max_pairs ? max_pairs : cfg.run.eval_max_pairs;
    const auto embeddings = ahan::embed_images(weights, cfg.ahan.model, data.images);
    const auto scores = ahan::score_scenario(data, embeddings, scenario, seed_of(c, cfg), cap);
    if (scores_only) {
        if (c.out.empty()) throw std::invalid_argument("--out <scores.csv> is required");
        ahan::metrics::write_scores_csv(c.out, scores);
        std::cout << ordered_json{{"scores", c.out}, {"pairs", scores.size()}}.dump(2) << '\n';
        return 0;
    }
    const auto report = ahan::metrics::summarize(scenario_name, scores);
    if (table) std::cout << report.to_table();
    else emit(report.to_json(), c.out);
    return 0;
}

int gradcheck(const Common& c, std::size_t samples, double tolerance) {
    const auto cfg = ahan::load_config(c.config);
    const auto report = ahan::end_to_end_gradcheck(cfg.ahan, seed_of(c, cfg), samples);
    ordered_json j;
    j["max_rel_error"] = report.max_rel_error;
    j["tolerance"] = tolerance;
    j["pass"] = report.max_rel_error <= tolerance;
    ordered_json rows = ordered_json::array();
    for (const auto& s : report.samples)
        rows.push_back({{"param", s.param}, {"index", s.index}, {"analytic", s.analytic}, {"numeric", s.numeric},
                        {"rel_error", s.rel_error}});
    j["samples"] = rows;
    emit(j.dump(2), c.out);
    if (report.max_rel_error > tolerance) {
        std::cerr << "gradcheck: max relative error " << report.max_rel_error << " exceeds " << tolerance << '\n';
        return 1;
    }
    return 0;
}

int viz(const Common& c, const std::string& image_path, const std::string& selector) {
    const auto cfg = ahan::load_config(c.config);
    if (c.out.empty()) throw std::invalid_argument("--out <heatmap.pgm> is required");
    if (image_path.empty()) throw std::invalid_argument("--image <path> is required");
    const auto weights = c.checkpoint.empty() ? ahan::AhanWeights::init(cfg.ahan.model, cfg.ahan.loss, 2, seed_of(c, cfg))
                                              : ahan::load_checkpoint(c.checkpoint, cfg.ahan.model, cfg.ahan.loss);
    const auto map = ahan::export_attention_map(weights, cfg.ahan.model, ahan::read_image(image_path), selector, c.out);
    std::cout << ordered_json{{"heatmap", c.out}, {"selector", selector}, {"height", map.dim(0)}, {"width", map.dim(1)}}
                     .dump(2)
              << '\n';
    return 0;
}

void add_common(CLI::App* app, Common& c, bool data, bool checkpoint) {
    app->add_option("--config", c.config, "JSON configuration file")->capture_default_str();
    app->add_option("--seed", c.seed, "Random seed (default: run.seed from the config)");
    app->add_option("--out", c.out, "Output path");
    if (checkpoint) app->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
    if (data) app->add_option("--data", c.data, "Dataset manifest CSV");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AHAN twin face verification toolkit"};
    app.require_subcommand(1);
    Common c;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic twin dataset");
    add_common(gen, c, false, false);
    std::optional<double> divergence;
    gen->add_option("--twin-divergence", divergence, "Override synth.twin_divergence");

    auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
    add_common(tr, c, true, true);
    std::size_t steps = 0;
    tr->add_option("--steps", steps, "Training steps (default: train.steps)");

    std::string scenario = "general";
    std::size_t max_pairs = 0;
    bool table = false;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
    add_common(ev, c, true, true);
    ev->add_option("--scenario", scenario, "general, twin or hard_twin")
        ->check(CLI::IsMember({"general", "twin", "hard_twin"}))
        ->capture_default_str();
    ev->add_option("--max-pairs", max_pairs, "Pair cap (default: run.eval_max_pairs)");
    ev->add_flag("--table", table, "Print an aligned text table instead of JSON");

    auto* ex = app.add_subcommand("export-scores", "Write (score,label) CSV for a scenario");
    add_common(ex, c, true, true);
    ex->add_option("--scenario", scenario, "general, twin or hard_twin")
        ->check(CLI::IsMember({"general", "twin", "hard_twin"}))
        ->capture_default_str();
    ex->add_option("--max-pairs", max_pairs, "Pair cap (default: run.eval_max_pairs)");

    std::size_t samples = 20;
    double tolerance = 1e-3;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full training loss");
    add_common(gc, c, false, false);
    gc->add_option("--samples", samples, "Parameter coordinates to check")->capture_default_str();
    gc->add_option("--tolerance", tolerance, "Maximum relative error")->capture_default_str();

    std::string image, selector = "block:1";
    auto* vz = app.add_subcommand("viz-attention", "Export an attention heatmap as PGM");
    add_common(vz, c, false, true);
    vz->add_option("--image", image, "Input PGM/PPM image");
    vz->add_option("--selector", selector, "block:L, hca:REGION:S, faam:lr or faam:rl")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, std::cerr, std::cerr);
    }

    try {
        if (*gen) return gen_data(c, divergence);
        if (*tr) return train(c, steps);
        if (*ev) return eval(c, scenario, max_pairs, table, false);
        if (*ex) return eval(c, scenario, max_pairs, false, true);
        if (*gc) return gradcheck(c, samples, tolerance);
        if (*vz) return viz(c, image, selector);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
