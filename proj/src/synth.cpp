#include "ahan/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "ahan/image_io.hpp"

namespace ahan {

void SynthConfig::validate() const {
    if (image_size == 0) throw std::invalid_argument("synth.image_size must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("synth.channels must be 1 or 3");
    if (n_families == 0 && n_singletons == 0) throw std::invalid_argument("synth: no identities requested");
    if (images_per_identity == 0) throw std::invalid_argument("synth.images_per_identity must be positive");
    if (base_frequencies == 0) throw std::invalid_argument("synth.base_frequencies must be positive");
    if (!(twin_divergence >= 0.0)) throw std::invalid_argument("synth.twin_divergence must be >= 0");
    if (!(noise_std >= 0.0)) throw std::invalid_argument("synth.noise_std must be >= 0");
    if (!(mark_radius > 0.0)) throw std::invalid_argument("synth.mark_radius must be positive");
}

namespace {

// Left/right mirror-symmetric smooth pattern around mid-gray.
Tensor base_face(const SynthConfig& cfg, std::mt19937_64& rng) {
    const std::size_t n = cfg.image_size;
    std::normal_distribution<double> amp(0.0, 0.12);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    Tensor face({n, n, cfg.channels}, 0.5);
    for (std::size_t fx = 0; fx < cfg.base_frequencies; ++fx)
        for (std::size_t fy = 1; fy <= cfg.base_frequencies; ++fy) {
            const double a = amp(rng), ph = phase(rng);
            for (std::size_t y = 0; y < n; ++y)
                for (std::size_t x = 0; x < n; ++x) {
                    const double u = (x + 0.5) / n - 0.5;  // even around the vertical midline
                    const double v = (y + 0.5) / n;
                    const double val = a * std::cos(2.0 * std::numbers::pi * fx * u) *
                                       std::cos(std::numbers::pi * fy * v + ph);
                    for (std::size_t c = 0; c < cfg.channels; ++c) face[(y * n + x) * cfg.channels + c] += val;
                }
        }
    return face;
}

// Unit-amplitude localized blobs at random positions with random signs.
Tensor marks(const SynthConfig& cfg, std::mt19937_64& rng) {
    const std::size_t n = cfg.image_size;
    std::uniform_real_distribution<double> pos(0.0, static_cast<double>(n));
    std::bernoulli_distribution sign(0.5);
    Tensor m({n, n, cfg.channels});
    const double two_r2 = 2.0 * cfg.mark_radius * cfg.mark_radius;
    for (std::size_t k = 0; k < cfg.marks_per_identity; ++k) {
        const double cx = pos(rng), cy = pos(rng);
        const double s = sign(rng) ? 1.0 : -1.0;
        for (std::size_t y = 0; y < n; ++y)
            for (std::size_t x = 0; x < n; ++x) {
                const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                const double val = s * std::exp(-(dx * dx + dy * dy) / two_r2);
                for (std::size_t c = 0; c < cfg.channels; ++c) m[(y * n + x) * cfg.channels + c] += val;
            }
    }
    return m;
}

constexpr double kMarkAmplitude = 0.3;

Tensor with_marks(const Tensor& base, const Tensor& m, double scale) {
    Tensor out = base;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * m[i];
    return out;
}

std::string family_id(std::size_t f, char member) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "f%03zu%c", f, member);
    return buf;
}

}  // namespace

std::vector<SynthIdentity> synth_identities(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    std::vector<SynthIdentity> out;
    const double scale = kMarkAmplitude * cfg.twin_divergence;
    for (std::size_t f = 0; f < cfg.n_families; ++f) {
        Tensor base = base_face(cfg, rng);
        Tensor ma = marks(cfg, rng);
        Tensor mb = marks(cfg, rng);
        const std::string a = family_id(f, 'a'), b = family_id(f, 'b');
        out.push_back({a, b, with_marks(base, ma, scale)});
        out.push_back({b, a, with_marks(base, mb, scale)});
    }
    for (std::size_t s = 0; s < cfg.n_singletons; ++s) {
        Tensor base = base_face(cfg, rng);
        char buf[32];
        std::snprintf(buf, sizeof buf, "s%03zu", s);
        // Singletons get full-strength marks so they never collapse onto another identity.
        out.push_back({buf, std::nullopt, with_marks(base, marks(cfg, rng), kMarkAmplitude)});
    }
    return out;
}

TwinManifest gen_twin_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir) {
    const auto identities = synth_identities(cfg, seed);
    std::filesystem::create_directories(out_dir / "images");
    // Separate stream so templates do not depend on image counts.
    std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> noise(0.0, 1.0);
    const char* ext = cfg.channels == 1 ? ".pgm" : ".ppm";
    std::vector<ManifestEntry> entries;
    for (const auto& ident : identities) {
        const std::size_t total = cfg.images_per_identity + cfg.test_images_per_identity;
        for (std::size_t k = 0; k < total; ++k) {
            Tensor img = ident.face;
            if (cfg.noise_std > 0.0)
                for (auto& v : img.values()) v += cfg.noise_std * noise(noise_rng);
            const std::string image_id = ident.id + "_" + std::to_string(k);
            const std::string rel = "images/" + image_id + ext;
            write_image(out_dir / rel, img);
            entries.push_back({image_id, ident.id, ident.twin,
                               k < cfg.images_per_identity ? Split::train : Split::test, rel});
        }
    }
    TwinManifest manifest(std::move(entries), out_dir);
    manifest.validate();
    manifest.write_csv(out_dir / "manifest.csv");
    return manifest;
}

}  // namespace ahan
