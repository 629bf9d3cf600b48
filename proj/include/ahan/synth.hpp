#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ahan/manifest.hpp"
#include "ahan/tensor.hpp"

namespace ahan {

struct SynthConfig {
    std::size_t n_families = 8;
    std::size_t n_singletons = 0;
    std::size_t images_per_identity = 6;       // train split
    std::size_t test_images_per_identity = 4;  // test split
    std::size_t image_size = 32;
    std::size_t channels = 1;
    std::size_t base_frequencies = 3;  // cosine terms per axis in the base face
    std::size_t marks_per_identity = 3;
    double mark_radius = 2.0;  // pixels
    double twin_divergence = 1.0;
    double noise_std = 0.05;

    void validate() const;
};

struct SynthIdentity {
    std::string id;
    std::optional<std::string> twin;
    Tensor face;  // noise-free template, H x W x C
};

/// Identity templates only. Families come first as (a, b) sibling pairs, then singletons.
std::vector<SynthIdentity> synth_identities(const SynthConfig& cfg, std::uint64_t seed);

/// Writes images/<image_id>.pgm|ppm and manifest.csv under out_dir.
TwinManifest gen_twin_dataset(const SynthConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace ahan
