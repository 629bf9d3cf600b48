#pragma once

#include <filesystem>

#include "ahan/tensor.hpp"

namespace ahan {

/// Binary PGM (P5, one channel) or PPM (P6, three channels), maxval up to 255.
/// Images are H x W x C tensors with values in [0, 1].
Tensor read_image(const std::filesystem::path& path);

/// Values are clamped to [0, 1] and rounded to 8 bits. C must be 1 or 3.
void write_image(const std::filesystem::path& path, const Tensor& image);

}  // namespace ahan
