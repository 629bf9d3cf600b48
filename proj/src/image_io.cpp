#include "ahan/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ahan {

namespace {

// Skips whitespace and '#' comments between header fields.
void skip_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
        } else if (c != EOF && std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

std::size_t header_number(std::istream& in, const std::filesystem::path& path, const char* field) {
    skip_space(in);
    long long v = -1;
    if (!(in >> v) || v <= 0) throw std::runtime_error(path.string() + ": bad " + field + " in header");
    return static_cast<std::size_t>(v);
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path.string());
    char magic[2] = {0, 0};
    in.read(magic, 2);
    std::size_t channels = 0;
    if (magic[0] == 'P' && magic[1] == '5') channels = 1;
    else if (magic[0] == 'P' && magic[1] == '6') channels = 3;
    else throw std::runtime_error(path.string() + ": not a binary PGM/PPM file");

    const std::size_t width = header_number(in, path, "width");
    const std::size_t height = header_number(in, path, "height");
    const std::size_t maxval = header_number(in, path, "maxval");
    if (maxval > 255) throw std::runtime_error(path.string() + ": 16-bit images are not supported");
    in.get();  // single whitespace before the raster

    std::vector<unsigned char> raster(width * height * channels);
    in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size())) {
        throw std::runtime_error(path.string() + ": truncated raster");
    }
    Tensor img({height, width, channels});
    for (std::size_t i = 0; i < raster.size(); ++i) img[i] = raster[i] / static_cast<double>(maxval);
    return img;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
        throw DimensionError("write_image: expected H x W x {1,3}, got " + shape_str(image.shape()));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image " + path.string());
    out << (image.dim(2) == 1 ? "P5" : "P6") << '\n' << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
    std::vector<unsigned char> raster(image.size());
    for (std::size_t i = 0; i < image.size(); ++i) {
        raster[i] = static_cast<unsigned char>(std::lround(std::clamp(image[i], 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
}

}  // namespace ahan
