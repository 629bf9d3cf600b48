#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "ahan/image_io.hpp"
#include "ahan/synth.hpp"

using namespace ahan;

namespace {

SynthConfig small() {
    SynthConfig c;
    c.n_families = 3;
    c.n_singletons = 2;
    c.images_per_identity = 2;
    c.test_images_per_identity = 1;
    c.image_size = 16;
    return c;
}

double dist(const Tensor& a, const Tensor& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

bool mirror_symmetric(const Tensor& face, double tol) {
    const std::size_t h = face.dim(0), w = face.dim(1);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (std::abs(face[y * w + x] - face[y * w + (w - 1 - x)]) > tol) return false;
    return true;
}

}  // namespace

TEST(SynthIdentities, LayoutAndIds) {
    const auto ids = synth_identities(small(), 1);
    ASSERT_EQ(ids.size(), 8u);
    EXPECT_EQ(ids[0].id, "f000a");
    EXPECT_EQ(ids[1].id, "f000b");
    EXPECT_EQ(ids[0].twin, "f000b");
    EXPECT_EQ(ids[1].twin, "f000a");
    EXPECT_EQ(ids[6].id, "s000");
    EXPECT_FALSE(ids[6].twin.has_value());
    for (const auto& i : ids) EXPECT_EQ(i.face.shape(), (Shape{16, 16, 1}));
}

TEST(SynthIdentities, ZeroDivergenceTwinsIdentical) {
    SynthConfig c = small();
    c.twin_divergence = 0.0;
    const auto ids = synth_identities(c, 2);
    for (std::size_t f = 0; f < 3; ++f) {
        EXPECT_EQ(ids[2 * f].face.storage(), ids[2 * f + 1].face.storage());
        EXPECT_TRUE(mirror_symmetric(ids[2 * f].face, 1e-12));
    }
    EXPECT_GT(dist(ids[0].face, ids[2].face), 0.1);
}

TEST(SynthIdentities, TwinDifferenceLinearInDivergence) {
    SynthConfig c = small();
    std::vector<std::vector<SynthIdentity>> runs;
    for (double d : {0.0, 1.0, 2.5}) {
        c.twin_divergence = d;
        runs.push_back(synth_identities(c, 3));
    }
    for (std::size_t k = 0; k < 6; ++k) {
        const Tensor& f0 = runs[0][k].face;
        const Tensor& f1 = runs[1][k].face;
        const Tensor& f2 = runs[2][k].face;
        for (std::size_t i = 0; i < f0.size(); ++i) EXPECT_NEAR(f2[i] - f0[i], 2.5 * (f1[i] - f0[i]), 1e-12);
    }
    // Twin distance grows linearly as well.
    const double d1 = dist(runs[1][0].face, runs[1][1].face), d2 = dist(runs[2][0].face, runs[2][1].face);
    EXPECT_NEAR(d2, 2.5 * d1, 1e-9);
    EXPECT_GT(d1, 0.0);
}

TEST(SynthIdentities, SeedDeterminism) {
    const auto a = synth_identities(small(), 4), b = synth_identities(small(), 4), c = synth_identities(small(), 5);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].face.storage(), b[i].face.storage());
    EXPECT_NE(a[0].face.storage(), c[0].face.storage());
}

TEST(SynthIdentities, TwinsCloserThanStrangers) {
    const auto ids = synth_identities(small(), 6);
    for (std::size_t f = 0; f + 1 < 3; ++f)
        EXPECT_LT(dist(ids[2 * f].face, ids[2 * f + 1].face), dist(ids[2 * f].face, ids[2 * f + 2].face));
}

TEST(SynthConfig, Validation) {
    SynthConfig c = small();
    c.channels = 2;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small();
    c.twin_divergence = -1;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = small();
    c.n_families = 0;
    c.n_singletons = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(GenTwinDataset, WritesManifestAndImages) {
    const auto dir = std::filesystem::temp_directory_path() / "ahan_synth_gen";
    std::filesystem::remove_all(dir);
    const TwinManifest m = gen_twin_dataset(small(), 7, dir);
    EXPECT_EQ(m.size(), 8u * 3u);
    EXPECT_EQ(m.filter(Split::train).size(), 16u);
    EXPECT_EQ(m.filter(Split::test).size(), 8u);
    EXPECT_EQ(m.twin_families().size(), 3u);
    const TwinManifest back = TwinManifest::read_csv(dir / "manifest.csv");
    ASSERT_EQ(back.size(), m.size());
    for (std::size_t i = 0; i < m.size(); ++i) {
        EXPECT_EQ(back.entries()[i].image_id, m.entries()[i].image_id);
        const Tensor img = read_image(back.resolve(back.entries()[i]));
        EXPECT_EQ(img.shape(), (Shape{16, 16, 1}));
    }
    std::filesystem::remove_all(dir);
}

TEST(GenTwinDataset, NoiseFreeImagesMatchTemplates) {
    SynthConfig c = small();
    c.noise_std = 0.0;
    const auto dir = std::filesystem::temp_directory_path() / "ahan_synth_clean";
    std::filesystem::remove_all(dir);
    const TwinManifest m = gen_twin_dataset(c, 8, dir);
    const auto ids = synth_identities(c, 8);
    for (const auto& e : m.entries()) {
        const Tensor img = read_image(m.resolve(e));
        for (const auto& id : ids)
            if (id.id == e.identity)
                for (std::size_t i = 0; i < img.size(); ++i)
                    EXPECT_NEAR(img[i], std::clamp(id.face[i], 0.0, 1.0), 0.5 / 255.0 + 1e-12);
    }
    std::filesystem::remove_all(dir);
}

TEST(GenTwinDataset, ColorImages) {
    SynthConfig c = small();
    c.channels = 3;
    c.n_singletons = 0;
    c.n_families = 1;
    const auto dir = std::filesystem::temp_directory_path() / "ahan_synth_color";
    std::filesystem::remove_all(dir);
    const TwinManifest m = gen_twin_dataset(c, 9, dir);
    EXPECT_EQ(read_image(m.resolve(m.entries()[0])).shape(), (Shape{16, 16, 3}));
    std::filesystem::remove_all(dir);
}
