// Synthetic texture-patch dataset generator.
//
// Each image is a smoothed-noise background with one (or two) rectangular
// texture patches pasted in. The patch texture determines the class, so a
// classifier has to look at the patch — which makes the ground-truth box a
// meaningful target for attribution scoring. Output: PPM P6 images,
// boxes-json annotations, a dataset manifest, and a labels.csv for training.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "relprop/data.hpp"
#include "relprop/image_io.hpp"
#include "relprop/io_util.hpp"
#include "relprop/tensor.hpp"

namespace {

using relprop::Tensor;

// mt19937_64 is seed-stable across standard libraries; the distributions are
// not, so map to doubles by hand.
struct Rng {
    std::mt19937_64 engine;
    explicit Rng(std::uint64_t seed) : engine(seed) {}
    double uniform() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; } // [0, 1)
    double range(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
};

const char* kClasses[4] = {"hstripes", "vstripes", "checker", "dstripes"};

// Texture value at (y, x): 1 = bright band, 0 = dark band. Period 4 in every
// pattern so a small receptive field sees a full cycle.
bool texture_on(std::size_t class_id, std::size_t y, std::size_t x, std::size_t phase) {
    switch (class_id) {
        case 0: return (y + phase) % 4 < 2;
        case 1: return (x + phase) % 4 < 2;
        case 2: return ((y + phase) % 4 < 2) == ((x + phase) % 4 < 2);
        default: return (x + y + phase) % 4 < 2;
    }
}

Tensor make_background(Rng& rng, std::size_t size) {
    const std::size_t cell = 8;
    const std::size_t knots = size / cell + 2;
    Tensor coarse({3, knots, knots});
    for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = rng.range(0.3, 0.7);
    Tensor bg = relprop::bilinear_resize(coarse, size, size);
    for (std::size_t i = 0; i < bg.size(); ++i) {
        bg[i] = std::clamp(bg[i] + rng.range(-0.04, 0.04), 0.0, 1.0);
    }
    return bg;
}

struct Patch {
    std::size_t class_id;
    std::size_t y0, x0, h, w;
};

void paint_patch(Tensor& image, Rng& rng, const Patch& patch) {
    double bright[3], dark[3];
    for (int c = 0; c < 3; ++c) {
        bright[c] = rng.range(0.75, 1.0);
        dark[c] = rng.range(0.0, 0.25);
    }
    const std::size_t phase = rng.below(4);
    for (std::size_t y = patch.y0; y < patch.y0 + patch.h; ++y) {
        for (std::size_t x = patch.x0; x < patch.x0 + patch.w; ++x) {
            const bool on = texture_on(patch.class_id, y, x, phase);
            for (std::size_t c = 0; c < 3; ++c) image.at3(c, y, x) = on ? bright[c] : dark[c];
        }
    }
}

Patch random_patch(Rng& rng, std::size_t size, std::size_t class_id, std::size_t x_lo, std::size_t x_hi) {
    Patch patch;
    patch.class_id = class_id;
    const std::size_t min_side = std::max<std::size_t>(4, size / 4);
    const std::size_t max_side = std::max(min_side + 1, (size * 7) / 16);
    patch.h = min_side + rng.below(max_side - min_side + 1);
    patch.w = min_side + rng.below(std::min(max_side, x_hi - x_lo) - min_side + 1);
    patch.y0 = rng.below(size - patch.h + 1);
    patch.x0 = x_lo + rng.below(x_hi - x_lo - patch.w + 1);
    return patch;
}

void write_ppm_image(const std::filesystem::path& path, const Tensor& image) {
    relprop::ImageU8 u8;
    u8.height = image.extent(1);
    u8.width = image.extent(2);
    u8.channels = 3;
    u8.pixels.resize(u8.height * u8.width * 3);
    for (std::size_t y = 0; y < u8.height; ++y) {
        for (std::size_t x = 0; x < u8.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                u8.pixels[(y * u8.width + x) * 3 + c] =
                    static_cast<std::uint8_t>(std::lround(image.at3(c, y, x) * 255.0));
            }
        }
    }
    relprop::write_ppm(path, u8);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic texture dataset generator"};
    std::string out_dir;
    std::size_t count = 100;
    std::size_t size = 32;
    std::uint64_t seed = 1;
    std::size_t objects = 1;
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--count", count, "number of images (default 100)");
    app.add_option("--size", size, "image side length (default 32)");
    app.add_option("--seed", seed, "RNG seed (default 1)");
    app.add_option("--objects", objects, "patches per image, 1 or 2 (default 1)")->check(CLI::Range(1, 2));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? 2 : 0;
    }
    if (size < 16) {
        std::cerr << "error: --size must be at least 16\n";
        return 2;
    }

    const std::filesystem::path root(out_dir);
    const std::filesystem::path images_dir = root / "images";
    const std::filesystem::path annotations_dir = root / "annotations";
    std::filesystem::create_directories(images_dir);
    std::filesystem::create_directories(annotations_dir);

    Rng rng(seed);
    std::string labels_csv = "image_id,label\n";

    for (std::size_t i = 0; i < count; ++i) {
        char id_buf[32];
        std::snprintf(id_buf, sizeof id_buf, "img%05zu", i);
        const std::string image_id = id_buf;

        Tensor image = make_background(rng, size);
        std::vector<Patch> patches;
        if (objects == 1) {
            patches.push_back(random_patch(rng, size, rng.below(4), 0, size));
        } else {
            // Two patches with distinct classes, one in each horizontal half.
            const std::size_t first = rng.below(4);
            const std::size_t second = (first + 1 + rng.below(3)) % 4;
            patches.push_back(random_patch(rng, size, first, 0, size / 2));
            patches.push_back(random_patch(rng, size, second, size / 2, size));
        }
        for (const Patch& patch : patches) paint_patch(image, rng, patch);

        write_ppm_image(images_dir / (image_id + ".ppm"), image);

        nlohmann::json ann;
        ann["image_id"] = image_id;
        ann["boxes"] = nlohmann::json::array();
        for (const Patch& patch : patches) {
            nlohmann::json box;
            box["label"] = kClasses[patch.class_id];
            box["x_min"] = patch.x0;
            box["y_min"] = patch.y0;
            box["x_max"] = patch.x0 + patch.w;
            box["y_max"] = patch.y0 + patch.h;
            ann["boxes"].push_back(box);
            labels_csv += image_id + "," + kClasses[patch.class_id] + "\n";
        }
        relprop::write_text_file(annotations_dir / (image_id + ".json"), ann.dump(2) + "\n");
    }

    nlohmann::json manifest;
    manifest["images_dir"] = "images";
    manifest["annotations_dir"] = "annotations";
    manifest["annotation_format"] = "boxes-json";
    manifest["classes"] = {kClasses[0], kClasses[1], kClasses[2], kClasses[3]};
    relprop::write_text_file(root / "dataset.json", manifest.dump(2) + "\n");
    relprop::write_text_file(root / "labels.csv", labels_csv);

    std::cout << "wrote " << count << " images to " << root.string() << "\n";
    return 0;
}
