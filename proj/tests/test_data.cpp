#include <cmath>
#include <string>
#include <vector>

#include "relprop/data.hpp"
#include "relprop/io_util.hpp"
#include "support/test_util.hpp"

using namespace relprop;
using testutil::Rng;
using testutil::TempDir;

namespace {

const char* kVocFixture = R"(<?xml version="1.0"?>
<annotation>
  <filename>2007_000027.jpg</filename>
  <size><width>486</width><height>500</height><depth>3</depth></size>
  <object>
    <name>person</name>
    <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>10</xmax><ymax>20</ymax></bndbox>
  </object>
</annotation>
)";

void voc_parsing() {
    const Annotation ann = parse_voc_annotation(kVocFixture);
    CHECK(ann.image_id == "2007_000027");
    REQUIRE(ann.boxes.size() == 1);
    // 1-based inclusive VOC corners become 0-based exclusive-max
    CHECK(ann.boxes[0].x_min == 0);
    CHECK(ann.boxes[0].y_min == 0);
    CHECK(ann.boxes[0].x_max == 10);
    CHECK(ann.boxes[0].y_max == 20);
    CHECK(ann.boxes[0].class_label == "person");

    // two objects of the same class stay two boxes
    const Annotation two = parse_voc_annotation(R"(<annotation>
      <filename>pic.png</filename>
      <object><name>cat</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>5</xmax><ymax>5</ymax></bndbox></object>
      <object><name>cat</name><bndbox><xmin>6</xmin><ymin>6</ymin><xmax>9</xmax><ymax>9</ymax></bndbox></object>
    </annotation>)");
    REQUIRE(two.boxes.size() == 2);
    CHECK(two.boxes[0].class_label == "cat");
    CHECK(two.boxes[1].class_label == "cat");
    CHECK(two.boxes[1].x_min == 5);

    // the declared <size> clips runaway corners
    const Annotation clipped = parse_voc_annotation(R"(<annotation>
      <filename>pic.png</filename>
      <size><width>8</width><height>8</height></size>
      <object><name>cat</name><bndbox><xmin>5</xmin><ymin>5</ymin><xmax>99</xmax><ymax>99</ymax></bndbox></object>
    </annotation>)");
    CHECK(clipped.boxes[0].x_max == 8);
    CHECK(clipped.boxes[0].y_max == 8);

    CHECK_THROWS(parse_voc_annotation("<annotation><filename>f</filename><object><name>x</name></object></annotation>"),
                 Errc::missing_field);
    CHECK_THROWS(parse_voc_annotation("<annotation><filename>f</filename><object><name>x</name>"
                                      "<bndbox><xmin>1</xmin><ymin>1</ymin><xmax>9</xmax></bndbox></object></annotation>"),
                 Errc::missing_field);
    CHECK_THROWS(parse_voc_annotation("not xml at all"), Errc::malformed_document);
    CHECK_THROWS(parse_voc_annotation("<annotation><filename>f</filename><object>"), Errc::malformed_document);
    // xmin == xmax is a legal one-pixel-wide box under inclusive-max VOC coordinates
    const Annotation sliver = parse_voc_annotation(R"(<annotation><filename>f</filename>
      <object><name>x</name><bndbox><xmin>5</xmin><ymin>1</ymin><xmax>5</xmax><ymax>9</ymax></bndbox></object>
    </annotation>)");
    CHECK(sliver.boxes[0].x_max - sliver.boxes[0].x_min == 1);
    CHECK_THROWS(parse_voc_annotation(R"(<annotation><filename>f</filename>
      <object><name>x</name><bndbox><xmin>6</xmin><ymin>1</ymin><xmax>5</xmax><ymax>9</ymax></bndbox></object>
    </annotation>)"),
                 Errc::degenerate_box);
    // entity decoding in labels
    const Annotation entities = parse_voc_annotation(R"(<annotation><filename>f.png</filename>
      <object><name>a&amp;b</name><bndbox><xmin>1</xmin><ymin>1</ymin><xmax>4</xmax><ymax>4</ymax></bndbox></object>
    </annotation>)");
    CHECK(entities.boxes[0].class_label == "a&b");
}

void boxes_json_parsing() {
    const Annotation ann = parse_boxes_json(
        R"({"image_id": "img7", "boxes": [{"label": "dog", "x_min": 2, "y_min": 3, "x_max": 9, "y_max": 11}]})");
    CHECK(ann.image_id == "img7");
    REQUIRE(ann.boxes.size() == 1);
    CHECK(ann.boxes[0].x_min == 2);
    CHECK(ann.boxes[0].y_max == 11);

    CHECK_THROWS(parse_boxes_json("{"), Errc::malformed_document);
    CHECK_THROWS(parse_boxes_json(R"({"boxes": []})"), Errc::missing_field);
    CHECK_THROWS(parse_boxes_json(R"({"image_id": "x", "boxes": [{"label": "d", "x_min": 2}]})"), Errc::missing_field);
    CHECK_THROWS(parse_boxes_json(
                     R"({"image_id": "x", "boxes": [{"label": "d", "x_min": 5, "y_min": 0, "x_max": 5, "y_max": 2}]})"),
                 Errc::degenerate_box);
    CHECK_THROWS(parse_boxes_json(
                     R"({"image_id": "x", "boxes": [{"label": "d", "x_min": 1.5, "y_min": 0, "x_max": 5, "y_max": 2}]})"),
                 Errc::malformed_document);
}

void image_round_trips() {
    TempDir tmp("data-images");
    Rng rng(81);

    ImageU8 img;
    img.height = 5;
    img.width = 7;
    img.channels = 3;
    img.pixels.resize(5 * 7 * 3);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));

    write_ppm(tmp.path / "a.ppm", img);
    const ImageU8 ppm_back = read_image(tmp.path / "a.ppm");
    CHECK(ppm_back.height == 5);
    CHECK(ppm_back.width == 7);
    CHECK(ppm_back.channels == 3);
    CHECK(ppm_back.pixels == img.pixels);

    write_png(tmp.path / "a.png", img);
    const ImageU8 png_back = read_image(tmp.path / "a.png");
    CHECK(png_back.channels == 3);
    CHECK(png_back.pixels == img.pixels);

    // grayscale PNG round-trip
    ImageU8 gray;
    gray.height = 3;
    gray.width = 4;
    gray.channels = 1;
    gray.pixels = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255};
    write_png(tmp.path / "g.png", gray);
    const ImageU8 gray_back = read_image(tmp.path / "g.png");
    CHECK(gray_back.channels == 1);
    CHECK(gray_back.pixels == gray.pixels);

    // PPM with comments and odd whitespace in the header
    write_text_file(tmp.path / "c.ppm", std::string("P6 # comment\n# another\n 2\t1\n255\n") + "\x01\x02\x03\x04\x05\x06");
    const ImageU8 with_comments = read_image(tmp.path / "c.ppm");
    CHECK(with_comments.width == 2);
    CHECK(with_comments.height == 1);
    CHECK(with_comments.pixels[0] == 1);

    // malformed inputs
    write_text_file(tmp.path / "bad.ppm", "P6\n2 2\n255\nxx"); // truncated raster
    CHECK_THROWS(read_image(tmp.path / "bad.ppm"), Errc::malformed_document);
    write_text_file(tmp.path / "bad16.ppm", "P6\n1 1\n65535\n\0\0\0\0\0\0");
    CHECK_THROWS(read_image(tmp.path / "bad16.ppm"), Errc::malformed_document);
    write_text_file(tmp.path / "junk.png", "\x89PNG\r\n\x1a\nnot really");
    CHECK_THROWS(read_image(tmp.path / "junk.png"), Errc::malformed_document);
    write_text_file(tmp.path / "mystery.bin", "GIF89a");
    CHECK_THROWS(read_image(tmp.path / "mystery.bin"), Errc::malformed_document);
    CHECK_THROWS(read_image(tmp.path / "absent.png"), Errc::missing_file);

    // sample scaling: u8 / 255 in channel-planar order
    const ImageSample sample = sample_from_u8(img, "a");
    CHECK(sample.pixels.shape() == std::vector<std::size_t>({3, 5, 7}));
    CHECK(sample.pixels.at3(2, 4, 6) == static_cast<double>(img.at(4, 6, 2)) / 255.0);
    CHECK(sample.original_h == 5);
    CHECK(sample.original_w == 7);
}

void bilinear_geometry() {
    // constant image stays constant bit-exactly at any size
    const Tensor constant = Tensor::full({2, 3, 5}, 0.3725);
    const Tensor up = bilinear_resize(constant, 7, 11);
    for (std::size_t i = 0; i < up.size(); ++i) CHECK(up[i] == 0.3725);

    // same dims: identity
    const Tensor same = bilinear_resize(constant, 3, 5);
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(same[i] == constant[i]);

    // hand case: [0,1] widened to 4 with half-pixel centers
    const Tensor twow({1, 1, 2}, {0.0, 1.0});
    const Tensor wide = bilinear_resize(twow, 1, 4);
    CHECK(wide[0] == 0.0);
    CHECK_NEAR(wide[1], 0.25, 1e-15);
    CHECK_NEAR(wide[2], 0.75, 1e-15);
    CHECK(wide[3] == 1.0);

    // hand case: 4 -> 2 averages adjacent pairs
    const Tensor fourw({1, 1, 4}, {0.0, 1.0, 2.0, 5.0});
    const Tensor narrow = bilinear_resize(fourw, 1, 2);
    CHECK_NEAR(narrow[0], 0.5, 1e-15);
    CHECK_NEAR(narrow[1], 3.5, 1e-15);
}

ImageSample flat_sample(std::size_t h, std::size_t w, double value = 0.5) {
    ImageSample s;
    s.image_id = "s";
    s.pixels = Tensor::full({3, h, w}, value);
    s.original_h = h;
    s.original_w = w;
    return s;
}

BoundingBox bbox(std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1, const std::string& label = "t") {
    BoundingBox b;
    b.x_min = x0;
    b.y_min = y0;
    b.x_max = x1;
    b.y_max = y1;
    b.class_label = label;
    return b;
}

void preprocessing_geometry() {
    // stretch: W stays (scale 1), H doubles (scale 2)
    {
        Annotation ann{"s", {bbox(10, 10, 20, 20)}};
        const Preprocessed out = preprocess(flat_sample(50, 100), ann, PreprocessMode::stretch_resize, 100, 100);
        CHECK(out.pixels.shape() == std::vector<std::size_t>({3, 100, 100}));
        REQUIRE(out.annotation.boxes.size() == 1);
        CHECK(out.annotation.boxes[0].x_min == 10);
        CHECK(out.annotation.boxes[0].y_min == 20);
        CHECK(out.annotation.boxes[0].x_max == 20);
        CHECK(out.annotation.boxes[0].y_max == 40);
        CHECK(out.dropped.empty());
    }

    // crop: 200x100 -> 100x100 shaves 50 px off each horizontal side
    {
        Annotation ann{"s", {bbox(120, 10, 180, 60)}};
        const Preprocessed out =
            preprocess(flat_sample(100, 200), ann, PreprocessMode::shortest_side_center_crop, 100, 100);
        CHECK(out.pixels.shape() == std::vector<std::size_t>({3, 100, 100}));
        REQUIRE(out.annotation.boxes.size() == 1);
        CHECK(out.annotation.boxes[0].x_min == 70);
        CHECK(out.annotation.boxes[0].y_min == 10);
        CHECK(out.annotation.boxes[0].x_max == 100); // clipped at the frame
        CHECK(out.annotation.boxes[0].y_max == 60);
    }

    // square input in crop mode: pure uniform resize, boxes scale only
    {
        Annotation ann{"s", {bbox(10, 20, 30, 40)}};
        const Preprocessed out =
            preprocess(flat_sample(60, 60), ann, PreprocessMode::shortest_side_center_crop, 120, 120);
        REQUIRE(out.annotation.boxes.size() == 1);
        CHECK(out.annotation.boxes[0].x_min == 20);
        CHECK(out.annotation.boxes[0].y_min == 40);
        CHECK(out.annotation.boxes[0].x_max == 60);
        CHECK(out.annotation.boxes[0].y_max == 80);
    }

    // a box pushed fully outside the crop is dropped and reported
    {
        Annotation ann{"s", {bbox(0, 0, 40, 90), bbox(90, 0, 110, 100)}};
        const Preprocessed out =
            preprocess(flat_sample(100, 200), ann, PreprocessMode::shortest_side_center_crop, 100, 100);
        CHECK(out.annotation.boxes.size() == 1);
        CHECK(out.dropped.size() == 1);
        CHECK(out.dropped[0].x_min == 0); // original coordinates in the report
    }

    // upscale control in crop mode
    {
        Annotation ann{"s", {}};
        CHECK_THROWS(preprocess(flat_sample(10, 10), ann, PreprocessMode::shortest_side_center_crop, 32, 32, false),
                     Errc::target_larger_than_image);
        const Preprocessed ok = preprocess(flat_sample(10, 10), ann, PreprocessMode::shortest_side_center_crop, 32, 32);
        CHECK(ok.pixels.shape() == std::vector<std::size_t>({3, 32, 32}));
    }

    // box transform round-trip: stretch away and back lands within 1 px
    {
        Rng rng(83);
        for (int round = 0; round < 30; ++round) {
            const std::size_t h = 24 + rng.below(36), w = 24 + rng.below(36);
            // keep boxes at least 3px wide: a 1px box may round-collapse on the way back
            const std::int64_t x0 = static_cast<std::int64_t>(rng.below(w - 4));
            const std::int64_t y0 = static_cast<std::int64_t>(rng.below(h - 4));
            BoundingBox original = bbox(x0, y0, x0 + 3 + static_cast<std::int64_t>(rng.below(w - x0 - 3)),
                                        y0 + 3 + static_cast<std::int64_t>(rng.below(h - y0 - 3)));
            Annotation ann{"s", {original}};
            const Preprocessed there = preprocess(flat_sample(h, w), ann, PreprocessMode::stretch_resize, 64, 64);
            REQUIRE(there.annotation.boxes.size() == 1);
            const Preprocessed back =
                preprocess(flat_sample(64, 64), there.annotation, PreprocessMode::stretch_resize, h, w);
            REQUIRE(back.annotation.boxes.size() == 1);
            const BoundingBox& round_tripped = back.annotation.boxes[0];
            CHECK(std::llabs(round_tripped.x_min - original.x_min) <= 1);
            CHECK(std::llabs(round_tripped.y_min - original.y_min) <= 1);
            CHECK(std::llabs(round_tripped.x_max - original.x_max) <= 1);
            CHECK(std::llabs(round_tripped.y_max - original.y_max) <= 1);
        }
    }
}

void mean_image() {
    const Tensor zeros({3, 2, 2});
    const Tensor ones = Tensor::full({3, 2, 2}, 1.0);
    const Tensor mean = dataset_mean({zeros, ones});
    for (std::size_t i = 0; i < mean.size(); ++i) CHECK(mean[i] == 0.5);

    const Tensor self = dataset_mean({ones});
    for (std::size_t i = 0; i < self.size(); ++i) CHECK(self[i] == 1.0);

    // three fixed values, hand mean
    const Tensor a = Tensor::full({1, 1, 1}, 0.1);
    const Tensor b = Tensor::full({1, 1, 1}, 0.5);
    const Tensor c = Tensor::full({1, 1, 1}, 0.6);
    CHECK_NEAR(dataset_mean({a, b, c})[0], 0.4, 1e-15);

    CHECK_THROWS(dataset_mean({}), Errc::empty_input);
    CHECK_THROWS(dataset_mean({zeros, Tensor({3, 2, 3})}), Errc::dimension_mismatch);
}

void dataset_loading() {
    TempDir tmp("dataset");
    std::filesystem::create_directories(tmp.path / "images");
    std::filesystem::create_directories(tmp.path / "annotations");

    ImageU8 img;
    img.height = 4;
    img.width = 4;
    img.channels = 3;
    img.pixels.assign(48, 100);
    write_ppm(tmp.path / "images" / "b.ppm", img);
    write_ppm(tmp.path / "images" / "a.ppm", img);
    const char* ann_template = R"({"image_id": "%s", "boxes": [{"label": "t", "x_min": 0, "y_min": 0, "x_max": 2, "y_max": 2}]})";
    char buf[256];
    std::snprintf(buf, sizeof buf, ann_template, "a");
    write_text_file(tmp.path / "annotations" / "a.json", buf);
    std::snprintf(buf, sizeof buf, ann_template, "b");
    write_text_file(tmp.path / "annotations" / "b.json", buf);
    write_text_file(tmp.path / "dataset.json", R"({
        "images_dir": "images",
        "annotations_dir": "annotations",
        "annotation_format": "boxes-json",
        "classes": ["t"]
    })");

    const DatasetIndex index = load_dataset(tmp.path / "dataset.json");
    REQUIRE(index.items.size() == 2);
    CHECK(index.items[0].image_id == "a"); // sorted by id
    CHECK(index.items[1].image_id == "b");
    CHECK(index.manifest.classes == std::vector<std::string>({"t"}));
    const Annotation ann = load_annotation(index.items[0].annotation_path);
    CHECK(ann.boxes.size() == 1);

    // image without a matching annotation is an error
    write_ppm(tmp.path / "images" / "c.ppm", img);
    CHECK_THROWS(load_dataset(tmp.path / "dataset.json"), Errc::missing_file);
    std::filesystem::remove(tmp.path / "images" / "c.ppm");

    // manifest validation
    write_text_file(tmp.path / "bad1.json", R"({"images_dir": "images"})");
    CHECK_THROWS(load_dataset(tmp.path / "bad1.json"), Errc::invalid_config);
    write_text_file(tmp.path / "bad2.json", R"({
        "images_dir": "images", "annotations_dir": "annotations",
        "annotation_format": "tsv", "classes": ["t"]})");
    CHECK_THROWS(load_dataset(tmp.path / "bad2.json"), Errc::invalid_config);

    // empty images dir
    std::filesystem::create_directories(tmp.path / "empty");
    write_text_file(tmp.path / "bad3.json", R"({
        "images_dir": "empty", "annotations_dir": "annotations",
        "annotation_format": "boxes-json", "classes": ["t"]})");
    CHECK_THROWS(load_dataset(tmp.path / "bad3.json"), Errc::empty_input);
}

} // namespace

int main() {
    voc_parsing();
    boxes_json_parsing();
    image_round_trips();
    bilinear_geometry();
    preprocessing_geometry();
    mean_image();
    dataset_loading();
    return testutil::summary("test_data");
}
