#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "relprop/occlusion.hpp"
#include "support/build_net.hpp"
#include "support/test_util.hpp"

using namespace relprop;
using testutil::TempDir;

namespace {

BoundingBox bbox(std::int64_t x0, std::int64_t y0, std::int64_t x1, std::int64_t y1, const std::string& label) {
    BoundingBox b;
    b.x_min = x0;
    b.y_min = y0;
    b.x_max = x1;
    b.y_max = y1;
    b.class_label = label;
    return b;
}

/// flatten + dense(9,2): class "a" sums all pixels, class "b" reads pixel (0,0).
Model sum_model() {
    std::vector<double> w(2 * 9, 0.0);
    for (std::size_t i = 0; i < 9; ++i) w[i] = 1.0;
    w[9 + 0] = 1.0;
    return testutil::finalize({1, 3, 3},
                              {testutil::plain_layer(LayerType::flatten), testutil::dense_layer(9, 2, w, {0.0, 0.0})},
                              {"a", "b"});
}

Tensor ramp_image() {
    Tensor img({1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) img[i] = static_cast<double>(i + 1);
    return img;
}

void mask_construction() {
    const std::vector<BoundingBox> boxes = {bbox(1, 1, 3, 3, "a"), bbox(2, 2, 4, 4, "a"), bbox(0, 0, 1, 1, "b")};

    const Tensor mask = box_union_mask(boxes, "a", 4, 4);
    CHECK(mask.shape() == std::vector<std::size_t>({4, 4}));
    // two overlapping 2x2 boxes cover 7 cells, the overlap counted once
    CHECK(mask.sum() == 7.0);
    CHECK(mask[1 * 4 + 1] == 1.0);
    CHECK(mask[2 * 4 + 2] == 1.0); // the shared cell is 1, not 2
    CHECK(mask[0 * 4 + 0] == 0.0); // "b" box ignored

    const Tensor other = box_union_mask(boxes, "b", 4, 4);
    CHECK(other.sum() == 1.0);
    CHECK(other[0] == 1.0);

    CHECK_THROWS(box_union_mask(boxes, "cat", 4, 4), Errc::no_box_for_class);

    // out-of-frame corners clamp instead of writing out of bounds
    const Tensor clamped = box_union_mask({bbox(-5, -5, 99, 1, "a")}, "a", 4, 4);
    CHECK(clamped.sum() == 4.0);

    // inversion partitions the frame
    const Tensor inv = invert_mask(mask);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        CHECK(mask[i] + inv[i] == 1.0);
        CHECK(mask[i] * inv[i] == 0.0);
    }
    const Tensor twice = invert_mask(inv);
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(twice[i] == mask[i]);
}

void occlude_semantics() {
    const Tensor img({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    const Tensor zeros({1, 2, 2});

    // left column replaced by the fill
    const Tensor mask({2, 2}, {1.0, 0.0, 1.0, 0.0});
    const Tensor occluded = occlude(img, mask, zeros);
    CHECK(occluded[0] == 0.0);
    CHECK(occluded[1] == 2.0);
    CHECK(occluded[2] == 0.0);
    CHECK(occluded[3] == 4.0);

    // empty mask is the identity, full mask is the fill, both bitwise
    const Tensor untouched = occlude(img, Tensor({2, 2}), zeros);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(untouched[i] == img[i]);
    const Tensor fill({1, 2, 2}, {0.25, 0.5, 0.75, 1.0});
    const Tensor replaced = occlude(img, Tensor::full({2, 2}, 1.0), fill);
    for (std::size_t i = 0; i < img.size(); ++i) CHECK(replaced[i] == fill[i]);

    // every channel of a masked pixel is replaced
    const Tensor rgb = Tensor::full({3, 2, 2}, 9.0);
    const Tensor rgb_fill = Tensor::full({3, 2, 2}, -1.0);
    const Tensor one_px = occlude(rgb, Tensor({2, 2}, {0.0, 1.0, 0.0, 0.0}), rgb_fill);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(one_px.at3(c, 0, 1) == -1.0);
        CHECK(one_px.at3(c, 0, 0) == 9.0);
    }

    CHECK_THROWS(occlude(Tensor({2, 2}), mask, zeros), Errc::dimension_mismatch);
    CHECK_THROWS(occlude(img, Tensor({2, 3}), zeros), Errc::dimension_mismatch);
    CHECK_THROWS(occlude(img, mask, Tensor({1, 2, 3})), Errc::dimension_mismatch);
}

void logit_deltas() {
    const Model model = sum_model();
    const Tensor x = ramp_image(); // pixel sum 45

    CHECK(delta_f(model, x, x, 0) == 0.0);

    // occluding the top-left 2x2 (values 1,2,4,5) with zeros drops the sum by 12
    const Tensor mask = box_union_mask({bbox(0, 0, 2, 2, "a")}, "a", 3, 3);
    const Tensor occluded = occlude(x, mask, Tensor({1, 3, 3}));
    CHECK_NEAR(delta_f(model, x, occluded, 0), -12.0, 1e-12);

    // class "b" only reads pixel (0,0): occluding a region it ignores changes nothing
    const Tensor far_mask = box_union_mask({bbox(1, 1, 3, 3, "b")}, "b", 3, 3);
    const Tensor far = occlude(x, far_mask, Tensor({1, 3, 3}));
    CHECK(delta_f(model, x, far, 1) == 0.0);
}

void pair_accounting() {
    const Model model = sum_model();
    const Tensor x = ramp_image();
    const Tensor mean = Tensor({1, 3, 3}); // zero fill

    const std::vector<BoundingBox> boxes = {bbox(0, 0, 2, 2, "a")};
    const OcclusionResult r = occlusion_pair(model, x, boxes, "a", mean, "img0");
    CHECK(r.image_id == "img0");
    CHECK(r.class_label == "a");
    CHECK_NEAR(r.relative_box_size, 4.0 / 9.0, 1e-15);
    CHECK_NEAR(r.delta_f_object, -12.0, 1e-12);  // lose pixels 1+2+4+5
    CHECK_NEAR(r.delta_f_context, -33.0, 1e-12); // lose the rest of 45

    // whole-frame box: the context mask is empty, so that delta is exactly 0
    const OcclusionResult whole = occlusion_pair(model, x, {bbox(0, 0, 3, 3, "a")}, "a", mean, "img0");
    CHECK(whole.relative_box_size == 1.0);
    CHECK(whole.delta_f_context == 0.0);
    CHECK_NEAR(whole.delta_f_object, -45.0, 1e-12);

    // a fill equal to the image makes both deltas vanish
    const OcclusionResult inert = occlusion_pair(model, x, boxes, "a", x, "img0");
    CHECK(inert.delta_f_object == 0.0);
    CHECK(inert.delta_f_context == 0.0);

    CHECK_THROWS(occlusion_pair(model, x, boxes, "b", mean, "img0"), Errc::no_box_for_class);
}

OcclusionResult result_of(double size, double d_obj, double d_ctx) {
    OcclusionResult r;
    r.image_id = "x";
    r.class_label = "a";
    r.relative_box_size = size;
    r.delta_f_object = d_obj;
    r.delta_f_context = d_ctx;
    return r;
}

void size_binning() {
    const std::vector<OcclusionResult> results = {
        result_of(0.003, 2.0, -1.0), // ceil(0.3) = 1 -> first bin
        result_of(0.01, 4.0, -3.0),  // ceil(1)   = 1 -> first bin
        result_of(0.25, 5.0, -5.0),  // right-closed: lands in (0.24, 0.25]
        result_of(1.0, 1.5, -0.5),
        result_of(0.999, 1.5, -0.5),
    };
    const std::vector<OcclusionBin> bins = bin_occlusion(results);
    REQUIRE(bins.size() == 100);

    CHECK(bins[0].bin_low == 0.0);
    CHECK(bins[0].bin_high == 0.01);
    CHECK(bins[0].count == 2);
    CHECK_NEAR(bins[0].mean_obj, 3.0, 1e-15);
    CHECK_NEAR(bins[0].std_obj, 1.0, 1e-15); // population deviation of {2,4}
    CHECK_NEAR(bins[0].mean_ctx, -2.0, 1e-15);
    CHECK_NEAR(bins[0].std_ctx, 1.0, 1e-15);

    CHECK(bins[24].bin_low == 0.24);
    CHECK(bins[24].bin_high == 0.25);
    CHECK(bins[24].count == 1);
    CHECK(bins[24].mean_obj == 5.0);
    CHECK(bins[24].std_obj == 0.0); // fewer than 2 samples: no deviation reported

    CHECK(bins[99].count == 2);
    CHECK(bins[99].std_obj == 0.0); // identical samples
    CHECK(bins[99].mean_obj == 1.5);

    std::size_t total = 0;
    for (const OcclusionBin& b : bins) total += b.count;
    CHECK(total == results.size());

    CHECK_THROWS(bin_occlusion({}), Errc::empty_input);
}

void experiment_enumeration() {
    const Model model = sum_model();
    const Tensor x = ramp_image();
    const Tensor mean = Tensor({1, 3, 3});

    std::vector<AnnotatedFrame> frames(2);
    frames[0] = AnnotatedFrame{"img0", 3, 3, {bbox(0, 0, 2, 2, "a"), bbox(2, 2, 3, 3, "a"), bbox(0, 0, 1, 1, "b")}};
    frames[1] = AnnotatedFrame{"img1", 3, 3, {bbox(1, 1, 3, 3, "a")}};

    const OcclusionExperiment exp = occlusion_experiment(model, frames, {x, x}, mean);
    REQUIRE(exp.results.size() == 3); // img0 contributes one result per distinct label
    CHECK(exp.results[0].image_id == "img0");
    CHECK(exp.results[0].class_label == "a");
    CHECK_NEAR(exp.results[0].relative_box_size, 5.0 / 9.0, 1e-15);
    CHECK(exp.results[1].class_label == "b");
    CHECK(exp.results[2].image_id == "img1");
    CHECK(exp.bins.size() == 100);

    CHECK_THROWS(occlusion_experiment(model, frames, {x}, mean), Errc::dimension_mismatch);
}

void csv_output() {
    TempDir tmp("occlusion-csv");
    const std::vector<OcclusionResult> results = {result_of(0.25, -12.0, -33.0)};
    const std::string csv = occlusion_to_csv(results);

    std::istringstream lines(csv);
    std::string header, row, extra;
    REQUIRE(static_cast<bool>(std::getline(lines, header)));
    CHECK(header == "image_id,class,relative_box_size,delta_f_object,delta_f_context");
    REQUIRE(static_cast<bool>(std::getline(lines, row)));
    CHECK(row == "x,a,0.25,-12,-33");
    CHECK(!std::getline(lines, extra));

    const std::vector<OcclusionBin> bins = bin_occlusion(results);
    const std::string bins_csv = occlusion_bins_to_csv(bins);
    std::istringstream bin_lines(bins_csv);
    REQUIRE(static_cast<bool>(std::getline(bin_lines, header)));
    CHECK(header == "bin_low,bin_high,mean_obj,std_obj,mean_ctx,std_ctx,count");
    std::size_t rows = 0;
    while (std::getline(bin_lines, row)) ++rows;
    CHECK(rows == 100);

    write_occlusion_csv(tmp.path / "occlusion.csv", results);
    CHECK(testutil::slurp(tmp.path / "occlusion.csv") == csv);
    write_occlusion_bins_csv(tmp.path / "bins.csv", bins);
    CHECK(testutil::slurp(tmp.path / "bins.csv") == bins_csv);
}

} // namespace

int main() {
    mask_construction();
    occlude_semantics();
    logit_deltas();
    pair_accounting();
    size_binning();
    experiment_enumeration();
    csv_output();
    return testutil::summary("test_occlusion");
}
