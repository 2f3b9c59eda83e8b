#include "relprop/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"

namespace relprop {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Tensor box_union_mask(const std::vector<BoundingBox>& boxes, const std::string& label, std::size_t height,
                      std::size_t width) {
    Tensor mask({height, width});
    bool any = false;
    for (const BoundingBox& box : boxes) {
        if (box.class_label != label) continue;
        any = true;
        const std::size_t y0 = static_cast<std::size_t>(std::clamp<std::int64_t>(box.y_min, 0, static_cast<std::int64_t>(height)));
        const std::size_t y1 = static_cast<std::size_t>(std::clamp<std::int64_t>(box.y_max, 0, static_cast<std::int64_t>(height)));
        const std::size_t x0 = static_cast<std::size_t>(std::clamp<std::int64_t>(box.x_min, 0, static_cast<std::int64_t>(width)));
        const std::size_t x1 = static_cast<std::size_t>(std::clamp<std::int64_t>(box.x_max, 0, static_cast<std::int64_t>(width)));
        for (std::size_t y = y0; y < y1; ++y) {
            std::fill(&mask[y * width + x0], &mask[y * width + x1], 1.0);
        }
    }
    if (!any) fail(Errc::no_box_for_class, "no box carries class '" + label + "'");
    return mask;
}

Tensor invert_mask(const Tensor& mask) {
    Tensor out(mask.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] == 0.0 ? 1.0 : 0.0;
    return out;
}

Tensor occlude(const Tensor& image, const Tensor& mask, const Tensor& fill) {
    if (image.rank() != 3) fail(Errc::dimension_mismatch, "occlude expects a (C,H,W) image");
    if (!image.same_shape(fill)) {
        fail(Errc::dimension_mismatch,
             "fill shape " + shape_to_string(fill.shape()) + " does not match image " + shape_to_string(image.shape()));
    }
    if (mask.rank() != 2 || mask.extent(0) != image.extent(1) || mask.extent(1) != image.extent(2)) {
        fail(Errc::dimension_mismatch,
             "mask shape " + shape_to_string(mask.shape()) + " does not match image " + shape_to_string(image.shape()));
    }
    const std::size_t C = image.extent(0), H = image.extent(1), W = image.extent(2);
    Tensor out = image;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            if (mask[y * W + x] == 0.0) continue;
            for (std::size_t c = 0; c < C; ++c) out.at3(c, y, x) = fill.at3(c, y, x);
        }
    }
    return out;
}

double delta_f(const Model& model, const Tensor& x, const Tensor& x_occluded, std::size_t class_index) {
    const double before = logit(forward(model, x), class_index);
    const double after = logit(forward(model, x_occluded), class_index);
    return after - before;
}

OcclusionResult occlusion_pair(const Model& model, const Tensor& image, const std::vector<BoundingBox>& boxes,
                               const std::string& label, const Tensor& mean_image, const std::string& image_id) {
    const std::size_t H = image.extent(1), W = image.extent(2);
    const Tensor object_mask = box_union_mask(boxes, label, H, W);
    const Tensor context_mask = invert_mask(object_mask);

    OcclusionResult result;
    result.image_id = image_id;
    result.class_label = label;
    result.relative_box_size = object_mask.sum() / static_cast<double>(H * W);

    const std::size_t class_index = model.class_index(label);
    const double base = logit(forward(model, image), class_index);
    result.delta_f_object = logit(forward(model, occlude(image, object_mask, mean_image)), class_index) - base;
    result.delta_f_context = logit(forward(model, occlude(image, context_mask, mean_image)), class_index) - base;
    return result;
}

std::vector<OcclusionBin> bin_occlusion(const std::vector<OcclusionResult>& results) {
    if (results.empty()) fail(Errc::empty_input, "cannot bin zero occlusion results");

    std::vector<OcclusionBin> bins(100);
    std::vector<std::vector<const OcclusionResult*>> members(100);
    for (std::size_t b = 0; b < 100; ++b) {
        bins[b].bin_low = static_cast<double>(b) / 100.0;
        bins[b].bin_high = static_cast<double>(b + 1) / 100.0;
    }
    for (const OcclusionResult& r : results) {
        // same right-closed convention as the metric bins
        const std::size_t idx =
            std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(r.relative_box_size * 100.0)), 1, 100) - 1;
        members[idx].push_back(&r);
    }
    for (std::size_t b = 0; b < 100; ++b) {
        const auto& group = members[b];
        OcclusionBin& bin = bins[b];
        bin.count = group.size();
        if (group.empty()) continue;
        for (const OcclusionResult* r : group) {
            bin.mean_obj += r->delta_f_object;
            bin.mean_ctx += r->delta_f_context;
        }
        bin.mean_obj /= static_cast<double>(group.size());
        bin.mean_ctx /= static_cast<double>(group.size());
        if (group.size() >= 2) {
            double var_obj = 0.0, var_ctx = 0.0;
            for (const OcclusionResult* r : group) {
                var_obj += (r->delta_f_object - bin.mean_obj) * (r->delta_f_object - bin.mean_obj);
                var_ctx += (r->delta_f_context - bin.mean_ctx) * (r->delta_f_context - bin.mean_ctx);
            }
            // population formula
            bin.std_obj = std::sqrt(var_obj / static_cast<double>(group.size()));
            bin.std_ctx = std::sqrt(var_ctx / static_cast<double>(group.size()));
        }
    }
    return bins;
}

OcclusionExperiment occlusion_experiment(const Model& model, const std::vector<AnnotatedFrame>& frames,
                                         const std::vector<Tensor>& images, const Tensor& mean_image) {
    if (frames.size() != images.size()) {
        fail(Errc::dimension_mismatch, "frame/image count mismatch: " + std::to_string(frames.size()) + " vs " +
                                           std::to_string(images.size()));
    }
    OcclusionExperiment experiment;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::set<std::string> labels;
        for (const BoundingBox& box : frames[i].boxes) labels.insert(box.class_label);
        for (const std::string& label : labels) {
            experiment.results.push_back(
                occlusion_pair(model, images[i], frames[i].boxes, label, mean_image, frames[i].image_id));
        }
    }
    experiment.bins = bin_occlusion(experiment.results);
    return experiment;
}

std::string occlusion_to_csv(const std::vector<OcclusionResult>& results) {
    std::ostringstream out;
    out << "image_id,class,relative_box_size,delta_f_object,delta_f_context\n";
    for (const OcclusionResult& r : results) {
        out << r.image_id << "," << r.class_label << "," << fmt(r.relative_box_size) << "," << fmt(r.delta_f_object)
            << "," << fmt(r.delta_f_context) << "\n";
    }
    return out.str();
}

std::string occlusion_bins_to_csv(const std::vector<OcclusionBin>& bins) {
    std::ostringstream out;
    out << "bin_low,bin_high,mean_obj,std_obj,mean_ctx,std_ctx,count\n";
    for (const OcclusionBin& bin : bins) {
        out << fmt(bin.bin_low) << "," << fmt(bin.bin_high) << "," << fmt(bin.mean_obj) << "," << fmt(bin.std_obj) << ","
            << fmt(bin.mean_ctx) << "," << fmt(bin.std_ctx) << "," << bin.count << "\n";
    }
    return out.str();
}

void write_occlusion_csv(const std::filesystem::path& path, const std::vector<OcclusionResult>& results) {
    write_text_file(path, occlusion_to_csv(results));
}

void write_occlusion_bins_csv(const std::filesystem::path& path, const std::vector<OcclusionBin>& bins) {
    write_text_file(path, occlusion_bins_to_csv(bins));
}

} // namespace relprop
