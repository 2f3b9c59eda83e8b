#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relprop/metrics.hpp"
#include "relprop/model.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Logit change when occluding the object region vs. its complement for one
/// (image, class) pair.
struct OcclusionResult {
    std::string image_id;
    std::string class_label;
    double relative_box_size = 0.0; // S_in / S_tot of the class's box union
    double delta_f_object = 0.0;    // f(object occluded) - f(x)
    double delta_f_context = 0.0;   // f(context occluded) - f(x)
};

struct OcclusionBin {
    double bin_low = 0.0;
    double bin_high = 0.0;
    double mean_obj = 0.0;
    double std_obj = 0.0;
    double mean_ctx = 0.0;
    double std_ctx = 0.0;
    std::size_t count = 0;
};

/// (H,W) mask of 1s over the union of boxes carrying `label`, 0 elsewhere.
Tensor box_union_mask(const std::vector<BoundingBox>& boxes, const std::string& label, std::size_t height,
                      std::size_t width);

Tensor invert_mask(const Tensor& mask);

/// Pixels where mask(y,x) = 1 are replaced by fill, all channels; everything
/// else is copied bit-identically.
Tensor occlude(const Tensor& image, const Tensor& mask, const Tensor& fill);

double delta_f(const Model& model, const Tensor& x, const Tensor& x_occluded, std::size_t class_index);

/// One (image, class) pair: occlude the box union, then its complement, both
/// filled from mean_image; measures the logit deltas for the class.
OcclusionResult occlusion_pair(const Model& model, const Tensor& image, const std::vector<BoundingBox>& boxes,
                               const std::string& label, const Tensor& mean_image, const std::string& image_id);

/// Population mean/standard deviation of both deltas over 100 relative-size
/// bins; bins with fewer than 2 samples report 0 deviation.
std::vector<OcclusionBin> bin_occlusion(const std::vector<OcclusionResult>& results);

struct OcclusionExperiment {
    std::vector<OcclusionResult> results;
    std::vector<OcclusionBin> bins;
};

/// Sequential convenience: every (frame, class-with-boxes) pair against a
/// shared mean image.
OcclusionExperiment occlusion_experiment(const Model& model, const std::vector<AnnotatedFrame>& frames,
                                         const std::vector<Tensor>& images, const Tensor& mean_image);

std::string occlusion_to_csv(const std::vector<OcclusionResult>& results);
std::string occlusion_bins_to_csv(const std::vector<OcclusionBin>& bins);
void write_occlusion_csv(const std::filesystem::path& path, const std::vector<OcclusionResult>& results);
void write_occlusion_bins_csv(const std::filesystem::path& path, const std::vector<OcclusionBin>& bins);

} // namespace relprop
