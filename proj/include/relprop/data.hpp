#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relprop/image_io.hpp"
#include "relprop/metrics.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

/// Decoded image as the network sees it: (C,H,W) float64 scaled to [0,1].
struct ImageSample {
    std::string image_id;
    Tensor pixels;
    std::size_t original_h = 0;
    std::size_t original_w = 0;
};

struct Annotation {
    std::string image_id;
    std::vector<BoundingBox> boxes;
};

/// u8 (interleaved) to (C,H,W) float64 in [0,1].
ImageSample sample_from_u8(const ImageU8& image, const std::string& image_id);
ImageSample load_image_sample(const std::filesystem::path& path, const std::string& image_id);

/// VOC-style XML: `annotation/filename` and repeated
/// `object/name` + `object/bndbox/{xmin,ymin,xmax,ymax}`. VOC coordinates are
/// 1-based with inclusive max; they leave the parser 0-based with exclusive
/// max, so box width is x_max - x_min everywhere downstream.
Annotation parse_voc_annotation(const std::string& document);

/// The JSON alternative: {"image_id":.., "boxes":[{"label","x_min","y_min",
/// "x_max","y_max"}]}, already 0-based exclusive-max.
Annotation parse_boxes_json(const std::string& document);

Annotation load_annotation(const std::filesystem::path& path);

enum class PreprocessMode { stretch_resize, shortest_side_center_crop };

struct Preprocessed {
    Tensor pixels; // (C, target_h, target_w)
    Annotation annotation;
    std::vector<BoundingBox> dropped; // boxes whose clipped area hit 0
};

/// Bilinear resample with half-pixel centers. Constant images stay constant
/// exactly.
Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w);

/// Geometry + box bookkeeping for the two evaluation setups: independent
/// per-axis stretch, or uniform scale to cover the target followed by a
/// center crop. Box coordinates ride along (rounded to nearest), get clipped
/// to the target frame, and are dropped (reported, not discarded silently)
/// when clipping empties them.
Preprocessed preprocess(const ImageSample& sample, const Annotation& annotation, PreprocessMode mode,
                        std::size_t target_h, std::size_t target_w, bool allow_upscale = true);

/// Per-pixel, per-channel arithmetic mean over same-shaped tensors.
Tensor dataset_mean(const std::vector<Tensor>& images);

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

struct DatasetManifest {
    std::filesystem::path images_dir;
    std::filesystem::path annotations_dir;
    std::string annotation_format; // "voc-xml" | "boxes-json"
    std::vector<std::string> classes;
};

struct DatasetItem {
    std::string image_id; // file stem
    std::filesystem::path image_path;
    std::filesystem::path annotation_path;
};

struct DatasetIndex {
    DatasetManifest manifest;
    std::vector<DatasetItem> items; // sorted by image_id
};

DatasetManifest load_dataset_manifest(const std::filesystem::path& path);

/// Pairs images with annotations by file stem; items without a matching
/// annotation file are an error, surplus annotations are ignored.
DatasetIndex load_dataset(const std::filesystem::path& manifest_path);

} // namespace relprop
