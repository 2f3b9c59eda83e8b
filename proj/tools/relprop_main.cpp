#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relprop/attribution_file.hpp"
#include "relprop/data.hpp"
#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"
#include "relprop/lrp.hpp"
#include "relprop/metrics.hpp"
#include "relprop/model.hpp"
#include "relprop/occlusion.hpp"
#include "relprop/parallel.hpp"
#include "relprop/render.hpp"

namespace {

using namespace relprop;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_shape(const std::vector<std::size_t>& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

PreprocessMode parse_preprocess(const std::string& name) {
    if (name == "stretch") return PreprocessMode::stretch_resize;
    if (name == "crop") return PreprocessMode::shortest_side_center_crop;
    fail(Errc::invalid_config, "unknown preprocess mode '" + name + "' (expected stretch or crop)");
}

ChannelPoolOrder parse_pool_order(const std::string& name) {
    if (name == "sum-then-pos") return ChannelPoolOrder::sum_then_pos;
    if (name == "pos-then-sum") return ChannelPoolOrder::pos_then_sum;
    fail(Errc::invalid_config, "unknown pool order '" + name + "' (expected sum-then-pos or pos-then-sum)");
}

/// Decodes and, when dimensions differ from the model input, preprocesses an
/// image together with its annotation.
struct PreparedImage {
    Tensor pixels;
    Annotation annotation;
    std::vector<BoundingBox> dropped;
};

PreparedImage prepare(const Model& model, const ImageSample& sample, const Annotation& annotation, PreprocessMode mode) {
    if (sample.pixels.extent(0) != model.input_shape.c) {
        fail(Errc::shape_mismatch, sample.image_id + ": image has " + std::to_string(sample.pixels.extent(0)) +
                                       " channels, model wants " + std::to_string(model.input_shape.c));
    }
    Preprocessed pre = preprocess(sample, annotation, mode, model.input_shape.h, model.input_shape.w);
    return {std::move(pre.pixels), std::move(pre.annotation), std::move(pre.dropped)};
}

// ---------------------------------------------------------------------------
// attribute
// ---------------------------------------------------------------------------

struct AttributeArgs {
    std::string model_path, config_path, image_path, class_name, out_dir;
    std::string preprocess_mode = "stretch";
    std::string pool_order = "sum-then-pos";
    double clip_percentile = 100.0;
};

int cmd_attribute(const AttributeArgs& args) {
    const Model model = load_model(args.model_path);
    const CompositeConfig config = CompositeConfig::load(args.config_path);
    const std::size_t class_index = model.class_index(args.class_name);

    const std::string image_id = std::filesystem::path(args.image_path).stem().string();
    const ImageSample sample = load_image_sample(args.image_path, image_id);
    const PreparedImage prepared = prepare(model, sample, Annotation{image_id, {}}, parse_preprocess(args.preprocess_mode));

    const AttributionMap map = attribute(model, prepared.pixels, class_index, config);

    std::filesystem::create_directories(args.out_dir);
    const std::filesystem::path base = std::filesystem::path(args.out_dir) / (image_id + "_" + args.class_name);
    const std::filesystem::path attr_path = base.string() + ".attr";
    const std::filesystem::path png_path = base.string() + ".png";

    write_attribution(attr_path, map);
    const Heatmap2D heat = pool_channels(map, parse_pool_order(args.pool_order));
    write_image(colorize(heat, args.clip_percentile), png_path);

    std::cout << "class " << args.class_name << " (index " << class_index << ")\n";
    std::cout << "logit " << fmt(map.output_logit) << "\n";
    std::cout << "relevance_sum " << fmt(map.relevance.sum()) << "\n";
    std::cout << "digest " << map.config_digest << "\n";
    std::cout << "wrote " << attr_path.string() << "\n";
    std::cout << "wrote " << png_path.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
    std::string model_path, dataset_path, config_path, out_dir;
    std::string preprocess_mode = "stretch";
    std::string pool_order = "sum-then-pos";
    std::size_t jobs = 1;
};

int cmd_evaluate(const EvaluateArgs& args) {
    const Model model = load_model(args.model_path);
    const CompositeConfig config = CompositeConfig::load(args.config_path);
    const DatasetIndex dataset = load_dataset(args.dataset_path);
    const PreprocessMode mode = parse_preprocess(args.preprocess_mode);
    const ChannelPoolOrder order = parse_pool_order(args.pool_order);

    std::filesystem::create_directories(args.out_dir);
    const std::filesystem::path scores_path = std::filesystem::path(args.out_dir) / "scores.csv";
    const std::filesystem::path summary_path = std::filesystem::path(args.out_dir) / "summary.csv";

    // Resume support: pairs already present in scores.csv are reused verbatim.
    std::map<std::pair<std::string, std::string>, LocalizationScore> done;
    if (std::filesystem::exists(scores_path)) {
        for (LocalizationScore& s : scores_from_csv(read_text_file(scores_path))) {
            done.emplace(std::make_pair(s.image_id, s.class_label), std::move(s));
        }
        std::cerr << "resuming: " << done.size() << " scored pairs found in " << scores_path.string() << "\n";
    }

    struct Slot {
        std::vector<LocalizationScore> scores;
        std::optional<AnnotatedFrame> frame;
        std::string error;
    };
    std::vector<Slot> slots(dataset.items.size());
    std::mutex log_mutex;

    parallel_for(dataset.items.size(), args.jobs, [&](std::size_t i) {
        const DatasetItem& item = dataset.items[i];
        Slot& slot = slots[i];
        try {
            const Annotation annotation = load_annotation(item.annotation_path);
            const ImageSample sample = load_image_sample(item.image_path, item.image_id);
            PreparedImage prepared = prepare(model, sample, annotation, mode);
            for (const BoundingBox& box : prepared.dropped) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << "note: " << item.image_id << ": box of class '" << box.class_label
                          << "' left the frame during preprocessing and was dropped\n";
            }

            AnnotatedFrame frame;
            frame.image_id = item.image_id;
            frame.height = model.input_shape.h;
            frame.width = model.input_shape.w;
            frame.boxes = prepared.annotation.boxes;

            std::set<std::string> labels;
            for (const BoundingBox& box : frame.boxes) labels.insert(box.class_label);
            for (const std::string& label : labels) {
                if (auto it = done.find({item.image_id, label}); it != done.end()) {
                    slot.scores.push_back(it->second);
                    continue;
                }
                const AttributionMap map = attribute(model, prepared.pixels, model.class_index(label), config);
                const Heatmap2D heat = pool_channels(map, order);
                slot.scores.push_back(localization_score(heat, frame.boxes, label, item.image_id));
            }
            slot.frame = std::move(frame);
        } catch (const Error& e) {
            slot.error = e.what();
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
        {
            std::lock_guard<std::mutex> lock(log_mutex);
            if (!slot.error.empty()) {
                std::cerr << "error: " << item.image_id << ": " << slot.error << "\n";
            }
        }
    });

    std::vector<LocalizationScore> scores;
    std::vector<AnnotatedFrame> frames;
    std::size_t failures = 0;
    for (Slot& slot : slots) {
        if (!slot.error.empty()) {
            ++failures;
            continue;
        }
        for (LocalizationScore& s : slot.scores) scores.push_back(std::move(s));
        if (slot.frame) frames.push_back(std::move(*slot.frame));
    }
    if (scores.empty()) {
        std::cerr << "error: dataset produced no scorable (image, class) pairs\n";
        return 2;
    }
    std::sort(scores.begin(), scores.end(), [](const LocalizationScore& a, const LocalizationScore& b) {
        return std::tie(a.image_id, a.class_label) < std::tie(b.image_id, b.class_label);
    });

    write_scores_csv(scores_path, scores);
    const AggregateReport report = aggregate(scores);
    const AggregateReport baseline = baseline_report(frames);
    write_summary_csv(summary_path, report, &baseline);

    std::cout << "scored " << scores.size() << " (image, class) pairs over " << frames.size() << " images\n";
    std::cout << "mean_mu_w " << fmt(report.mean_mu_w) << "\n";
    std::cout << "mean_mu " << fmt(report.mean_mu) << "\n";
    std::cout << "baseline_mu_w " << fmt(baseline.mean_mu_w) << "\n";
    std::cout << "wrote " << scores_path.string() << "\n";
    std::cout << "wrote " << summary_path.string() << "\n";
    if (failures) {
        std::cerr << failures << " image(s) failed\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// occlusion
// ---------------------------------------------------------------------------

struct OcclusionArgs {
    std::string model_path, dataset_path, out_dir;
    std::string preprocess_mode = "stretch";
    std::size_t jobs = 1;
};

int cmd_occlusion(const OcclusionArgs& args) {
    const Model model = load_model(args.model_path);
    const DatasetIndex dataset = load_dataset(args.dataset_path);
    const PreprocessMode mode = parse_preprocess(args.preprocess_mode);

    struct Loaded {
        Tensor pixels;
        AnnotatedFrame frame;
        bool ok = false;
        std::string error;
    };
    std::vector<Loaded> loaded(dataset.items.size());
    std::mutex log_mutex;

    parallel_for(dataset.items.size(), args.jobs, [&](std::size_t i) {
        const DatasetItem& item = dataset.items[i];
        try {
            const Annotation annotation = load_annotation(item.annotation_path);
            const ImageSample sample = load_image_sample(item.image_path, item.image_id);
            PreparedImage prepared = prepare(model, sample, annotation, mode);
            loaded[i].pixels = std::move(prepared.pixels);
            loaded[i].frame = {item.image_id, model.input_shape.h, model.input_shape.w, std::move(prepared.annotation.boxes)};
            loaded[i].ok = true;
        } catch (const std::exception& e) {
            loaded[i].error = e.what();
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "error: " << item.image_id << ": " << e.what() << "\n";
        }
    });

    std::vector<Tensor> images;
    std::vector<AnnotatedFrame> frames;
    std::size_t failures = 0;
    for (Loaded& l : loaded) {
        if (!l.ok) {
            ++failures;
            continue;
        }
        images.push_back(std::move(l.pixels));
        frames.push_back(std::move(l.frame));
    }
    if (images.empty()) {
        std::cerr << "error: no usable images in the dataset\n";
        return 2;
    }
    const Tensor mean_image = dataset_mean(images);

    struct Pair {
        std::size_t frame_index;
        std::string label;
    };
    std::vector<Pair> pairs;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        std::set<std::string> labels;
        for (const BoundingBox& box : frames[i].boxes) labels.insert(box.class_label);
        for (const std::string& label : labels) pairs.push_back({i, label});
    }
    if (pairs.empty()) {
        std::cerr << "error: no annotated (image, class) pairs\n";
        return 2;
    }

    std::vector<OcclusionResult> results(pairs.size());
    std::vector<std::string> pair_errors(pairs.size());
    parallel_for(pairs.size(), args.jobs, [&](std::size_t i) {
        const Pair& p = pairs[i];
        try {
            results[i] =
                occlusion_pair(model, images[p.frame_index], frames[p.frame_index].boxes, p.label, mean_image,
                               frames[p.frame_index].image_id);
        } catch (const std::exception& e) {
            pair_errors[i] = e.what();
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "error: " << frames[p.frame_index].image_id << "/" << p.label << ": " << e.what() << "\n";
        }
    });

    std::vector<OcclusionResult> good;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (pair_errors[i].empty()) good.push_back(std::move(results[i]));
        else ++failures;
    }
    if (good.empty()) {
        std::cerr << "error: every occlusion pair failed\n";
        return 2;
    }
    std::sort(good.begin(), good.end(), [](const OcclusionResult& a, const OcclusionResult& b) {
        return std::tie(a.image_id, a.class_label) < std::tie(b.image_id, b.class_label);
    });

    std::filesystem::create_directories(args.out_dir);
    const std::filesystem::path results_path = std::filesystem::path(args.out_dir) / "occlusion.csv";
    const std::filesystem::path bins_path = std::filesystem::path(args.out_dir) / "occlusion_bins.csv";
    write_occlusion_csv(results_path, good);
    write_occlusion_bins_csv(bins_path, bin_occlusion(good));

    std::cout << "measured " << good.size() << " (image, class) pairs\n";
    std::cout << "wrote " << results_path.string() << "\n";
    std::cout << "wrote " << bins_path.string() << "\n";
    if (failures) {
        std::cerr << failures << " item(s) failed\n";
        return 1;
    }
    return 0;
}

// ---------------------------------------------------------------------------
// render / inspect
// ---------------------------------------------------------------------------

struct RenderArgs {
    std::string attr_path, out_path;
    std::string pool_order = "sum-then-pos";
    double clip_percentile = 100.0;
};

int cmd_render(const RenderArgs& args) {
    const AttributionMap map = read_attribution(args.attr_path);
    const Heatmap2D heat = pool_channels(map, parse_pool_order(args.pool_order));
    write_image(colorize(heat, args.clip_percentile), args.out_path);
    std::cout << "class_index " << map.class_index << "\n";
    std::cout << "logit " << fmt(map.output_logit) << "\n";
    std::cout << "digest " << map.config_digest << "\n";
    std::cout << "wrote " << args.out_path << "\n";
    return 0;
}

struct InspectArgs {
    std::string model_path;
    std::string config_path;
};

std::string describe_layer(const LayerSpec& layer) {
    std::ostringstream out;
    switch (layer.type) {
        case LayerType::dense:
            out << "dense " << layer.in_features << " -> " << layer.out_features;
            break;
        case LayerType::conv2d:
            out << "conv2d " << layer.in_channels << " -> " << layer.out_channels << ", kernel " << layer.kernel_h << "x"
                << layer.kernel_w << ", stride " << layer.stride_h << "x" << layer.stride_w << ", pad [" << layer.pad_top
                << "," << layer.pad_bottom << "," << layer.pad_left << "," << layer.pad_right << "]";
            break;
        case LayerType::maxpool2d:
        case LayerType::avgpool2d:
            out << layer_type_name(layer.type) << " window " << layer.kernel_h << "x" << layer.kernel_w << ", stride "
                << layer.stride_h << "x" << layer.stride_w;
            break;
        case LayerType::relu:
        case LayerType::flatten:
            out << layer_type_name(layer.type);
            break;
    }
    return out.str();
}

int cmd_inspect(const InspectArgs& args) {
    const Model model = load_model(args.model_path);
    char crc_hex[16];
    std::snprintf(crc_hex, sizeof crc_hex, "%08x", model.blob_crc32);

    std::cout << "input (" << model.input_shape.c << "," << model.input_shape.h << "," << model.input_shape.w << ")\n";
    std::cout << "classes " << model.class_labels.size() << " [";
    for (std::size_t i = 0; i < model.class_labels.size(); ++i) {
        std::cout << (i ? " " : "") << model.class_labels[i];
    }
    std::cout << "]\n";
    std::cout << "weights crc32 " << crc_hex << "\n";

    std::vector<Rule> rules;
    if (!args.config_path.empty()) {
        rules = resolve_rules(model, CompositeConfig::load(args.config_path));
    }
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        std::cout << i << ": " << describe_layer(model.layers[i]) << " -> " << fmt_shape(model.output_shapes[i]);
        if (!rules.empty()) std::cout << "  [" << rules[i].canonical() << "]";
        std::cout << "\n";
    }
    if (!rules.empty()) {
        std::cout << "config digest (class 0) " << config_digest(model, 0, rules) << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"relevance attribution toolbox"};
    app.require_subcommand(1);

    AttributeArgs attr_args;
    CLI::App* attr = app.add_subcommand("attribute", "attribute one image for one class");
    attr->add_option("--model", attr_args.model_path, "model manifest path")->required();
    attr->add_option("--config", attr_args.config_path, "composite config path")->required();
    attr->add_option("--image", attr_args.image_path, "input image (PNG or PPM)")->required();
    attr->add_option("--class", attr_args.class_name, "class label")->required();
    attr->add_option("--out", attr_args.out_dir, "output directory")->required();
    attr->add_option("--preprocess", attr_args.preprocess_mode, "stretch|crop (default stretch)");
    attr->add_option("--pool-order", attr_args.pool_order, "sum-then-pos|pos-then-sum");
    attr->add_option("--clip-percentile", attr_args.clip_percentile, "render normalization percentile (default 100)");

    EvaluateArgs eval_args;
    CLI::App* eval = app.add_subcommand("evaluate", "score attributions against ground-truth boxes");
    eval->add_option("--model", eval_args.model_path, "model manifest path")->required();
    eval->add_option("--dataset", eval_args.dataset_path, "dataset manifest path")->required();
    eval->add_option("--config", eval_args.config_path, "composite config path")->required();
    eval->add_option("--out", eval_args.out_dir, "output directory")->required();
    eval->add_option("--preprocess", eval_args.preprocess_mode, "stretch|crop (default stretch)");
    eval->add_option("--pool-order", eval_args.pool_order, "sum-then-pos|pos-then-sum");
    eval->add_option("--jobs", eval_args.jobs, "worker count (default 1)");

    OcclusionArgs occ_args;
    CLI::App* occ = app.add_subcommand("occlusion", "object vs. context occlusion experiment");
    occ->add_option("--model", occ_args.model_path, "model manifest path")->required();
    occ->add_option("--dataset", occ_args.dataset_path, "dataset manifest path")->required();
    occ->add_option("--out", occ_args.out_dir, "output directory")->required();
    occ->add_option("--preprocess", occ_args.preprocess_mode, "stretch|crop (default stretch)");
    occ->add_option("--jobs", occ_args.jobs, "worker count (default 1)");

    RenderArgs render_args;
    CLI::App* render = app.add_subcommand("render", "render a stored attribution to PNG");
    render->add_option("--attr", render_args.attr_path, "attribution file")->required();
    render->add_option("--out", render_args.out_path, "output PNG path")->required();
    render->add_option("--pool-order", render_args.pool_order, "sum-then-pos|pos-then-sum");
    render->add_option("--clip-percentile", render_args.clip_percentile, "normalization percentile (default 100)");

    InspectArgs inspect_args;
    CLI::App* inspect = app.add_subcommand("inspect", "print the layer table and resolved rules");
    inspect->add_option("--model", inspect_args.model_path, "model manifest path")->required();
    inspect->add_option("--config", inspect_args.config_path, "composite config path (optional)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(attr)) return cmd_attribute(attr_args);
        if (app.got_subcommand(eval)) return cmd_evaluate(eval_args);
        if (app.got_subcommand(occ)) return cmd_occlusion(occ_args);
        if (app.got_subcommand(render)) return cmd_render(render_args);
        if (app.got_subcommand(inspect)) return cmd_inspect(inspect_args);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
