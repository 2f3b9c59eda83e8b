#include "relprop/data.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "relprop/errors.hpp"
#include "relprop/io_util.hpp"

namespace relprop {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Image samples
// ---------------------------------------------------------------------------

ImageSample sample_from_u8(const ImageU8& image, const std::string& image_id) {
    ImageSample sample;
    sample.image_id = image_id;
    sample.original_h = image.height;
    sample.original_w = image.width;
    Tensor pixels({image.channels, image.height, image.width});
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t y = 0; y < image.height; ++y) {
            for (std::size_t x = 0; x < image.width; ++x) {
                pixels.at3(c, y, x) = static_cast<double>(image.at(y, x, c)) / 255.0;
            }
        }
    }
    sample.pixels = std::move(pixels);
    return sample;
}

ImageSample load_image_sample(const std::filesystem::path& path, const std::string& image_id) {
    return sample_from_u8(read_image(path), image_id);
}

// ---------------------------------------------------------------------------
// VOC-style XML
// ---------------------------------------------------------------------------

namespace {

struct XmlNode {
    std::string name;
    std::string text;
    std::vector<XmlNode> children;

    const XmlNode* child(const std::string& tag) const {
        for (const XmlNode& c : children) {
            if (c.name == tag) return &c;
        }
        return nullptr;
    }
};

struct XmlCursor {
    const std::string& doc;
    std::size_t pos = 0;

    bool eof() const { return pos >= doc.size(); }
    char peek() const { return doc[pos]; }

    void skip_ws() {
        while (!eof() && (doc[pos] == ' ' || doc[pos] == '\t' || doc[pos] == '\r' || doc[pos] == '\n')) ++pos;
    }

    void skip_misc() {
        // prolog, comments, doctype — anything in <? ?>, <!-- -->, <! >
        for (;;) {
            skip_ws();
            if (eof() || doc[pos] != '<' || pos + 1 >= doc.size()) return;
            if (doc[pos + 1] == '?') {
                const std::size_t end = doc.find("?>", pos);
                if (end == std::string::npos) fail(Errc::malformed_document, "unterminated XML declaration");
                pos = end + 2;
            } else if (doc.compare(pos, 4, "<!--") == 0) {
                const std::size_t end = doc.find("-->", pos);
                if (end == std::string::npos) fail(Errc::malformed_document, "unterminated XML comment");
                pos = end + 3;
            } else if (doc[pos + 1] == '!') {
                const std::size_t end = doc.find('>', pos);
                if (end == std::string::npos) fail(Errc::malformed_document, "unterminated XML directive");
                pos = end + 1;
            } else {
                return;
            }
        }
    }
};

std::string decode_entities(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != '&') {
            out.push_back(raw[i]);
            continue;
        }
        const std::size_t semi = raw.find(';', i);
        const std::string entity = semi == std::string::npos ? "" : raw.substr(i + 1, semi - i - 1);
        if (entity == "amp") out.push_back('&');
        else if (entity == "lt") out.push_back('<');
        else if (entity == "gt") out.push_back('>');
        else if (entity == "quot") out.push_back('"');
        else if (entity == "apos") out.push_back('\'');
        else fail(Errc::malformed_document, "unknown XML entity '&" + entity + ";'");
        i = semi;
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r' || s[a] == '\n')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r' || s[b - 1] == '\n')) --b;
    return s.substr(a, b - a);
}

XmlNode parse_element(XmlCursor& cur) {
    if (cur.eof() || cur.peek() != '<') fail(Errc::malformed_document, "expected an XML element");
    ++cur.pos;
    XmlNode node;
    while (!cur.eof() && (std::isalnum(static_cast<unsigned char>(cur.peek())) || cur.peek() == '_' || cur.peek() == '-')) {
        node.name.push_back(cur.doc[cur.pos++]);
    }
    if (node.name.empty()) fail(Errc::malformed_document, "empty XML tag name");

    // attributes are tolerated and ignored
    const std::size_t close = cur.doc.find('>', cur.pos);
    if (close == std::string::npos) fail(Errc::malformed_document, "unterminated tag <" + node.name + ">");
    const bool self_closing = close > cur.pos && cur.doc[close - 1] == '/';
    cur.pos = close + 1;
    if (self_closing) return node;

    std::string text;
    for (;;) {
        cur.skip_misc();
        if (cur.eof()) fail(Errc::malformed_document, "unterminated element <" + node.name + ">");
        if (cur.peek() == '<') {
            if (cur.pos + 1 < cur.doc.size() && cur.doc[cur.pos + 1] == '/') {
                const std::size_t end = cur.doc.find('>', cur.pos);
                if (end == std::string::npos) fail(Errc::malformed_document, "unterminated closing tag");
                const std::string closing = trim(cur.doc.substr(cur.pos + 2, end - cur.pos - 2));
                if (closing != node.name) {
                    fail(Errc::malformed_document, "mismatched closing tag </" + closing + "> for <" + node.name + ">");
                }
                cur.pos = end + 1;
                node.text = trim(decode_entities(text));
                return node;
            }
            node.children.push_back(parse_element(cur));
        } else {
            text.push_back(cur.doc[cur.pos++]);
        }
    }
}

std::int64_t voc_coordinate(const XmlNode& bndbox, const char* tag, const std::string& where) {
    const XmlNode* node = bndbox.child(tag);
    if (!node) fail(Errc::missing_field, "missing <" + std::string(tag) + "> in " + where);
    try {
        return std::llround(std::stod(node->text));
    } catch (const std::exception&) {
        fail(Errc::malformed_document, "unparseable coordinate '" + node->text + "' in " + where);
    }
}

} // namespace

Annotation parse_voc_annotation(const std::string& document) {
    XmlCursor cur{document};
    cur.skip_misc();
    const XmlNode root = parse_element(cur);
    if (root.name != "annotation") {
        fail(Errc::malformed_document, "expected <annotation> root, got <" + root.name + ">");
    }

    Annotation annotation;
    const XmlNode* filename = root.child("filename");
    if (!filename || filename->text.empty()) fail(Errc::missing_field, "missing <filename>");
    annotation.image_id = std::filesystem::path(filename->text).stem().string();

    // optional frame size, used to clip boxes to the image
    std::int64_t frame_w = -1, frame_h = -1;
    if (const XmlNode* size = root.child("size")) {
        if (const XmlNode* w = size->child("width")) frame_w = std::llround(std::stod(w->text));
        if (const XmlNode* h = size->child("height")) frame_h = std::llround(std::stod(h->text));
    }

    for (const XmlNode& object : root.children) {
        if (object.name != "object") continue;
        const XmlNode* name = object.child("name");
        if (!name || name->text.empty()) fail(Errc::missing_field, "missing <name> in <object>");
        const XmlNode* bndbox = object.child("bndbox");
        if (!bndbox) fail(Errc::missing_field, "missing <bndbox> in <object> '" + name->text + "'");

        const std::string where = "<object> '" + name->text + "'";
        BoundingBox box;
        // VOC is 1-based with inclusive max; shift the minimum only.
        box.x_min = voc_coordinate(*bndbox, "xmin", where) - 1;
        box.y_min = voc_coordinate(*bndbox, "ymin", where) - 1;
        box.x_max = voc_coordinate(*bndbox, "xmax", where);
        box.y_max = voc_coordinate(*bndbox, "ymax", where);
        box.class_label = name->text;
        box.x_min = std::max<std::int64_t>(box.x_min, 0);
        box.y_min = std::max<std::int64_t>(box.y_min, 0);
        if (frame_w > 0) box.x_max = std::min(box.x_max, frame_w);
        if (frame_h > 0) box.y_max = std::min(box.y_max, frame_h);
        if (box.x_min >= box.x_max || box.y_min >= box.y_max) {
            fail(Errc::degenerate_box, "degenerate box for " + where);
        }
        annotation.boxes.push_back(std::move(box));
    }
    return annotation;
}

Annotation parse_boxes_json(const std::string& document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::exception& e) {
        fail(Errc::malformed_document, std::string("cannot parse boxes JSON: ") + e.what());
    }
    if (!doc.is_object()) fail(Errc::malformed_document, "boxes JSON must be an object");
    if (!doc.contains("image_id") || !doc["image_id"].is_string()) fail(Errc::missing_field, "missing 'image_id'");
    if (!doc.contains("boxes") || !doc["boxes"].is_array()) fail(Errc::missing_field, "missing 'boxes' array");

    Annotation annotation;
    annotation.image_id = doc["image_id"].get<std::string>();
    for (const auto& entry : doc["boxes"]) {
        BoundingBox box;
        for (const char* key : {"label", "x_min", "y_min", "x_max", "y_max"}) {
            if (!entry.contains(key)) fail(Errc::missing_field, std::string("box missing '") + key + "'");
        }
        if (!entry["label"].is_string()) fail(Errc::malformed_document, "box 'label' must be a string");
        box.class_label = entry["label"].get<std::string>();
        for (auto [key, target] : {std::pair{"x_min", &box.x_min}, {"y_min", &box.y_min}, {"x_max", &box.x_max},
                                   {"y_max", &box.y_max}}) {
            if (!entry[key].is_number_integer()) fail(Errc::malformed_document, std::string("box '") + key + "' must be an integer");
            *target = entry[key].get<std::int64_t>();
        }
        if (box.x_min < 0 || box.y_min < 0 || box.x_min >= box.x_max || box.y_min >= box.y_max) {
            fail(Errc::degenerate_box, "degenerate box for label '" + box.class_label + "'");
        }
        annotation.boxes.push_back(std::move(box));
    }
    return annotation;
}

Annotation load_annotation(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string ext = path.extension().string();
    try {
        if (ext == ".xml") return parse_voc_annotation(text);
        if (ext == ".json") return parse_boxes_json(text);
    } catch (const Error& e) {
        fail(e.code(), path.string() + ": " + e.what());
    }
    fail(Errc::malformed_document, path.string() + ": unknown annotation extension '" + ext + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Tensor bilinear_resize(const Tensor& src, std::size_t out_h, std::size_t out_w) {
    if (src.rank() != 3) fail(Errc::shape_mismatch, "resize expects (C,H,W), got " + shape_to_string(src.shape()));
    if (out_h == 0 || out_w == 0) fail(Errc::shape_mismatch, "resize target must be positive");
    const std::size_t C = src.extent(0), H = src.extent(1), W = src.extent(2);
    if (out_h == H && out_w == W) return src;

    Tensor out({C, out_h, out_w});
    const double scale_y = static_cast<double>(H) / static_cast<double>(out_h);
    const double scale_x = static_cast<double>(W) / static_cast<double>(out_w);

    std::vector<std::size_t> x0(out_w), x1(out_w);
    std::vector<double> fx(out_w);
    for (std::size_t x = 0; x < out_w; ++x) {
        double sx = (static_cast<double>(x) + 0.5) * scale_x - 0.5;
        sx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
        x0[x] = static_cast<std::size_t>(sx);
        x1[x] = std::min(x0[x] + 1, W - 1);
        fx[x] = sx - static_cast<double>(x0[x]);
    }

    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            double sy = (static_cast<double>(y) + 0.5) * scale_y - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
            const std::size_t y0 = static_cast<std::size_t>(sy);
            const std::size_t y1 = std::min(y0 + 1, H - 1);
            const double fy = sy - static_cast<double>(y0);
            const double* row0 = &src.at3(c, y0, 0);
            const double* row1 = &src.at3(c, y1, 0);
            double* dst = &out.at3(c, y, 0);
            for (std::size_t x = 0; x < out_w; ++x) {
                // lerp in the v0 + f*(v1-v0) form: exact for constant images
                const double top = row0[x0[x]] + fx[x] * (row0[x1[x]] - row0[x0[x]]);
                const double bot = row1[x0[x]] + fx[x] * (row1[x1[x]] - row1[x0[x]]);
                dst[x] = top + fy * (bot - top);
            }
        }
    }
    return out;
}

namespace {

/// Scales, shifts and clips one box; returns false when clipping empties it.
bool transform_box(const BoundingBox& box, double sx, double sy, std::int64_t dx, std::int64_t dy, std::size_t target_h,
                   std::size_t target_w, BoundingBox& out) {
    out = box;
    out.x_min = std::llround(static_cast<double>(box.x_min) * sx) - dx;
    out.x_max = std::llround(static_cast<double>(box.x_max) * sx) - dx;
    out.y_min = std::llround(static_cast<double>(box.y_min) * sy) - dy;
    out.y_max = std::llround(static_cast<double>(box.y_max) * sy) - dy;
    out.x_min = std::clamp<std::int64_t>(out.x_min, 0, static_cast<std::int64_t>(target_w));
    out.x_max = std::clamp<std::int64_t>(out.x_max, 0, static_cast<std::int64_t>(target_w));
    out.y_min = std::clamp<std::int64_t>(out.y_min, 0, static_cast<std::int64_t>(target_h));
    out.y_max = std::clamp<std::int64_t>(out.y_max, 0, static_cast<std::int64_t>(target_h));
    return out.x_min < out.x_max && out.y_min < out.y_max;
}

Tensor crop(const Tensor& src, std::size_t off_y, std::size_t off_x, std::size_t out_h, std::size_t out_w) {
    const std::size_t C = src.extent(0);
    Tensor out({C, out_h, out_w});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < out_h; ++y) {
            const double* src_row = &src.at3(c, y + off_y, off_x);
            double* dst_row = &out.at3(c, y, 0);
            std::copy(src_row, src_row + out_w, dst_row);
        }
    }
    return out;
}

} // namespace

Preprocessed preprocess(const ImageSample& sample, const Annotation& annotation, PreprocessMode mode,
                        std::size_t target_h, std::size_t target_w, bool allow_upscale) {
    if (sample.pixels.rank() != 3) {
        fail(Errc::shape_mismatch, "sample pixels must be (C,H,W), got " + shape_to_string(sample.pixels.shape()));
    }
    const std::size_t H = sample.pixels.extent(1), W = sample.pixels.extent(2);

    Preprocessed result;
    result.annotation.image_id = annotation.image_id;

    double sx = 0.0, sy = 0.0;
    std::int64_t dx = 0, dy = 0;

    if (mode == PreprocessMode::stretch_resize) {
        result.pixels = bilinear_resize(sample.pixels, target_h, target_w);
        sx = static_cast<double>(target_w) / static_cast<double>(W);
        sy = static_cast<double>(target_h) / static_cast<double>(H);
    } else {
        if (!allow_upscale && (H < target_h || W < target_w)) {
            fail(Errc::target_larger_than_image, "image " + std::to_string(W) + "x" + std::to_string(H) +
                                                     " smaller than crop target " + std::to_string(target_w) + "x" +
                                                     std::to_string(target_h) + " and upscaling is disabled");
        }
        // uniform scale until the target is covered, then center-crop
        const double scale = std::max(static_cast<double>(target_h) / static_cast<double>(H),
                                      static_cast<double>(target_w) / static_cast<double>(W));
        const std::size_t scaled_h = std::max<std::size_t>(target_h, static_cast<std::size_t>(std::llround(H * scale)));
        const std::size_t scaled_w = std::max<std::size_t>(target_w, static_cast<std::size_t>(std::llround(W * scale)));
        const Tensor resized = bilinear_resize(sample.pixels, scaled_h, scaled_w);
        const std::size_t off_y = (scaled_h - target_h) / 2;
        const std::size_t off_x = (scaled_w - target_w) / 2;
        result.pixels = crop(resized, off_y, off_x, target_h, target_w);
        sx = static_cast<double>(scaled_w) / static_cast<double>(W);
        sy = static_cast<double>(scaled_h) / static_cast<double>(H);
        dx = static_cast<std::int64_t>(off_x);
        dy = static_cast<std::int64_t>(off_y);
    }

    for (const BoundingBox& box : annotation.boxes) {
        BoundingBox transformed;
        if (transform_box(box, sx, sy, dx, dy, target_h, target_w, transformed)) {
            result.annotation.boxes.push_back(std::move(transformed));
        } else {
            result.dropped.push_back(box);
        }
    }
    return result;
}

Tensor dataset_mean(const std::vector<Tensor>& images) {
    if (images.empty()) fail(Errc::empty_input, "cannot average zero images");
    const Tensor& first = images.front();
    Tensor mean(first.shape());
    for (const Tensor& img : images) {
        if (!img.same_shape(first)) {
            fail(Errc::dimension_mismatch, "image shape " + shape_to_string(img.shape()) + " does not match " +
                                               shape_to_string(first.shape()));
        }
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += img[i];
    }
    const double inv_n = 1.0 / static_cast<double>(images.size());
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] *= inv_n;
    return mean;
}

// ---------------------------------------------------------------------------
// Dataset manifest
// ---------------------------------------------------------------------------

DatasetManifest load_dataset_manifest(const std::filesystem::path& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::invalid_config, "cannot parse " + path.string() + ": " + e.what());
    }
    DatasetManifest manifest;
    for (const char* key : {"images_dir", "annotations_dir", "annotation_format", "classes"}) {
        if (!doc.contains(key)) fail(Errc::invalid_config, path.string() + ": missing '" + std::string(key) + "'");
    }
    const std::filesystem::path base = path.parent_path();
    manifest.images_dir = base / doc["images_dir"].get<std::string>();
    manifest.annotations_dir = base / doc["annotations_dir"].get<std::string>();
    manifest.annotation_format = doc["annotation_format"].get<std::string>();
    if (manifest.annotation_format != "voc-xml" && manifest.annotation_format != "boxes-json") {
        fail(Errc::invalid_config, path.string() + ": annotation_format must be 'voc-xml' or 'boxes-json'");
    }
    for (const auto& c : doc["classes"]) manifest.classes.push_back(c.get<std::string>());
    if (manifest.classes.empty()) fail(Errc::invalid_config, path.string() + ": 'classes' must be non-empty");
    return manifest;
}

DatasetIndex load_dataset(const std::filesystem::path& manifest_path) {
    DatasetIndex index;
    index.manifest = load_dataset_manifest(manifest_path);
    if (!std::filesystem::is_directory(index.manifest.images_dir)) {
        fail(Errc::missing_file, "images directory " + index.manifest.images_dir.string() + " does not exist");
    }
    const std::string ann_ext = index.manifest.annotation_format == "voc-xml" ? ".xml" : ".json";
    for (const auto& entry : std::filesystem::directory_iterator(index.manifest.images_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext != ".png" && ext != ".ppm") continue;
        DatasetItem item;
        item.image_id = entry.path().stem().string();
        item.image_path = entry.path();
        item.annotation_path = index.manifest.annotations_dir / (item.image_id + ann_ext);
        if (!std::filesystem::is_regular_file(item.annotation_path)) {
            fail(Errc::missing_file, "no annotation for image " + item.image_id + " (expected " +
                                         item.annotation_path.string() + ")");
        }
        index.items.push_back(std::move(item));
    }
    if (index.items.empty()) {
        fail(Errc::empty_input, "no images found under " + index.manifest.images_dir.string());
    }
    std::sort(index.items.begin(), index.items.end(),
              [](const DatasetItem& a, const DatasetItem& b) { return a.image_id < b.image_id; });
    return index;
}

} // namespace relprop
