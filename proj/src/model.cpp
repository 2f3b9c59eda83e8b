#include "relprop/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "relprop/io_util.hpp"
#include "relprop/kernels.hpp"

namespace relprop {

using nlohmann::json;

const char* layer_type_name(LayerType type) {
    switch (type) {
        case LayerType::dense: return "dense";
        case LayerType::conv2d: return "conv2d";
        case LayerType::maxpool2d: return "maxpool2d";
        case LayerType::avgpool2d: return "avgpool2d";
        case LayerType::relu: return "relu";
        case LayerType::flatten: return "flatten";
    }
    return "?";
}

std::size_t Model::class_index(const std::string& label) const {
    for (std::size_t i = 0; i < class_labels.size(); ++i) {
        if (class_labels[i] == label) return i;
    }
    std::ostringstream msg;
    msg << "unknown class '" << label << "', valid labels:";
    for (const auto& l : class_labels) msg << " " << l;
    fail(Errc::index_out_of_range, msg.str());
}

namespace {

std::size_t conv_extent(std::size_t in, std::size_t pad_lo, std::size_t pad_hi, std::size_t k, std::size_t stride,
                        const char* axis) {
    const std::size_t padded = in + pad_lo + pad_hi;
    if (padded < k) fail(Errc::shape_mismatch, std::string("window larger than padded input on ") + axis);
    return (padded - k) / stride + 1;
}

} // namespace

std::vector<std::size_t> layer_output_shape(const LayerSpec& layer, const std::vector<std::size_t>& in) {
    switch (layer.type) {
        case LayerType::dense:
            if (in.size() != 1 || in[0] != layer.in_features) {
                fail(Errc::shape_mismatch, "dense expects rank-1 input of length " + std::to_string(layer.in_features) +
                                               ", got " + shape_to_string(in));
            }
            return {layer.out_features};
        case LayerType::conv2d: {
            if (in.size() != 3 || in[0] != layer.in_channels) {
                fail(Errc::shape_mismatch,
                     "conv2d expects (C,H,W) input with C=" + std::to_string(layer.in_channels) + ", got " + shape_to_string(in));
            }
            const std::size_t oh = conv_extent(in[1], layer.pad_top, layer.pad_bottom, layer.kernel_h, layer.stride_h, "H");
            const std::size_t ow = conv_extent(in[2], layer.pad_left, layer.pad_right, layer.kernel_w, layer.stride_w, "W");
            return {layer.out_channels, oh, ow};
        }
        case LayerType::maxpool2d:
        case LayerType::avgpool2d: {
            if (in.size() != 3) fail(Errc::shape_mismatch, "pooling expects (C,H,W) input, got " + shape_to_string(in));
            const std::size_t oh = conv_extent(in[1], 0, 0, layer.kernel_h, layer.stride_h, "H");
            const std::size_t ow = conv_extent(in[2], 0, 0, layer.kernel_w, layer.stride_w, "W");
            return {in[0], oh, ow};
        }
        case LayerType::relu:
            return in;
        case LayerType::flatten:
            return {shape_volume(in)};
    }
    fail(Errc::unknown_layer_type, "unhandled layer type");
}

// ---------------------------------------------------------------------------
// Manifest loading
// ---------------------------------------------------------------------------

namespace {

const json& require_field(const json& obj, const char* key, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) fail(Errc::invalid_config, "missing field '" + std::string(key) + "' in " + where);
    return *it;
}

std::size_t require_size(const json& obj, const char* key, const std::string& where) {
    const json& v = require_field(obj, key, where);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        fail(Errc::invalid_config, "field '" + std::string(key) + "' in " + where + " must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

std::pair<std::size_t, std::size_t> require_pair(const json& obj, const char* key, const std::string& where,
                                                 std::size_t min_value) {
    const json& v = require_field(obj, key, where);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer()) {
        fail(Errc::invalid_config, "field '" + std::string(key) + "' in " + where + " must be a 2-element integer array");
    }
    const long long a = v[0].get<long long>();
    const long long b = v[1].get<long long>();
    if (a < static_cast<long long>(min_value) || b < static_cast<long long>(min_value)) {
        fail(Errc::invalid_config, "field '" + std::string(key) + "' in " + where + " out of range");
    }
    return {static_cast<std::size_t>(a), static_cast<std::size_t>(b)};
}

std::vector<double> decode_blob(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    if (bytes.size() % 8 != 0) {
        fail(Errc::shape_mismatch, "weight blob " + path + " length " + std::to_string(bytes.size()) + " is not a multiple of 8");
    }
    std::vector<double> values(bytes.size() / 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint64_t u = 0;
        for (std::size_t b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
        values[i] = std::bit_cast<double>(u);
    }
    return values;
}

Tensor slice_params(const std::vector<double>& blob, std::size_t offset, std::vector<std::size_t> shape,
                    const std::string& where) {
    const std::size_t count = shape_volume(shape);
    if (offset > blob.size() || blob.size() - offset < count) {
        fail(Errc::shape_mismatch, where + " declares " + std::to_string(count) + " parameters at offset " +
                                       std::to_string(offset) + " but the blob holds " + std::to_string(blob.size()) +
                                       " values");
    }
    Tensor t(std::move(shape), std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                                   blob.begin() + static_cast<std::ptrdiff_t>(offset + count)));
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!std::isfinite(t[i])) fail(Errc::non_finite_weight, where + " contains a non-finite parameter");
    }
    return t;
}

LayerSpec parse_layer(const json& spec, const std::vector<double>& blob, std::size_t index) {
    const std::string where = "layers[" + std::to_string(index) + "]";
    const json& type_field = require_field(spec, "type", where);
    if (!type_field.is_string()) fail(Errc::invalid_config, "layer type must be a string in " + where);
    const std::string type = type_field.get<std::string>();

    LayerSpec layer;
    if (type == "dense") {
        layer.type = LayerType::dense;
        layer.in_features = require_size(spec, "in_features", where);
        layer.out_features = require_size(spec, "out_features", where);
        if (layer.in_features == 0 || layer.out_features == 0) fail(Errc::invalid_config, "zero-sized dense layer in " + where);
        const std::size_t w_off = require_size(spec, "weight_offset", where);
        const std::size_t b_off = require_size(spec, "bias_offset", where);
        layer.weights = slice_params(blob, w_off, {layer.out_features, layer.in_features}, where + " weights");
        layer.bias = slice_params(blob, b_off, {layer.out_features}, where + " bias");
    } else if (type == "conv2d") {
        layer.type = LayerType::conv2d;
        layer.in_channels = require_size(spec, "in_channels", where);
        layer.out_channels = require_size(spec, "out_channels", where);
        std::tie(layer.kernel_h, layer.kernel_w) = require_pair(spec, "kernel", where, 1);
        std::tie(layer.stride_h, layer.stride_w) = require_pair(spec, "stride", where, 1);
        const json& pad = require_field(spec, "padding", where);
        if (!pad.is_array() || pad.size() != 4) {
            fail(Errc::invalid_config, "field 'padding' in " + where + " must be [top,bottom,left,right]");
        }
        for (const auto& p : pad) {
            if (!p.is_number_integer() || p.get<long long>() < 0) fail(Errc::invalid_config, "negative padding in " + where);
        }
        layer.pad_top = pad[0].get<std::size_t>();
        layer.pad_bottom = pad[1].get<std::size_t>();
        layer.pad_left = pad[2].get<std::size_t>();
        layer.pad_right = pad[3].get<std::size_t>();
        if (layer.in_channels == 0 || layer.out_channels == 0) fail(Errc::invalid_config, "zero-sized conv layer in " + where);
        const std::size_t w_off = require_size(spec, "weight_offset", where);
        const std::size_t b_off = require_size(spec, "bias_offset", where);
        layer.weights =
            slice_params(blob, w_off, {layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w}, where + " kernels");
        layer.bias = slice_params(blob, b_off, {layer.out_channels}, where + " bias");
    } else if (type == "maxpool2d" || type == "avgpool2d") {
        layer.type = type == "maxpool2d" ? LayerType::maxpool2d : LayerType::avgpool2d;
        std::tie(layer.kernel_h, layer.kernel_w) = require_pair(spec, "window", where, 1);
        std::tie(layer.stride_h, layer.stride_w) = require_pair(spec, "stride", where, 1);
    } else if (type == "relu") {
        layer.type = LayerType::relu;
    } else if (type == "flatten") {
        layer.type = LayerType::flatten;
    } else {
        fail(Errc::unknown_layer_type, "layer type '" + type + "' in " + where);
    }
    return layer;
}

} // namespace

Model load_model(const std::filesystem::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        fail(Errc::invalid_config, "cannot parse " + manifest_path.string() + ": " + e.what());
    }

    Model model;
    const json& ishape = require_field(manifest, "input_shape", "manifest");
    if (!ishape.is_array() || ishape.size() != 3) fail(Errc::invalid_config, "input_shape must be [C,H,W]");
    model.input_shape = {ishape[0].get<std::size_t>(), ishape[1].get<std::size_t>(), ishape[2].get<std::size_t>()};
    if (model.input_shape.c == 0 || model.input_shape.h == 0 || model.input_shape.w == 0) {
        fail(Errc::invalid_config, "input_shape extents must be positive");
    }

    for (const auto& label : require_field(manifest, "class_labels", "manifest")) {
        model.class_labels.push_back(label.get<std::string>());
    }
    if (model.class_labels.empty()) fail(Errc::invalid_config, "class_labels must be non-empty");

    const std::string blob_rel = require_field(manifest, "weights_blob", "manifest").get<std::string>();
    const std::filesystem::path blob_path = manifest_path.parent_path() / blob_rel;
    const std::vector<std::uint8_t> blob_bytes = read_binary_file(blob_path);

    model.blob_crc32 = static_cast<std::uint32_t>(
        crc32(crc32(0UL, nullptr, 0), blob_bytes.data(), static_cast<uInt>(blob_bytes.size())));
    if (auto it = manifest.find("checksum"); it != manifest.end()) {
        const std::uint32_t declared = static_cast<std::uint32_t>(std::stoul(it->get<std::string>(), nullptr, 16));
        if (declared != model.blob_crc32) {
            fail(Errc::checksum_mismatch, "blob " + blob_path.string() + " CRC-32 mismatch");
        }
    }

    const std::vector<double> blob = decode_blob(blob_bytes, blob_path.string());
    const json& layers = require_field(manifest, "layers", "manifest");
    if (!layers.is_array() || layers.empty()) fail(Errc::invalid_config, "layers must be a non-empty array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        model.layers.push_back(parse_layer(layers[i], blob, i));
    }

    // Walk the shape chain once; every later forward call relies on it.
    std::vector<std::size_t> shape = {model.input_shape.c, model.input_shape.h, model.input_shape.w};
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        try {
            shape = layer_output_shape(model.layers[i], shape);
        } catch (const Error& e) {
            fail(e.code(), "layers[" + std::to_string(i) + "]: " + e.what());
        }
        model.output_shapes.push_back(shape);
    }
    if (shape.size() != 1 || shape[0] != model.class_labels.size()) {
        fail(Errc::shape_mismatch, "final layer output " + shape_to_string(shape) + " does not match " +
                                       std::to_string(model.class_labels.size()) + " class labels");
    }
    return model;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

void forward_dense(const LayerSpec& layer, const Tensor& in, Tensor& out) {
    const auto& k = kernels::active();
    const double* x = in.data();
    for (std::size_t j = 0; j < layer.out_features; ++j) {
        out[j] = layer.bias[j] + k.dot(layer.weights.data() + j * layer.in_features, x, layer.in_features);
    }
}

void forward_conv(const LayerSpec& layer, const Tensor& in, Tensor& out) {
    const auto& k = kernels::active();
    const std::size_t H = in.extent(1), W = in.extent(2);
    const std::size_t OH = out.extent(1), OW = out.extent(2);
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        double* out_ch = out.data() + oc * OH * OW;
        std::fill(out_ch, out_ch + OH * OW, layer.bias[oc]);
    }
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            double* out_row = &out.at3(oc, oy, 0);
            for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(layer.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const double* in_row = &in.at3(ic, static_cast<std::size_t>(iy), 0);
                    const double* w_row = &layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w];
                    for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                        const double w = w_row[kx];
                        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(layer.pad_left);
                        if (layer.stride_w == 1) {
                            // ix = ox + shift must stay in [0, W)
                            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                            const std::ptrdiff_t hi =
                                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - shift);
                            if (lo < hi) k.axpy(w, in_row + lo + shift, out_row + lo, static_cast<std::size_t>(hi - lo));
                        } else {
                            for (std::size_t ox = 0; ox < OW; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                out_row[ox] += w * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

void forward_maxpool(const LayerSpec& layer, const Tensor& in, Tensor& out) {
    const std::size_t C = in.extent(0), OH = out.extent(1), OW = out.extent(2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                out.at3(c, oy, ox) = in[pool_argmax(layer, in, c, oy, ox)];
            }
        }
    }
}

void forward_avgpool(const LayerSpec& layer, const Tensor& in, Tensor& out) {
    const std::size_t C = in.extent(0), OH = out.extent(1), OW = out.extent(2);
    const double inv_n = 1.0 / static_cast<double>(layer.kernel_h * layer.kernel_w);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                    for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                        acc += in.at3(c, oy * layer.stride_h + ky, ox * layer.stride_w + kx);
                    }
                }
                out.at3(c, oy, ox) = acc * inv_n;
            }
        }
    }
}

Tensor forward_layer(const LayerSpec& layer, const Tensor& in) {
    Tensor out(layer_output_shape(layer, in.shape()));
    switch (layer.type) {
        case LayerType::dense: forward_dense(layer, in, out); break;
        case LayerType::conv2d: forward_conv(layer, in, out); break;
        case LayerType::maxpool2d: forward_maxpool(layer, in, out); break;
        case LayerType::avgpool2d: forward_avgpool(layer, in, out); break;
        case LayerType::relu:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
            break;
        case LayerType::flatten:
            for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i];
            break;
    }
    return out;
}

} // namespace

std::size_t pool_argmax(const LayerSpec& layer, const Tensor& in, std::size_t c, std::size_t oy, std::size_t ox) {
    const std::size_t H = in.extent(1), W = in.extent(2);
    std::size_t best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
        const std::size_t iy = oy * layer.stride_h + ky;
        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
            const std::size_t ix = ox * layer.stride_w + kx;
            const std::size_t flat = (c * H + iy) * W + ix;
            // strict > keeps the lowest flat index on ties
            if (in[flat] > best_v) {
                best_v = in[flat];
                best = flat;
            }
        }
    }
    return best;
}

ForwardTrace forward(const Model& model, const Tensor& input) {
    const std::vector<std::size_t> expected = {model.input_shape.c, model.input_shape.h, model.input_shape.w};
    if (input.shape() != expected) {
        fail(Errc::shape_mismatch,
             "input shape " + shape_to_string(input.shape()) + " does not match model input " + shape_to_string(expected));
    }
    input.require_finite("model input");

    ForwardTrace trace;
    trace.acts.reserve(model.layers.size() + 1);
    trace.acts.push_back(input);
    for (const LayerSpec& layer : model.layers) {
        trace.acts.push_back(forward_layer(layer, trace.acts.back()));
    }
    trace.logits().require_finite("logits");
    return trace;
}

Tensor recompute_preactivation(const LayerSpec& layer, const Tensor& input) { return forward_layer(layer, input); }

double logit(const ForwardTrace& trace, std::size_t class_index) {
    const Tensor& logits = trace.logits();
    if (class_index >= logits.size()) {
        fail(Errc::index_out_of_range,
             "class index " + std::to_string(class_index) + " out of range for " + std::to_string(logits.size()) + " logits");
    }
    return logits[class_index];
}

// ---------------------------------------------------------------------------
// Analytic input gradient
// ---------------------------------------------------------------------------

namespace {

Tensor backward_layer(const LayerSpec& layer, const Tensor& in, const Tensor& g_out) {
    const auto& k = kernels::active();
    Tensor g_in(in.shape());
    switch (layer.type) {
        case LayerType::dense: {
            for (std::size_t j = 0; j < layer.out_features; ++j) {
                k.axpy(g_out[j], layer.weights.data() + j * layer.in_features, g_in.data(), layer.in_features);
            }
            break;
        }
        case LayerType::conv2d: {
            const std::size_t H = in.extent(1), W = in.extent(2);
            const std::size_t OH = g_out.extent(1), OW = g_out.extent(2);
            for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    const double* g_row = &g_out.at3(oc, oy, 0);
                    for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                        for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                                      static_cast<std::ptrdiff_t>(layer.pad_top);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                            double* gi_row = &g_in.at3(ic, static_cast<std::size_t>(iy), 0);
                            const double* w_row =
                                &layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w];
                            for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                                const double w = w_row[kx];
                                const std::ptrdiff_t shift =
                                    static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(layer.pad_left);
                                if (layer.stride_w == 1) {
                                    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                                    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW),
                                                                                       static_cast<std::ptrdiff_t>(W) - shift);
                                    if (lo < hi) k.axpy(w, g_row + lo, gi_row + lo + shift, static_cast<std::size_t>(hi - lo));
                                } else {
                                    for (std::size_t ox = 0; ox < OW; ++ox) {
                                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                        gi_row[ix] += w * g_row[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            break;
        }
        case LayerType::maxpool2d: {
            const std::size_t C = in.extent(0), OH = g_out.extent(1), OW = g_out.extent(2);
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        g_in[pool_argmax(layer, in, c, oy, ox)] += g_out.at3(c, oy, ox);
                    }
                }
            }
            break;
        }
        case LayerType::avgpool2d: {
            const std::size_t C = in.extent(0), OH = g_out.extent(1), OW = g_out.extent(2);
            const double inv_n = 1.0 / static_cast<double>(layer.kernel_h * layer.kernel_w);
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t oy = 0; oy < OH; ++oy) {
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                        const double g = g_out.at3(c, oy, ox) * inv_n;
                        for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                            for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                                g_in.at3(c, oy * layer.stride_h + ky, ox * layer.stride_w + kx) += g;
                            }
                        }
                    }
                }
            }
            break;
        }
        case LayerType::relu:
            // sub-gradient at exactly 0 is 0
            for (std::size_t i = 0; i < in.size(); ++i) g_in[i] = in[i] > 0.0 ? g_out[i] : 0.0;
            break;
        case LayerType::flatten:
            for (std::size_t i = 0; i < in.size(); ++i) g_in[i] = g_out[i];
            break;
    }
    return g_in;
}

} // namespace

Tensor gradient_wrt_input(const Model& model, const ForwardTrace& trace, std::size_t class_index) {
    if (trace.layer_count() != model.layers.size()) {
        fail(Errc::shape_mismatch, "trace does not belong to this model");
    }
    const Tensor& logits = trace.logits();
    if (class_index >= logits.size()) {
        fail(Errc::index_out_of_range,
             "class index " + std::to_string(class_index) + " out of range for " + std::to_string(logits.size()) + " logits");
    }
    Tensor g(logits.shape());
    g[class_index] = 1.0;
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        g = backward_layer(model.layers[i], trace.input(i), g);
    }
    return g;
}

} // namespace relprop
