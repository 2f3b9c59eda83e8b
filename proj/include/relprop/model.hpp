#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relprop/tensor.hpp"

namespace relprop {

enum class LayerType { dense, conv2d, maxpool2d, avgpool2d, relu, flatten };

const char* layer_type_name(LayerType type);

/// One layer of a feedforward stack. Weighted layers (dense, conv2d) own
/// their parameters; pooling layers reuse kernel_h/w and stride as the
/// window geometry. Conv padding is explicit per side, in pixels.
struct LayerSpec {
    LayerType type = LayerType::relu;

    // dense
    std::size_t in_features = 0;
    std::size_t out_features = 0;

    // conv2d / pooling
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride_h = 1;
    std::size_t stride_w = 1;
    std::size_t pad_top = 0;
    std::size_t pad_bottom = 0;
    std::size_t pad_left = 0;
    std::size_t pad_right = 0;

    Tensor weights; // dense: [out,in]; conv2d: [outC,inC,kH,kW]
    Tensor bias;    // [out] / [outC]

    bool has_weights() const { return type == LayerType::dense || type == LayerType::conv2d; }
};

struct Shape3 {
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;
};

/// A loaded, shape-validated network. Immutable after load; safe to share
/// across threads.
struct Model {
    Shape3 input_shape;
    std::vector<LayerSpec> layers;
    std::vector<std::string> class_labels;
    std::uint32_t blob_crc32 = 0;

    // output shape of every layer, computed during validation
    std::vector<std::vector<std::size_t>> output_shapes;

    std::size_t class_index(const std::string& label) const; // throws index_out_of_range
};

/// Activations recorded during one forward pass: acts[0] is the network
/// input, acts[i+1] the output of layer i. Layer i's output and layer
/// i+1's input are the same tensor by construction.
struct ForwardTrace {
    std::vector<Tensor> acts;

    const Tensor& input(std::size_t layer) const { return acts[layer]; }
    const Tensor& output(std::size_t layer) const { return acts[layer + 1]; }
    const Tensor& logits() const { return acts.back(); }
    std::size_t layer_count() const { return acts.size() - 1; }
};

/// Reads a manifest (JSON) plus its weight blob (IEEE-754 little-endian
/// float64), validates the layer shape chain and the CRC-32 checksum.
Model load_model(const std::filesystem::path& manifest_path);

/// Shape of `layer` applied to `input_shape`; throws shape_mismatch when the
/// layer cannot consume that shape.
std::vector<std::size_t> layer_output_shape(const LayerSpec& layer, const std::vector<std::size_t>& input_shape);

/// Deterministic forward pass recording every activation.
ForwardTrace forward(const Model& model, const Tensor& input);

/// Analytic d logit[class_index] / d input, same shape as the input.
/// ReLU sub-gradient at 0 is 0; max-pool ties route to the lowest flat index.
Tensor gradient_wrt_input(const Model& model, const ForwardTrace& trace, std::size_t class_index);

double logit(const ForwardTrace& trace, std::size_t class_index);

/// Recomputes the linear pre-activation of a weighted or pooling layer from
/// its input; used to cross-check traces in tests.
Tensor recompute_preactivation(const LayerSpec& layer, const Tensor& input);

/// Index of the window maximum for a max-pool output position, as a flat
/// index into the input tensor. Ties resolve to the lowest flat index. The
/// forward pass, the gradient, and winner-take-all decomposition all share
/// this choice.
std::size_t pool_argmax(const LayerSpec& layer, const Tensor& input, std::size_t c, std::size_t oy, std::size_t ox);

} // namespace relprop
