#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "relprop/heatmap.hpp"
#include "relprop/model.hpp"
#include "relprop/tensor.hpp"

namespace relprop {

// ---------------------------------------------------------------------------
// Rules
// ---------------------------------------------------------------------------

enum class RuleKind {
    z,          // proportional decomposition
    epsilon,    // sign-stabilized denominator
    alphabeta,  // separate positive/negative decompositions, beta = 1 - alpha
    flat,       // uniform spread over the receptive field
    zb,         // box-constrained input-layer rule
    wta,        // winner-take-all (max-pooling)
    identity,   // pass-through (ReLU, flatten)
};

struct Rule {
    RuleKind kind = RuleKind::z;
    double epsilon = 1e-2;
    double alpha = 1.0;
    double low = 0.0;
    double high = 1.0;

    static Rule Z() { return {RuleKind::z}; }
    static Rule Epsilon(double eps);
    static Rule AlphaBeta(double alpha);
    static Rule Flat() { return {RuleKind::flat}; }
    static Rule ZB(double low, double high);
    static Rule WinnerTakeAll() { return {RuleKind::wta}; }
    static Rule Identity() { return {RuleKind::identity}; }

    /// Deterministic text form, e.g. "alphabeta(2)"; feeds the config digest.
    std::string canonical() const;

    bool operator==(const Rule& other) const;
};

// ---------------------------------------------------------------------------
// Composite configuration
// ---------------------------------------------------------------------------

struct Selector {
    enum class Kind { all, by_type, by_range };
    Kind kind = Kind::all;
    LayerType type = LayerType::dense; // by_type
    std::size_t first = 0;             // by_range, inclusive
    std::size_t last = 0;              // by_range, inclusive

    bool matches(std::size_t layer_index, LayerType layer_type) const;
};

/// Layer -> rule assignment policy. A preset expands into an ordered list of
/// (selector, rule) entries; explicit overrides take precedence, then the
/// box-constraint request for the first layer, then the flat prefix of the
/// convolutional stack, then the preset's per-type defaults. Resolution is
/// first match wins.
struct CompositeConfig {
    std::string preset = "z"; // "z" | "epsilon" | "alphabeta" | "cmp"
    double alpha = 1.0;
    double epsilon = 1e-2;
    std::size_t flat_n = 0;
    bool flat_all = false;
    std::optional<std::pair<double, double>> zb; // (low, high) for layer 0
    std::vector<std::pair<Selector, Rule>> overrides;

    static CompositeConfig preset_z();
    static CompositeConfig preset_epsilon(double eps);
    static CompositeConfig preset_alphabeta(double alpha);
    static CompositeConfig preset_cmp(double alpha, std::size_t flat_n, double eps = 1e-2);

    static CompositeConfig from_json_text(const std::string& text);
    static CompositeConfig load(const std::filesystem::path& path);
};

/// One resolved rule per layer. Validates the assignment: flat never lands on
/// a dense layer, the box-constrained rule only on layer 0, winner-take-all
/// only on max-pooling; ReLU and flatten always resolve to identity.
std::vector<Rule> resolve_rules(const Model& model, const CompositeConfig& config);

/// SHA-256 hex over (model checksum, class, resolved per-layer rules).
std::string config_digest(const Model& model, std::size_t class_index, const std::vector<Rule>& rules);

// ---------------------------------------------------------------------------
// Decomposition
// ---------------------------------------------------------------------------

/// Inputs of one backward decomposition step: the layer, its recorded input
/// activations, and its linear pre-activations (bias included).
struct DecompositionContext {
    const LayerSpec& layer;
    const Tensor& input_activations;
    const Tensor& output_aggregates;
};

/// Relevance seed at the output: logit[class_index] at its slot, 0 elsewhere.
Tensor init_output_relevance(const ForwardTrace& trace, std::size_t class_index);

Tensor decompose_z(const DecompositionContext& ctx, const Tensor& r_upper);
Tensor decompose_epsilon(const DecompositionContext& ctx, const Tensor& r_upper, double epsilon);
Tensor decompose_alphabeta(const DecompositionContext& ctx, const Tensor& r_upper, double alpha);

/// Spreads each output's relevance uniformly over its receptive field. The
/// uniform count is the full window volume; shares that fall on padding are
/// dropped, so with padding the layer loses exactly the padded share.
Tensor decompose_flat(const DecompositionContext& ctx, const Tensor& r_upper);

Tensor decompose_zb(const DecompositionContext& ctx, const Tensor& r_upper, double low, double high,
                    bool is_first_layer = true);

/// Pooling: winner-take-all routes everything to the window argmax
/// (max-pooling), average pooling decomposes proportionally to the window
/// values, and flat spreads uniformly over the window.
Tensor decompose_pool(const DecompositionContext& ctx, const Tensor& r_upper, const Rule& rule);

// ---------------------------------------------------------------------------
// Attribution
// ---------------------------------------------------------------------------

struct AttributionMap {
    Tensor relevance; // model input shape
    std::size_t class_index = 0;
    double output_logit = 0.0;
    std::string config_digest;
};

/// Full modified backward pass: forward, seed the selected logit, apply the
/// resolved rule of every layer from output to input.
AttributionMap attribute(const Model& model, const Tensor& input, std::size_t class_index,
                         const CompositeConfig& config);

enum class ChannelPoolOrder {
    sum_then_pos, // signed per-pixel channel sum; positive part taken downstream
    pos_then_sum, // per-channel positive part first, then summed
};

/// Projects (C,H,W) relevance to a 2D heatmap.
Heatmap2D pool_channels(const AttributionMap& map, ChannelPoolOrder order = ChannelPoolOrder::sum_then_pos);

} // namespace relprop
