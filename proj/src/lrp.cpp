#include "relprop/lrp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "relprop/io_util.hpp"
#include "relprop/kernels.hpp"

namespace relprop {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Rule
// ---------------------------------------------------------------------------

namespace {

std::string fmt_param(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

Rule Rule::Epsilon(double eps) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
        fail(Errc::non_positive_epsilon, "epsilon must be a positive finite value, got " + fmt_param(eps));
    }
    Rule r{RuleKind::epsilon};
    r.epsilon = eps;
    return r;
}

Rule Rule::AlphaBeta(double alpha) {
    if (!(alpha >= 1.0) || !std::isfinite(alpha)) {
        fail(Errc::invalid_alpha, "alpha must be >= 1, got " + fmt_param(alpha));
    }
    Rule r{RuleKind::alphabeta};
    r.alpha = alpha;
    return r;
}

Rule Rule::ZB(double low, double high) {
    if (!std::isfinite(low) || !std::isfinite(high) || !(low < high)) {
        fail(Errc::bounds_violation, "box bounds require low < high, got [" + fmt_param(low) + ", " + fmt_param(high) + "]");
    }
    Rule r{RuleKind::zb};
    r.low = low;
    r.high = high;
    return r;
}

std::string Rule::canonical() const {
    switch (kind) {
        case RuleKind::z: return "z";
        case RuleKind::epsilon: return "epsilon(" + fmt_param(epsilon) + ")";
        case RuleKind::alphabeta: return "alphabeta(" + fmt_param(alpha) + ")";
        case RuleKind::flat: return "flat";
        case RuleKind::zb: return "zb(" + fmt_param(low) + "," + fmt_param(high) + ")";
        case RuleKind::wta: return "wta";
        case RuleKind::identity: return "identity";
    }
    return "?";
}

bool Rule::operator==(const Rule& other) const { return canonical() == other.canonical(); }

bool Selector::matches(std::size_t layer_index, LayerType layer_type) const {
    switch (kind) {
        case Kind::all: return true;
        case Kind::by_type: return layer_type == type;
        case Kind::by_range: return layer_index >= first && layer_index <= last;
    }
    return false;
}

// ---------------------------------------------------------------------------
// CompositeConfig
// ---------------------------------------------------------------------------

CompositeConfig CompositeConfig::preset_z() { return CompositeConfig{}; }

CompositeConfig CompositeConfig::preset_epsilon(double eps) {
    CompositeConfig c;
    c.preset = "epsilon";
    c.epsilon = eps;
    return c;
}

CompositeConfig CompositeConfig::preset_alphabeta(double alpha) {
    CompositeConfig c;
    c.preset = "alphabeta";
    c.alpha = alpha;
    return c;
}

CompositeConfig CompositeConfig::preset_cmp(double alpha, std::size_t flat_n, double eps) {
    CompositeConfig c;
    c.preset = "cmp";
    c.alpha = alpha;
    c.epsilon = eps;
    c.flat_n = flat_n;
    return c;
}

namespace {

LayerType layer_type_from_name(const std::string& name, const std::string& where) {
    for (LayerType t : {LayerType::dense, LayerType::conv2d, LayerType::maxpool2d, LayerType::avgpool2d, LayerType::relu,
                        LayerType::flatten}) {
        if (name == layer_type_name(t)) return t;
    }
    fail(Errc::invalid_config, "unknown layer type '" + name + "' in " + where);
}

double param_or(const json& params, const char* key, double fallback) {
    if (!params.is_object()) return fallback;
    auto it = params.find(key);
    if (it == params.end()) return fallback;
    if (!it->is_number()) fail(Errc::invalid_config, std::string("parameter '") + key + "' must be a number");
    return it->get<double>();
}

Rule rule_from_json(const std::string& name, const json& params, const CompositeConfig& defaults) {
    if (name == "z") return Rule::Z();
    if (name == "epsilon") return Rule::Epsilon(param_or(params, "epsilon", defaults.epsilon));
    if (name == "alphabeta") return Rule::AlphaBeta(param_or(params, "alpha", defaults.alpha));
    if (name == "flat") return Rule::Flat();
    if (name == "zb") return Rule::ZB(param_or(params, "low", 0.0), param_or(params, "high", 1.0));
    if (name == "wta") return Rule::WinnerTakeAll();
    if (name == "identity") return Rule::Identity();
    fail(Errc::invalid_config, "unknown rule '" + name + "'");
}

} // namespace

CompositeConfig CompositeConfig::from_json_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        fail(Errc::invalid_config, std::string("cannot parse composite config: ") + e.what());
    }
    if (!doc.is_object()) fail(Errc::invalid_config, "composite config must be a JSON object");

    CompositeConfig c;
    if (auto it = doc.find("preset"); it != doc.end()) {
        if (!it->is_string()) fail(Errc::invalid_config, "'preset' must be a string");
        c.preset = it->get<std::string>();
    }
    if (c.preset != "z" && c.preset != "epsilon" && c.preset != "alphabeta" && c.preset != "cmp") {
        fail(Errc::invalid_config, "unknown preset '" + c.preset + "' (expected z, epsilon, alphabeta or cmp)");
    }
    if (auto it = doc.find("alpha"); it != doc.end()) {
        if (!it->is_number()) fail(Errc::invalid_config, "'alpha' must be a number");
        c.alpha = it->get<double>();
    }
    if (auto it = doc.find("epsilon"); it != doc.end()) {
        if (!it->is_number()) fail(Errc::invalid_config, "'epsilon' must be a number");
        c.epsilon = it->get<double>();
    }
    if (auto it = doc.find("flat_n"); it != doc.end()) {
        if (it->is_string()) {
            if (it->get<std::string>() != "all") fail(Errc::invalid_config, "'flat_n' must be an integer or \"all\"");
            c.flat_all = true;
        } else if (it->is_number_integer() && it->get<long long>() >= 0) {
            c.flat_n = it->get<std::size_t>();
        } else {
            fail(Errc::invalid_config, "'flat_n' must be a non-negative integer or \"all\"");
        }
    }
    if (auto it = doc.find("zb"); it != doc.end() && !it->is_null()) {
        if (!it->is_object()) fail(Errc::invalid_config, "'zb' must be an object with 'low' and 'high' or null");
        c.zb = {param_or(*it, "low", 0.0), param_or(*it, "high", 1.0)};
    }
    if (auto it = doc.find("overrides"); it != doc.end()) {
        if (!it->is_array()) fail(Errc::invalid_config, "'overrides' must be an array");
        for (const auto& entry : *it) {
            if (!entry.is_object() || !entry.contains("selector") || !entry.contains("rule")) {
                fail(Errc::invalid_config, "each override needs 'selector' and 'rule'");
            }
            const json& sel = entry["selector"];
            Selector selector;
            if (sel.is_object() && sel.contains("type")) {
                selector.kind = Selector::Kind::by_type;
                selector.type = layer_type_from_name(sel["type"].get<std::string>(), "override selector");
            } else if (sel.is_object() && sel.contains("range")) {
                const json& r = sel["range"];
                if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer() ||
                    r[0].get<long long>() < 0 || r[1].get<long long>() < r[0].get<long long>()) {
                    fail(Errc::invalid_config, "override 'range' must be [first, last] with 0 <= first <= last");
                }
                selector.kind = Selector::Kind::by_range;
                selector.first = r[0].get<std::size_t>();
                selector.last = r[1].get<std::size_t>();
            } else {
                fail(Errc::invalid_config, "override selector must carry 'type' or 'range'");
            }
            if (!entry["rule"].is_string()) fail(Errc::invalid_config, "override 'rule' must be a string");
            const json params = entry.contains("params") ? entry["params"] : json::object();
            c.overrides.emplace_back(selector, rule_from_json(entry["rule"].get<std::string>(), params, c));
        }
    }
    return c;
}

CompositeConfig CompositeConfig::load(const std::filesystem::path& path) {
    try {
        return from_json_text(read_text_file(path));
    } catch (const Error& e) {
        if (e.code() == Errc::invalid_config) fail(Errc::invalid_config, path.string() + ": " + e.what());
        throw;
    }
}

// ---------------------------------------------------------------------------
// Rule resolution
// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void reject(std::size_t layer_index, const std::string& reason) {
    fail(Errc::invalid_assignment, "layer " + std::to_string(layer_index) + ": " + reason);
}

/// Marks the first flat_n layers of the convolutional stack: conv and pool
/// layers count, ReLU is skipped, the first dense or flatten layer ends the
/// stack.
std::vector<bool> flat_prefix(const Model& model, std::size_t flat_n, bool flat_all) {
    std::vector<bool> in_prefix(model.layers.size(), false);
    if (!flat_all && flat_n == 0) return in_prefix;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerType t = model.layers[i].type;
        if (t == LayerType::dense || t == LayerType::flatten) break;
        if (t == LayerType::relu) continue;
        if (flat_all || counted < flat_n) in_prefix[i] = true;
        ++counted;
        if (!flat_all && counted >= flat_n) break;
    }
    return in_prefix;
}

Rule preset_rule(const std::string& preset, LayerType type, double alpha, double epsilon) {
    if (preset == "z") return Rule::Z();
    if (preset == "epsilon") return Rule::Epsilon(epsilon);
    if (preset == "alphabeta") return Rule::AlphaBeta(alpha);
    // cmp: dense layers close to the output get the stabilized rule, the
    // convolutional stack gets the two-branch rule.
    if (type == LayerType::dense) return Rule::Epsilon(epsilon);
    return Rule::AlphaBeta(alpha);
}

/// Maps the requested rule onto what the layer can actually execute, or
/// rejects the combination. Pooling has no weights, so weighted-layer rules
/// degrade to their pooling counterparts: any proportional-family rule on
/// max-pooling becomes winner-take-all, and on average-pooling the two-branch
/// rule becomes plain proportional.
Rule normalize_for_layer(std::size_t index, const LayerSpec& layer, Rule rule) {
    switch (layer.type) {
        case LayerType::relu:
        case LayerType::flatten:
            return Rule::Identity();
        case LayerType::maxpool2d:
            switch (rule.kind) {
                case RuleKind::z:
                case RuleKind::epsilon:
                case RuleKind::alphabeta:
                case RuleKind::wta: return Rule::WinnerTakeAll();
                case RuleKind::flat: return rule;
                case RuleKind::zb: reject(index, "the box-constrained rule needs a weighted layer");
                case RuleKind::identity: reject(index, "identity cannot cross a pooling layer");
            }
            break;
        case LayerType::avgpool2d:
            switch (rule.kind) {
                case RuleKind::alphabeta:
                case RuleKind::z: return Rule::Z();
                case RuleKind::epsilon:
                case RuleKind::flat: return rule;
                case RuleKind::wta: reject(index, "winner-take-all only applies to max-pooling");
                case RuleKind::zb: reject(index, "the box-constrained rule needs a weighted layer");
                case RuleKind::identity: reject(index, "identity cannot cross a pooling layer");
            }
            break;
        case LayerType::dense:
            switch (rule.kind) {
                case RuleKind::flat: reject(index, "flat is unsuitable for dense layers");
                case RuleKind::wta: reject(index, "winner-take-all only applies to max-pooling");
                case RuleKind::identity: reject(index, "identity cannot cross a weighted layer");
                default: break;
            }
            break;
        case LayerType::conv2d:
            switch (rule.kind) {
                case RuleKind::wta: reject(index, "winner-take-all only applies to max-pooling");
                case RuleKind::identity: reject(index, "identity cannot cross a weighted layer");
                default: break;
            }
            break;
    }
    if (rule.kind == RuleKind::zb && index != 0) reject(index, "the box-constrained rule only applies to layer 0");
    return rule;
}

} // namespace

std::vector<Rule> resolve_rules(const Model& model, const CompositeConfig& config) {
    if (config.preset != "z" && config.preset != "epsilon" && config.preset != "alphabeta" && config.preset != "cmp") {
        fail(Errc::invalid_config, "unknown preset '" + config.preset + "'");
    }
    const std::vector<bool> in_flat_prefix = flat_prefix(model, config.flat_n, config.flat_all);

    std::vector<Rule> resolved;
    resolved.reserve(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& layer = model.layers[i];
        if (layer.type == LayerType::relu || layer.type == LayerType::flatten) {
            resolved.push_back(Rule::Identity());
            continue;
        }
        Rule rule{};
        bool overridden = false;
        for (const auto& [selector, r] : config.overrides) {
            if (selector.matches(i, layer.type)) {
                rule = r;
                overridden = true;
                break;
            }
        }
        if (!overridden) {
            if (config.zb && i == 0) {
                rule = Rule::ZB(config.zb->first, config.zb->second);
            } else if (in_flat_prefix[i]) {
                rule = Rule::Flat();
            } else {
                rule = preset_rule(config.preset, layer.type, config.alpha, config.epsilon);
            }
        }
        resolved.push_back(normalize_for_layer(i, layer, rule));
    }
    if (config.zb && !model.layers.empty() && resolved[0].kind != RuleKind::zb &&
        model.layers[0].type != LayerType::dense && model.layers[0].type != LayerType::conv2d) {
        reject(0, "box constraints requested but the first layer has no weights");
    }
    return resolved;
}

// ---------------------------------------------------------------------------
// Config digest
// ---------------------------------------------------------------------------

std::string config_digest(const Model& model, std::size_t class_index, const std::vector<Rule>& rules) {
    std::ostringstream canon;
    char crc_hex[16];
    std::snprintf(crc_hex, sizeof crc_hex, "%08x", model.blob_crc32);
    canon << "model:" << crc_hex << ";class:" << class_index << ";rules:";
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (i) canon << ",";
        canon << i << ":" << rules[i].canonical();
    }
    const std::string text = canon.str();

    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int md_len = 0;
    if (EVP_Digest(text.data(), text.size(), md, &md_len, EVP_sha256(), nullptr) != 1) {
        fail(Errc::io_failure, "SHA-256 digest computation failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(md_len * 2);
    for (unsigned int i = 0; i < md_len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Decomposition helpers
// ---------------------------------------------------------------------------

namespace {

void check_context(const DecompositionContext& ctx, const Tensor& r_upper) {
    const std::vector<std::size_t> out_shape = layer_output_shape(ctx.layer, ctx.input_activations.shape());
    if (r_upper.shape() != out_shape) {
        fail(Errc::shape_mismatch, "upper relevance shape " + shape_to_string(r_upper.shape()) +
                                       " does not match layer output " + shape_to_string(out_shape));
    }
    if (ctx.output_aggregates.shape() != out_shape) {
        fail(Errc::shape_mismatch, "aggregate shape " + shape_to_string(ctx.output_aggregates.shape()) +
                                       " does not match layer output " + shape_to_string(out_shape));
    }
}

void require_weighted(const DecompositionContext& ctx, const char* rule_name) {
    if (!ctx.layer.has_weights()) {
        fail(Errc::unsupported_layer,
             std::string(rule_name) + " rule needs a weighted layer, got " + layer_type_name(ctx.layer.type));
    }
}

/// Scale factor per upper neuron for the proportional family: R_j / z_j with
/// the zero-denominator convention, or R_j / (z_j + eps*sign(z_j)) when
/// stabilized.
double proportional_scale(double r, double z, double eps) {
    if (eps > 0.0) return r / (z + eps * stabilized_sign(z));
    return safe_fraction(r, z);
}

/// z-rule / epsilon-rule core. eps = 0 selects the plain proportional form.
Tensor decompose_proportional(const DecompositionContext& ctx, const Tensor& r_upper, double eps) {
    const auto& k = kernels::active();
    const LayerSpec& layer = ctx.layer;
    const Tensor& in = ctx.input_activations;
    Tensor r_in(in.shape());

    if (layer.type == LayerType::dense) {
        for (std::size_t j = 0; j < layer.out_features; ++j) {
            const double s = proportional_scale(r_upper[j], ctx.output_aggregates[j], eps);
            if (s == 0.0) continue;
            k.mul_axpy(s, layer.weights.data() + j * layer.in_features, in.data(), r_in.data(), layer.in_features);
        }
        return r_in;
    }

    // conv2d: scale each upper position once, then scatter w*x*s over taps.
    const std::size_t H = in.extent(1), W = in.extent(2);
    const std::size_t OH = r_upper.extent(1), OW = r_upper.extent(2);
    Tensor scale(r_upper.shape());
    for (std::size_t i = 0; i < scale.size(); ++i) {
        scale[i] = proportional_scale(r_upper[i], ctx.output_aggregates[i], eps);
    }
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            const double* s_row = &scale.at3(oc, oy, 0);
            for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(layer.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    const double* x_row = &in.at3(ic, static_cast<std::size_t>(iy), 0);
                    double* r_row = &r_in.at3(ic, static_cast<std::size_t>(iy), 0);
                    const double* w_row = &layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w];
                    for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                        const double w = w_row[kx];
                        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(layer.pad_left);
                        if (layer.stride_w == 1) {
                            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                            const std::ptrdiff_t hi =
                                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - shift);
                            if (lo < hi) {
                                k.mul_axpy(w, x_row + lo + shift, s_row + lo, r_row + lo + shift,
                                           static_cast<std::size_t>(hi - lo));
                            }
                        } else {
                            for (std::size_t ox = 0; ox < OW; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                r_row[ix] += w * x_row[ix] * s_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return r_in;
}

} // namespace

// ---------------------------------------------------------------------------
// Decomposition rules
// ---------------------------------------------------------------------------

Tensor init_output_relevance(const ForwardTrace& trace, std::size_t class_index) {
    const Tensor& logits = trace.logits();
    if (class_index >= logits.size()) {
        fail(Errc::index_out_of_range,
             "class index " + std::to_string(class_index) + " out of range for " + std::to_string(logits.size()) + " logits");
    }
    Tensor r(logits.shape());
    r[class_index] = logits[class_index];
    return r;
}

Tensor decompose_z(const DecompositionContext& ctx, const Tensor& r_upper) {
    require_weighted(ctx, "proportional");
    check_context(ctx, r_upper);
    return decompose_proportional(ctx, r_upper, 0.0);
}

Tensor decompose_epsilon(const DecompositionContext& ctx, const Tensor& r_upper, double epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        fail(Errc::non_positive_epsilon, "epsilon must be a positive finite value, got " + fmt_param(epsilon));
    }
    require_weighted(ctx, "stabilized");
    check_context(ctx, r_upper);
    return decompose_proportional(ctx, r_upper, epsilon);
}

Tensor decompose_alphabeta(const DecompositionContext& ctx, const Tensor& r_upper, double alpha) {
    if (!(alpha >= 1.0) || !std::isfinite(alpha)) {
        fail(Errc::invalid_alpha, "alpha must be >= 1, got " + fmt_param(alpha));
    }
    require_weighted(ctx, "two-branch");
    check_context(ctx, r_upper);

    const auto& k = kernels::active();
    const LayerSpec& layer = ctx.layer;
    const Tensor& in = ctx.input_activations;
    const double beta = 1.0 - alpha;
    Tensor r_in(in.shape());

    if (layer.type == LayerType::dense) {
        for (std::size_t j = 0; j < layer.out_features; ++j) {
            const double* w_row = layer.weights.data() + j * layer.in_features;
            kernels::SplitSums z = k.split_dot(in.data(), w_row, layer.in_features);
            const double b = layer.bias[j];
            if (b > 0.0) {
                z.pos += b;
            } else {
                z.neg += b;
            }
            const double spos = alpha * safe_fraction(r_upper[j], z.pos);
            const double sneg = beta * safe_fraction(r_upper[j], z.neg);
            if (spos == 0.0 && sneg == 0.0) continue;
            k.split_axpy(spos, sneg, in.data(), w_row, r_in.data(), layer.in_features);
        }
        return r_in;
    }

    // conv2d, two passes: gather the branch aggregates per output position,
    // then scatter with per-branch scales. Branch membership is decided on
    // the rounded product w*x in both passes, so gather and scatter agree.
    const std::size_t H = in.extent(1), W = in.extent(2);
    const std::size_t OH = r_upper.extent(1), OW = r_upper.extent(2);
    Tensor zpos(r_upper.shape());
    Tensor zneg(r_upper.shape());
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        const double b = layer.bias[oc];
        double* pos_ch = zpos.data() + oc * OH * OW;
        double* neg_ch = zneg.data() + oc * OH * OW;
        std::fill(pos_ch, pos_ch + OH * OW, b > 0.0 ? b : 0.0);
        std::fill(neg_ch, neg_ch + OH * OW, b > 0.0 ? 0.0 : b);
    }

    auto for_each_tap_row = [&](auto&& body) {
        for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
            for (std::size_t oy = 0; oy < OH; ++oy) {
                for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                                  static_cast<std::ptrdiff_t>(layer.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        const double* w_row =
                            &layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w];
                        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                            const std::ptrdiff_t shift =
                                static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(layer.pad_left);
                            body(oc, oy, ic, static_cast<std::size_t>(iy), w_row[kx], shift);
                        }
                    }
                }
            }
        }
    };

    for_each_tap_row([&](std::size_t oc, std::size_t oy, std::size_t ic, std::size_t iy, double w, std::ptrdiff_t shift) {
        const double* x_row = &in.at3(ic, iy, 0);
        double* pos_row = &zpos.at3(oc, oy, 0);
        double* neg_row = &zneg.at3(oc, oy, 0);
        if (layer.stride_w == 1) {
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
            const std::ptrdiff_t hi =
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - shift);
            if (lo < hi) k.split_accum(w, x_row + lo + shift, pos_row + lo, neg_row + lo, static_cast<std::size_t>(hi - lo));
        } else {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                const double p = w * x_row[ix];
                if (p > 0.0) {
                    pos_row[ox] += p;
                } else {
                    neg_row[ox] += p;
                }
            }
        }
    });

    Tensor spos(r_upper.shape());
    Tensor sneg(r_upper.shape());
    for (std::size_t i = 0; i < r_upper.size(); ++i) {
        spos[i] = alpha * safe_fraction(r_upper[i], zpos[i]);
        sneg[i] = beta * safe_fraction(r_upper[i], zneg[i]);
    }

    for_each_tap_row([&](std::size_t oc, std::size_t oy, std::size_t ic, std::size_t iy, double w, std::ptrdiff_t shift) {
        const double* x_row = &in.at3(ic, iy, 0);
        double* r_row = &r_in.at3(ic, iy, 0);
        const double* spos_row = &spos.at3(oc, oy, 0);
        const double* sneg_row = &sneg.at3(oc, oy, 0);
        if (layer.stride_w == 1) {
            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
            const std::ptrdiff_t hi =
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - shift);
            if (lo < hi) {
                k.split_mul_axpy(w, x_row + lo + shift, spos_row + lo, sneg_row + lo, r_row + lo + shift,
                                 static_cast<std::size_t>(hi - lo));
            }
        } else {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                const double p = w * x_row[ix];
                r_row[ix] += p * (p > 0.0 ? spos_row[ox] : sneg_row[ox]);
            }
        }
    });
    return r_in;
}

Tensor decompose_flat(const DecompositionContext& ctx, const Tensor& r_upper) {
    if (ctx.layer.type == LayerType::dense) {
        fail(Errc::unsupported_layer, "flat is unsuitable for dense layers");
    }
    if (ctx.layer.type != LayerType::conv2d) {
        // pooling windows never pad, so the uniform spread conserves exactly
        if (ctx.layer.type != LayerType::maxpool2d && ctx.layer.type != LayerType::avgpool2d) {
            fail(Errc::unsupported_layer,
                 std::string("flat needs a conv or pooling layer, got ") + layer_type_name(ctx.layer.type));
        }
        return decompose_pool(ctx, r_upper, Rule::Flat());
    }
    check_context(ctx, r_upper);

    const auto& k = kernels::active();
    const LayerSpec& layer = ctx.layer;
    const Tensor& in = ctx.input_activations;
    const std::size_t H = in.extent(1), W = in.extent(2);
    const std::size_t OH = r_upper.extent(1), OW = r_upper.extent(2);
    Tensor r_in(in.shape());

    // Uniform share over the full window volume; shares belonging to taps
    // that fall outside the input (padding) are dropped.
    const double inv_count = 1.0 / static_cast<double>(layer.in_channels * layer.kernel_h * layer.kernel_w);
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            const double* r_up_row = &r_upper.at3(oc, oy, 0);
            for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                              static_cast<std::ptrdiff_t>(layer.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    double* r_row = &r_in.at3(ic, static_cast<std::size_t>(iy), 0);
                    for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(layer.pad_left);
                        if (layer.stride_w == 1) {
                            const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
                            const std::ptrdiff_t hi =
                                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(OW), static_cast<std::ptrdiff_t>(W) - shift);
                            if (lo < hi) k.axpy(inv_count, r_up_row + lo, r_row + lo + shift, static_cast<std::size_t>(hi - lo));
                        } else {
                            for (std::size_t ox = 0; ox < OW; ++ox) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w) + shift;
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                                r_row[ix] += inv_count * r_up_row[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    return r_in;
}

Tensor decompose_zb(const DecompositionContext& ctx, const Tensor& r_upper, double low, double high,
                    bool is_first_layer) {
    if (!is_first_layer) fail(Errc::not_first_layer, "the box-constrained rule only applies to the first layer");
    if (!std::isfinite(low) || !std::isfinite(high) || !(low < high)) {
        fail(Errc::bounds_violation, "box bounds require low < high, got [" + fmt_param(low) + ", " + fmt_param(high) + "]");
    }
    require_weighted(ctx, "box-constrained");
    check_context(ctx, r_upper);

    const Tensor& in = ctx.input_activations;
    for (std::size_t i = 0; i < in.size(); ++i) {
        if (in[i] < low || in[i] > high) {
            fail(Errc::bounds_violation, "input value " + fmt_param(in[i]) + " outside the declared box [" + fmt_param(low) +
                                             ", " + fmt_param(high) + "]");
        }
    }

    const auto& k = kernels::active();
    const LayerSpec& layer = ctx.layer;
    Tensor r_in(in.shape());

    if (layer.type == LayerType::dense) {
        for (std::size_t j = 0; j < layer.out_features; ++j) {
            const double* w_row = layer.weights.data() + j * layer.in_features;
            const double denom = k.bounded_dot(in.data(), w_row, low, high, layer.in_features);
            const double c = safe_fraction(r_upper[j], denom);
            if (c == 0.0) continue;
            k.bounded_axpy(c, in.data(), w_row, low, high, r_in.data(), layer.in_features);
        }
        return r_in;
    }

    // conv2d: first-layer windows are small, a direct per-position walk is
    // enough here.
    const std::size_t H = in.extent(1), W = in.extent(2);
    const std::size_t OH = r_upper.extent(1), OW = r_upper.extent(2);
    for (std::size_t oc = 0; oc < layer.out_channels; ++oc) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                double denom = 0.0;
                for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                                  static_cast<std::ptrdiff_t>(layer.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w + kx) -
                                                      static_cast<std::ptrdiff_t>(layer.pad_left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            const double w =
                                layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w + kx];
                            const double wp = w > 0.0 ? w : 0.0;
                            const double wn = w < 0.0 ? w : 0.0;
                            denom += in.at3(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * w - low * wp -
                                     high * wn;
                        }
                    }
                }
                const double c = safe_fraction(r_upper.at3(oc, oy, ox), denom);
                if (c == 0.0) continue;
                for (std::size_t ic = 0; ic < layer.in_channels; ++ic) {
                    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride_h + ky) -
                                                  static_cast<std::ptrdiff_t>(layer.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride_w + kx) -
                                                      static_cast<std::ptrdiff_t>(layer.pad_left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            const double w =
                                layer.weights[((oc * layer.in_channels + ic) * layer.kernel_h + ky) * layer.kernel_w + kx];
                            const double wp = w > 0.0 ? w : 0.0;
                            const double wn = w < 0.0 ? w : 0.0;
                            r_in.at3(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) +=
                                c * (in.at3(ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) * w - low * wp -
                                     high * wn);
                        }
                    }
                }
            }
        }
    }
    return r_in;
}

Tensor decompose_pool(const DecompositionContext& ctx, const Tensor& r_upper, const Rule& rule) {
    const LayerSpec& layer = ctx.layer;
    if (layer.type != LayerType::maxpool2d && layer.type != LayerType::avgpool2d) {
        fail(Errc::unsupported_layer, std::string("pooling decomposition needs a pooling layer, got ") +
                                          layer_type_name(layer.type));
    }
    if (rule.kind != RuleKind::wta && rule.kind != RuleKind::flat && rule.kind != RuleKind::z &&
        rule.kind != RuleKind::epsilon) {
        fail(Errc::unsupported_layer, "pooling layers have no " + rule.canonical() + " decomposition");
    }
    check_context(ctx, r_upper);

    const Tensor& in = ctx.input_activations;
    const std::size_t C = in.extent(0);
    const std::size_t OH = r_upper.extent(1), OW = r_upper.extent(2);
    const std::size_t window = layer.kernel_h * layer.kernel_w;
    Tensor r_in(in.shape());

    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < OH; ++oy) {
            for (std::size_t ox = 0; ox < OW; ++ox) {
                const double r = r_upper.at3(c, oy, ox);
                if (rule.kind == RuleKind::flat) {
                    const double share = r / static_cast<double>(window);
                    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                            r_in.at3(c, oy * layer.stride_h + ky, ox * layer.stride_w + kx) += share;
                        }
                    }
                } else if (layer.type == LayerType::maxpool2d) {
                    r_in[pool_argmax(layer, in, c, oy, ox)] += r;
                } else {
                    // average pooling: proportional to window values, with the
                    // mean (the layer output) as the aggregate
                    const double z = ctx.output_aggregates.at3(c, oy, ox);
                    const double s = rule.kind == RuleKind::epsilon ? proportional_scale(r, z, rule.epsilon)
                                                                    : safe_fraction(r, z);
                    if (s == 0.0) continue;
                    const double s_per = s / static_cast<double>(window);
                    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < layer.kernel_w; ++kx) {
                            r_in.at3(c, oy * layer.stride_h + ky, ox * layer.stride_w + kx) +=
                                s_per * in.at3(c, oy * layer.stride_h + ky, ox * layer.stride_w + kx);
                        }
                    }
                }
            }
        }
    }
    return r_in;
}

// ---------------------------------------------------------------------------
// Attribution
// ---------------------------------------------------------------------------

AttributionMap attribute(const Model& model, const Tensor& input, std::size_t class_index,
                         const CompositeConfig& config) {
    const std::vector<Rule> rules = resolve_rules(model, config);
    const ForwardTrace trace = forward(model, input);
    Tensor r = init_output_relevance(trace, class_index);

    for (std::size_t i = model.layers.size(); i-- > 0;) {
        const LayerSpec& layer = model.layers[i];
        const Rule& rule = rules[i];
        if (rule.kind == RuleKind::identity) {
            if (layer.type == LayerType::flatten) {
                r = Tensor(trace.input(i).shape(), std::vector<double>(r.data(), r.data() + r.size()));
            }
            // ReLU: shapes already match, relevance passes through unchanged
            continue;
        }
        const DecompositionContext ctx{layer, trace.input(i), trace.output(i)};
        switch (rule.kind) {
            case RuleKind::z: r = layer.has_weights() ? decompose_z(ctx, r) : decompose_pool(ctx, r, rule); break;
            case RuleKind::epsilon:
                r = layer.has_weights() ? decompose_epsilon(ctx, r, rule.epsilon) : decompose_pool(ctx, r, rule);
                break;
            case RuleKind::alphabeta: r = decompose_alphabeta(ctx, r, rule.alpha); break;
            case RuleKind::flat: r = decompose_flat(ctx, r); break;
            case RuleKind::zb: r = decompose_zb(ctx, r, rule.low, rule.high, i == 0); break;
            case RuleKind::wta: r = decompose_pool(ctx, r, rule); break;
            case RuleKind::identity: break;
        }
    }

    r.require_finite("attribution");
    AttributionMap map;
    map.relevance = std::move(r);
    map.class_index = class_index;
    map.output_logit = logit(trace, class_index);
    map.config_digest = config_digest(model, class_index, rules);
    return map;
}

Heatmap2D pool_channels(const AttributionMap& map, ChannelPoolOrder order) {
    const Tensor& r = map.relevance;
    if (r.rank() != 3) {
        fail(Errc::shape_mismatch, "channel pooling expects (C,H,W) relevance, got " + shape_to_string(r.shape()));
    }
    const std::size_t C = r.extent(0), H = r.extent(1), W = r.extent(2);
    Tensor out({H, W});
    for (std::size_t c = 0; c < C; ++c) {
        const double* ch = r.data() + c * H * W;
        if (order == ChannelPoolOrder::sum_then_pos) {
            for (std::size_t i = 0; i < H * W; ++i) out[i] += ch[i];
        } else {
            for (std::size_t i = 0; i < H * W; ++i) out[i] += ch[i] > 0.0 ? ch[i] : 0.0;
        }
    }
    return Heatmap2D{std::move(out)};
}

} // namespace relprop
