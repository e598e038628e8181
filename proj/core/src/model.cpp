#include "cbt/model.hpp"

#include <cmath>

#include "cbt/error.hpp"
#include "cbt/rng.hpp"

namespace cbt {

std::string to_string(EncoderKind k) { return k == EncoderKind::mlp ? "mlp" : "tinyconv"; }
std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

EncoderKind encoder_kind_from_string(const std::string& s) {
    if (s == "mlp") return EncoderKind::mlp;
    if (s == "tinyconv") return EncoderKind::tinyconv;
    throw ConfigError("unknown encoder kind '" + s + "' (expected mlp or tinyconv)");
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

void EncoderConfig::validate() const {
    for (int d : input_shape)
        if (d <= 0) throw ConfigError("encoder: input shape dims must be positive");
    if (embed_dim < 2) throw ConfigError("encoder: embed_dim must be >= 2");
    for (int w : hidden_widths)
        if (w <= 0) throw ConfigError("encoder: hidden widths must be positive");
    for (int w : projector_widths)
        if (w <= 0) throw ConfigError("encoder: projector widths must be positive");
    if (kind == EncoderKind::tinyconv && hidden_widths.size() != 2) {
        throw ConfigError("encoder: tinyconv takes exactly two conv channel counts");
    }
}

int EncoderConfig::trunk_out_dim() const {
    if (kind == EncoderKind::tinyconv) return hidden_widths[1];
    return hidden_widths.empty() ? input_size() : hidden_widths.back();
}

namespace {

std::int64_t linear_chain_count(int in, const std::vector<int>& outs) {
    std::int64_t total = 0;
    for (int out : outs) {
        total += static_cast<std::int64_t>(in) * out + out;
        in = out;
    }
    return total;
}

std::vector<int> projector_dims(const EncoderConfig& cfg) {
    std::vector<int> dims = cfg.projector_widths;
    dims.push_back(cfg.embed_dim);
    return dims;
}

std::string layer_name(const char* group, int i, const char* part) {
    return std::string(group) + "." + std::to_string(i) + "." + part;
}

Var activate(GradTape& t, Activation act, Var x) {
    return act == Activation::tanh ? t.tanh(x) : t.relu(x);
}

void check_image_shape(const GradTape& t, const EncoderConfig& cfg, Var images) {
    const Tensor& v = t.value(images);
    if (v.rank() != 4 || v.dim(1) != cfg.input_shape[0] || v.dim(2) != cfg.input_shape[1] ||
        v.dim(3) != cfg.input_shape[2]) {
        throw ConfigError("encoder: image batch " + shape_to_string(v.shape()) +
                          " does not match configured input shape");
    }
}

// Activations of the second conv layer, before pooling.
Var conv_stage2(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images) {
    Var h = t.conv2d(images, p["trunk.0.weight"], p["trunk.0.bias"], 2, 1);
    h = activate(t, cfg.activation, h);
    h = t.conv2d(h, p["trunk.1.weight"], p["trunk.1.bias"], 2, 1);
    return activate(t, cfg.activation, h);
}

}  // namespace

std::int64_t trunk_parameter_count(const EncoderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == EncoderKind::mlp) return linear_chain_count(cfg.input_size(), cfg.hidden_widths);
    const int c_in = cfg.input_shape[0], c1 = cfg.hidden_widths[0], c2 = cfg.hidden_widths[1];
    return static_cast<std::int64_t>(c1) * c_in * 9 + c1 + static_cast<std::int64_t>(c2) * c1 * 9 + c2;
}

std::int64_t parameter_count(const EncoderConfig& cfg) {
    return trunk_parameter_count(cfg) + linear_chain_count(cfg.trunk_out_dim(), projector_dims(cfg));
}

ParameterVector init_params(const EncoderConfig& cfg) {
    cfg.validate();
    ParameterVector params;
    int entry_ordinal = 0;
    auto add_layer = [&](const char* group, int i, Shape w_shape, int fan_in, int out) {
        Tensor w(std::move(w_shape));
        Rng rng(Rng::key({cfg.init_seed, static_cast<std::uint64_t>(entry_ordinal)}));
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::int64_t k = 0; k < w.size(); ++k) w[k] = s * rng.normal();
        params.add(layer_name(group, i, "weight"), std::move(w));
        params.add(layer_name(group, i, "bias"), Tensor({out}));
        ++entry_ordinal;
    };

    if (cfg.kind == EncoderKind::mlp) {
        int in = cfg.input_size();
        for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
            const int out = cfg.hidden_widths[i];
            add_layer("trunk", static_cast<int>(i), {in, out}, in, out);
            in = out;
        }
    } else {
        const int c_in = cfg.input_shape[0], c1 = cfg.hidden_widths[0], c2 = cfg.hidden_widths[1];
        add_layer("trunk", 0, {c1, c_in, 3, 3}, c_in * 9, c1);
        add_layer("trunk", 1, {c2, c1, 3, 3}, c1 * 9, c2);
    }

    int in = cfg.trunk_out_dim();
    const std::vector<int> dims = projector_dims(cfg);
    for (std::size_t j = 0; j < dims.size(); ++j) {
        add_layer("proj", static_cast<int>(j), {in, dims[j]}, in, dims[j]);
        in = dims[j];
    }
    return params;
}

Var trunk_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images) {
    cfg.validate();
    check_image_shape(t, cfg, images);
    const int B = t.value(images).dim(0);
    if (cfg.kind == EncoderKind::tinyconv) return t.global_avg_pool(conv_stage2(t, p, cfg, images));
    Var h = t.reshape(images, {B, cfg.input_size()});
    for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
        h = t.add_row(t.matmul(h, p[layer_name("trunk", static_cast<int>(i), "weight")]),
                      p[layer_name("trunk", static_cast<int>(i), "bias")]);
        h = activate(t, cfg.activation, h);
    }
    return h;
}

Var embed_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images) {
    Var h = trunk_graph(t, p, cfg, images);
    const std::vector<int> dims = projector_dims(cfg);
    for (std::size_t j = 0; j < dims.size(); ++j) {
        h = t.add_row(t.matmul(h, p[layer_name("proj", static_cast<int>(j), "weight")]),
                      p[layer_name("proj", static_cast<int>(j), "bias")]);
        if (j + 1 < dims.size()) h = activate(t, cfg.activation, h);
    }
    return h;
}

Var spatial_features_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images) {
    cfg.validate();
    check_image_shape(t, cfg, images);
    const int B = t.value(images).dim(0);
    const int H = cfg.input_shape[1], W = cfg.input_shape[2];
    if (cfg.kind == EncoderKind::tinyconv) {
        if (H % 4 != 0 || W % 4 != 0) {
            throw ConfigError("encoder: tinyconv spatial features need H and W divisible by 4");
        }
        return t.upsample_nearest(conv_stage2(t, p, cfg, images), 4);
    }
    if (H != W) throw ConfigError("encoder: mlp spatial features need square input");
    Var f = trunk_graph(t, p, cfg, images);
    return t.upsample_nearest(t.reshape(f, {B, cfg.trunk_out_dim(), 1, 1}), H);
}

Tensor embed(const ParameterVector& params, const EncoderConfig& cfg, const Tensor& images) {
    GradTape t;
    BoundParams p = BoundParams::bind(t, params);
    return t.value(embed_graph(t, p, cfg, t.constant(images)));
}

}  // namespace cbt
