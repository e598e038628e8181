#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cbt/parameters.hpp"
#include "cbt/tape.hpp"
#include "cbt/tensor.hpp"

namespace cbt {

enum class EncoderKind { mlp, tinyconv };
enum class Activation { tanh, relu };

std::string to_string(EncoderKind k);
std::string to_string(Activation a);
EncoderKind encoder_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

/// Small encoder + projector pair. The trunk maps images to a pooled feature
/// vector; the projector maps that to the embedding the twin loss consumes.
struct EncoderConfig {
    std::array<int, 3> input_shape{3, 32, 32};  // C,H,W
    EncoderKind kind = EncoderKind::mlp;
    std::vector<int> hidden_widths{64, 32};     // mlp: trunk widths; tinyconv: the two conv channel counts
    int embed_dim = 16;
    std::vector<int> projector_widths{32, 32};
    Activation activation = Activation::tanh;
    std::uint64_t init_seed = 0;

    void validate() const;
    int input_size() const { return input_shape[0] * input_shape[1] * input_shape[2]; }
    /// Feature width after the trunk (post-pool for tinyconv).
    int trunk_out_dim() const;

    bool operator==(const EncoderConfig&) const = default;
};

/// Closed-form total parameter count (trunk + projector).
std::int64_t parameter_count(const EncoderConfig& cfg);
std::int64_t trunk_parameter_count(const EncoderConfig& cfg);

/// Deterministic init: weights are normals scaled by 1/sqrt(fan_in), biases
/// zero. Entry order is trunk layers then projector layers, each weight
/// before its bias.
ParameterVector init_params(const EncoderConfig& cfg);

// Tape builders. `images` must be a [B.C.H.W] var matching cfg.input_shape.
Var trunk_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images);   // [B.F]
Var embed_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images);   // [B.D]
/// Per-pixel trunk features at input resolution, for the segmentation head:
/// tinyconv upsamples its stride-4 stage-2 activations; mlp broadcasts its
/// pooled features to every pixel.
Var spatial_features_graph(GradTape& t, const BoundParams& p, const EncoderConfig& cfg, Var images);  // [B.F.H.W]

/// Forward-only embedding of an image batch.
Tensor embed(const ParameterVector& params, const EncoderConfig& cfg, const Tensor& images);

}  // namespace cbt
