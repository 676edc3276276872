#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "evlg/nn.hpp"
#include "evlg/optim.hpp"
#include "evlg/tensor.hpp"

namespace evlg {

// Discrete image tokens in raster order, each in [0, codebook_size).
using VisualTokens = std::vector<int>;

struct QuantizerConfig {
    std::size_t image_side = 32;
    std::size_t reduction_factor = 8;
    std::size_t codebook_size = 64;
    std::size_t code_dim = 16;
    double commitment_weight = 1.0;
    std::size_t hidden_channels = 32;
    static constexpr std::size_t channels = 3;

    // Throws ConfigError.
    void validate() const;
    std::size_t grid_side() const { return image_side / reduction_factor; }
    std::size_t sequence_length() const { return grid_side() * grid_side(); }
};

struct QuantizeResult {
    std::vector<int> ids;  // one per grid cell, batch-major raster order
    Tensor z_emb;          // codebook rows, same shape as the encoder output
};

// Nearest codebook row under squared Euclidean distance, lowest index on ties.
// `encoded` has the code dimension as its last axis.
QuantizeResult quantize(const Tensor& encoded, const Tensor& codebook);

struct VqLossTerms {
    Tensor total;
    double reconstruction = 0.0;
    double codebook_pull = 0.0;  // ||sg[z_emb] - e||^2, moves the encoder
    double code_update = 0.0;    // beta * ||sg[e] - z_emb||^2, moves the codebook
};

// ||x - x_hat||^2 + ||sg[z_emb] - e||^2 + beta * ||sg[e] - z_emb||^2
VqLossTerms vq_loss(const Tensor& x, const Tensor& x_hat, const Tensor& e, const Tensor& z_emb, double beta);

// Strided conv stack: log2(f) stride-2 4x4 convs, then a 3x3 projection to code_dim.
struct Encoder {
    std::vector<Conv2d> down;
    Conv2d project;

    Encoder() = default;
    Encoder(const QuantizerConfig& config, Rng& rng);
    Tensor operator()(const Tensor& images) const;
    ParameterList parameters() const;
};

// Nearest-upsample conv stack mirroring the encoder, sigmoid output in [0, 1].
struct Decoder {
    Conv2d input;
    std::vector<Conv2d> up;
    Conv2d output;

    Decoder() = default;
    Decoder(const QuantizerConfig& config, Rng& rng);
    Tensor operator()(const Tensor& z_emb) const;
    ParameterList parameters() const;
    Decoder clone() const;
};

struct VqForward {
    Tensor encoded;  // e = E(x)
    QuantizeResult quantized;
    Tensor reconstruction;  // G(z_emb) with the straight-through copy
    VqLossTerms loss;
};

class Quantizer {
   public:
    Quantizer() = default;
    Quantizer(const QuantizerConfig& config, std::uint64_t seed);

    const QuantizerConfig& config() const { return config_; }

    // images: [B x H x W x 3] in [0, 1] -> [B x h x w x d]
    Tensor encode(const Tensor& images) const;
    QuantizeResult quantize(const Tensor& encoded) const { return evlg::quantize(encoded, codebook_); }
    // z_emb: [B x h x w x d] -> [B x H x W x 3]
    Tensor decode(const Tensor& z_emb) const { return decode_with(decoder_, z_emb); }
    Tensor decode_with(const Decoder& decoder, const Tensor& z_emb) const;
    // Codebook rows for `ids` arranged as [batch x h x w x d].
    Tensor lookup(std::span<const int> ids, std::size_t batch) const;

    // Full training forward pass with the loss.
    VqForward forward(const Tensor& images) const;

    // No-grad tokenization, one sequence per image.
    std::vector<VisualTokens> tokenize(const Tensor& images) const;

    const Tensor& codebook() const { return codebook_; }
    const Encoder& encoder() const { return encoder_; }
    const Decoder& decoder() const { return decoder_; }

    // Sections: "encoder.*", "decoder.*" (quantizer) and the codebook tensor.
    ParameterList network_parameters() const;
    ParameterList parameters() const;

   private:
    QuantizerConfig config_;
    Encoder encoder_;
    Decoder decoder_;
    Tensor codebook_;
};

// Fraction of codebook rows that no token in `sequences` selects.
double dead_code_fraction(const std::vector<VisualTokens>& sequences, std::size_t codebook_size);

struct VqStepStats {
    double loss = 0.0;
    double reconstruction = 0.0;
    double pixel_mse = 0.0;
};

class VqTrainer {
   public:
    VqTrainer(Quantizer& quantizer, AdamConfig config);

    VqStepStats step(const Tensor& images);
    Adam& optimizer() { return optimizer_; }
    const Adam& optimizer() const { return optimizer_; }

   private:
    Quantizer& quantizer_;
    Adam optimizer_;
};

}  // namespace evlg
